"""Synthetic driving world, expert, label synthesis and dataset IO."""
from .dataset import (
    DataConfig,
    Dataset,
    DatasetError,
    Episode,
    EpisodeRejected,
    FrameRecord,
    generate_dataset,
    generate_episode,
    read_dataset,
    write_dataset,
)
from .eeg import shift_labels, synthesize_eeg_labels
from .expert import ExpertConfig, ExpertPolicy
from .scenario import EMPTY_WORLD, TOY_WORLD, WORLD_PRESETS, Scenario, ScenarioConfig, build_route, make_scenario
from .world import World

__all__ = [
    "DataConfig", "Dataset", "DatasetError", "Episode", "EpisodeRejected", "FrameRecord",
    "generate_dataset", "generate_episode", "read_dataset", "write_dataset",
    "shift_labels", "synthesize_eeg_labels", "ExpertConfig", "ExpertPolicy",
    "EMPTY_WORLD", "TOY_WORLD", "WORLD_PRESETS", "Scenario", "ScenarioConfig", "build_route",
    "make_scenario", "World",
]
