import dataclasses

import numpy as np
import pytest

from hg_e2e.config import TOY
from hg_e2e.simdata import DataConfig, generate_dataset
from hg_e2e.trainer import ablation


@pytest.fixture(scope="module")
def human():
    ds = generate_dataset(4, 2, "human", DataConfig(), TOY)
    assert len(ds.episodes) == 2
    return ds


def test_unknown_preset():
    with pytest.raises(ValueError, match="smoke"):
        ablation.get_preset("huge")


def test_presets_cover_the_sweep_range():
    for p in ablation.PRESETS.values():
        assert min(p.sweep_accuracies) == 0.6 and max(p.sweep_accuracies) == 1.0
        assert set(p.variants) == {"none", "eye", "intention", "both", "fake"}


def test_relabel_perfect_accuracy_is_the_brake_signal(human):
    brake = np.array([f.brake for f in human.frames])
    np.testing.assert_array_equal(ablation.relabel_eeg(human, 1.0, 0), brake)


def test_relabel_is_seeded_per_episode(human):
    a = ablation.relabel_eeg(human, 0.65, 1)
    np.testing.assert_array_equal(a, ablation.relabel_eeg(human, 0.65, 1))
    first = len(human.episodes[0].frames)
    only_second = dataclasses.replace(human, episodes=human.episodes[1:])
    np.testing.assert_array_equal(ablation.relabel_eeg(only_second, 0.65, 1), a[first:])


def test_format_table_rows():
    row = {m: {"mean": 1.0, "std": 0.5} for m in ablation.METRICS}
    report = {"table": {"none": row, "expert": row},
              "sweep": [{"accuracy": 0.6, "shift": 2, "DS": {"mean": 3.0, "std": 0.1},
                         "val_hb": {"mean": 0.7, "std": 0.0}}]}
    lines = ablation.format_table(report).splitlines()
    assert lines[1].split()[0] == "none" and lines[2].split()[0] == "expert"
    assert "1.00 +-  0.50" in lines[1]
    assert lines[-1].split()[:2] == ["0.60", "2"]
