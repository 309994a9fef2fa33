"""Ablation harness: the five guidance variants, the baselines and the EEG-label sweep.

For every seed one model is pretrained on machine data; each variant is then
finetuned from that same checkpoint on the same human data and evaluated on
the same benchmark routes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import preset as model_preset
from ..evaluate import ExpertDriver, ModelPolicy, RandomPolicy, benchmark_scenarios, run_benchmark, summarize
from ..heads import LossWeights
from ..model import DrivingModel
from ..numeric import derive_seed
from ..simdata.dataset import DataConfig, Dataset, generate_dataset
from ..simdata.eeg import synthesize_eeg_labels
from .train import GUIDANCE, FrameArrays, TrainConfig, evaluate_losses, finetune, pretrain

BASELINES = ("expert", "random")
METRICS = ("DS", "RC", "IS")


@dataclass(frozen=True)
class AblationPreset:
    name: str
    model: str = "toy"
    data: DataConfig = field(default_factory=DataConfig)
    machine_episodes: int = 24
    machine_frames: int | None = None
    human_episodes: int = 6
    val_episodes: int = 2
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(stage="finetune"))
    routes: int = 4
    seeds: tuple[int, ...] = (0, 1, 2)
    variants: tuple[str, ...] = GUIDANCE
    sweep_accuracies: tuple[float, ...] = (0.6, 0.65, 0.7, 1.0)
    sweep_shifts: tuple[int, ...] = (0, 1, 2)
    sweep_guidance: str = "intention"


# Learning rates keep the B/512 scaling and the encoder/decision ratio but with a
# reference batch of 4: at desk scale a few hundred steps must do the work of
# many epochs over millions of frames.
_TOY_PRE = TrainConfig(batch_size=16, epochs=14, warmup_epochs=2, lr_reference_batch=4)
_TOY_FT = TrainConfig(batch_size=16, epochs=20, warmup_epochs=2, lr_reference_batch=4, stage="finetune")

PRESETS = {
    "smoke": AblationPreset(
        "smoke", machine_episodes=2, machine_frames=32, human_episodes=1, val_episodes=1,
        pretrain=TrainConfig(batch_size=8, epochs=1, warmup_epochs=0, steps_per_epoch=2, lr_reference_batch=4),
        finetune=TrainConfig(batch_size=8, epochs=1, warmup_epochs=0, steps_per_epoch=2, lr_reference_batch=4,
                             stage="finetune"),
        routes=2, sweep_accuracies=(0.6, 0.65, 0.7, 0.8, 0.9, 1.0), sweep_shifts=(0, 2)),
    "toy": AblationPreset("toy", pretrain=_TOY_PRE, finetune=_TOY_FT),
    "desk": AblationPreset(
        "desk", model="desk", machine_episodes=40, human_episodes=10, val_episodes=3,
        pretrain=replace(_TOY_PRE, epochs=20), finetune=replace(_TOY_FT, epochs=30), routes=8),
}


def get_preset(name: str) -> AblationPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown ablation preset {name!r}; choose from {sorted(PRESETS)}") from None


def relabel_eeg(ds: Dataset, accuracy: float, shift: int) -> np.ndarray:
    """EEG labels for every frame of a human dataset, re-synthesised per episode from its brake labels."""
    out = []
    for ep in ds.episodes:
        brake = [f.brake for f in ep.frames]
        out.append(synthesize_eeg_labels(brake, accuracy, shift, derive_seed(ds.seed, "eeg", ds.split, ep.route_id)))
    return np.concatenate(out) if out else np.zeros(0)


def _split_human(ds: Dataset, n_train: int) -> tuple[FrameArrays, FrameArrays, Dataset]:
    train = Dataset(ds.split, ds.seed, ds.config, ds.episodes[:n_train])
    val = Dataset(ds.split, ds.seed, ds.config, ds.episodes[n_train:])
    return FrameArrays.from_frames(train.frames), FrameArrays.from_frames(val.frames), train


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std())}


@dataclass
class SeedArtifacts:
    """Everything one seed needs to finetune and evaluate variants."""

    model: DrivingModel
    pretrained: dict[str, np.ndarray]
    human: Dataset
    train: FrameArrays
    val: FrameArrays
    pretrain_log: list[dict]


def prepare_seed(p: AblationPreset, seed: int) -> SeedArtifacts:
    mcfg = model_preset(p.model)
    machine = generate_dataset(derive_seed(seed, "machine-data"), p.machine_episodes, "machine", p.data, mcfg,
                               max_frames=p.machine_frames)
    human = generate_dataset(derive_seed(seed, "human-data"), p.human_episodes + p.val_episodes, "human", p.data, mcfg)
    train, val, train_ds = _split_human(human, p.human_episodes)
    model = DrivingModel(mcfg, seed)
    res = pretrain(model, FrameArrays.from_frames(machine.frames), replace(p.pretrain, seed=seed))
    return SeedArtifacts(model, {k: v.copy() for k, v in model.parameters().values_dict().items()},
                         train_ds, train, val, res.log)


def finetune_variant(art: SeedArtifacts, p: AblationPreset, seed: int, guidance: str,
                     train: FrameArrays | None = None) -> DrivingModel:
    params = art.model.parameters()
    for k, v in art.pretrained.items():
        params[k].data[...] = v
    finetune(art.model, train if train is not None else art.train, replace(p.finetune, seed=seed, guidance=guidance))
    return art.model


VAL_WEIGHTS = LossWeights()


def run_ablation(p: AblationPreset, jobs: int = 1, log=None, sweep: bool = True) -> dict:
    """Table-shaped report: one row per variant plus baselines, DS/RC/IS mean and std over seeds."""
    log = log or (lambda msg: None)
    scenarios = benchmark_scenarios(p.routes, p.data.world)
    per_seed: dict[str, dict[str, dict]] = {}
    val: dict[str, dict[str, list]] = {}
    sweep_rows: dict[tuple[float, int], list[dict]] = {}
    for seed in p.seeds:
        log(f"seed {seed}: generating data and pretraining")
        art = prepare_seed(p, seed)
        rows = {}
        for guidance in p.variants:
            model = finetune_variant(art, p, seed, guidance)
            logs = run_benchmark(ModelPolicy(model, p.data.history, p.data.density_side), scenarios, jobs=jobs)
            rows[guidance] = summarize(logs)
            losses = evaluate_losses(model, art.val, VAL_WEIGHTS)
            for k, v in losses.items():
                val.setdefault(guidance, {}).setdefault(k, []).append(v)
            log(f"seed {seed}: {guidance:9s} DS {rows[guidance]['DS']:.2f} val {json.dumps(losses, sort_keys=True)}")
        rows["expert"] = summarize(run_benchmark(ExpertDriver(), scenarios, jobs=jobs))
        rows["random"] = summarize(run_benchmark(RandomPolicy(seed), scenarios, jobs=jobs))
        per_seed[str(seed)] = rows
        if sweep:
            for acc in p.sweep_accuracies:
                for shift in p.sweep_shifts:
                    train = art.train.with_eeg(relabel_eeg(art.human, acc, shift))
                    model = finetune_variant(art, p, seed, p.sweep_guidance, train)
                    logs = run_benchmark(ModelPolicy(model, p.data.history, p.data.density_side), scenarios, jobs=jobs)
                    val_hb = evaluate_losses(model, art.val, VAL_WEIGHTS).get("hb", float("nan"))
                    sweep_rows.setdefault((acc, shift), []).append({**summarize(logs), "val_hb": val_hb})
                    log(f"seed {seed}: sweep accuracy {acc} shift {shift} DS {sweep_rows[(acc, shift)][-1]['DS']:.2f}")
    names = list(p.variants) + list(BASELINES)
    table = {name: {m: _mean_std([per_seed[s][name][m] for s in per_seed]) for m in METRICS} for name in names}
    report = {
        "preset": p.name,
        "seeds": list(p.seeds),
        "routes": p.routes,
        "table": table,
        "per_seed": per_seed,
        "validation": {g: {k: _mean_std(v) for k, v in comps.items()} for g, comps in val.items()},
        "sweep": [{"accuracy": acc, "shift": shift, "guidance": p.sweep_guidance,
                   **{m: _mean_std([r[m] for r in rs]) for m in (*METRICS, "val_hb")}}
                  for (acc, shift), rs in sorted(sweep_rows.items())],
    }
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def format_table(report: dict) -> str:
    """Plain-text table: one row per variant, DS / RC / IS as mean +- std."""
    lines = [f"{'method':12s} {'DS':>16s} {'RC':>16s} {'IS':>14s}"]
    for name, row in report["table"].items():
        cells = [f"{row[m]['mean']:7.2f} +- {row[m]['std']:5.2f}" for m in ("DS", "RC")]
        cells.append(f"{row['IS']['mean']:5.3f} +- {row['IS']['std']:5.3f}")
        lines.append(f"{name:12s} {cells[0]:>16s} {cells[1]:>16s} {cells[2]:>14s}")
    if report.get("sweep"):
        lines.append("")
        lines.append(f"{'accuracy':>8s} {'shift':>5s} {'DS':>16s} {'val L_hb':>10s}")
        for r in report["sweep"]:
            lines.append(f"{r['accuracy']:8.2f} {r['shift']:5d} {r['DS']['mean']:7.2f} +- {r['DS']['std']:5.2f} "
                         f"{r['val_hb']['mean']:10.4f}")
    return "\n".join(lines) + "\n"
