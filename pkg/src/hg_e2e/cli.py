"""Command-line entry point: ``hg-e2e <subcommand>`` (or ``python3 -m hg_e2e``).

Settings resolve in three layers: built-in defaults, then a JSON ``--config``
file, then explicit flags.  The resolved RunConfig is written next to every
output as ``run_config.json``; feeding that file back with the same seed
reproduces the primary outputs byte for byte.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import PRESETS as MODEL_PRESETS
from .config import ModelConfig, preset as model_preset
from .evaluate import (ExpertDriver, ModelPolicy, RandomPolicy, StaticPolicy, benchmark_scenarios, dumps_report,
                       metrics_report, run_benchmark)
from .model import DrivingModel
from .numeric import CheckpointError
from .simdata.dataset import SPLITS, DataConfig, DatasetError, generate_dataset, read_dataset, write_dataset
from .simdata.scenario import WORLD_PRESETS
from .trainer import GUIDANCE, FrameArrays, TrainConfig, TrainingError, finetune, load_model, pretrain
from .trainer import ablation

COMMANDS = ("gen-data", "pretrain", "finetune", "evaluate", "ablate", "gradcheck", "inspect")
POLICIES = ("expert", "random", "static", "model")
GRADCHECK_TOL = 1e-4


class CliError(Exception):
    """Bad input or flag combination; the message says what to change."""


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = ""
    jobs: int = 1
    preset: str = "toy"  # model dims; the ablation preset for ``ablate``
    data: dict = field(default_factory=dict)  # DataConfig overrides
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    split: str = "machine"
    episodes: int = 4
    max_frames: int | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    policy: str = "expert"
    guidance: str = "none"
    routes: int | None = None
    n_seeds: int = 3
    sweep: bool = True
    module: str = "all"
    dims: str = "toy"
    episode: int = 0
    frame: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def data_config(self) -> DataConfig:
        try:
            return DataConfig(**self.data)
        except TypeError as err:
            raise CliError(f"bad 'data' section: {err}") from None

    def train_config(self, stage: str) -> TrainConfig:
        d = {"seed": self.seed, **self.train, "stage": stage}
        if stage == "finetune":
            d["guidance"] = self.guidance
        try:
            return TrainConfig.from_dict(d)
        except (TypeError, ValueError) as err:
            raise CliError(f"bad 'train' section: {err}") from None

    def model_config(self) -> ModelConfig:
        try:
            return model_preset(self.preset)
        except ValueError as err:
            raise CliError(str(err)) from None


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"command"}


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file {p} does not exist")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise CliError(f"config file {p} is not valid JSON: {err}") from None
    if not isinstance(d, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    d.pop("command", None)  # a saved run_config.json can be fed straight back
    unknown = set(d) - CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(CONFIG_KEYS)}")
    return d


def resolve(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags"""
    values = load_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "world", None) is not None:
        values["data"] = {**values.get("data", {}), "world": args.world}
    cfg = RunConfig(args.command, **values)
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name in ("data", "train") and not isinstance(v, dict):
            raise CliError(f"config key {f.name!r} must be a JSON object")
        if f.name in ("seed", "jobs", "episodes", "n_seeds", "episode", "frame") and not isinstance(v, int):
            raise CliError(f"config key {f.name!r} must be an integer, got {v!r}")
    if not cfg.out:
        root = os.environ.get("HG_E2E_OUT") or "hg_e2e_out"
        cfg.out = str(Path(root) / args.command)
    if cfg.jobs < 1:
        raise CliError("--jobs must be >= 1")
    world = cfg.data_config().world
    if world not in WORLD_PRESETS:
        raise CliError(f"unknown world {world!r}; choose from {sorted(WORLD_PRESETS)}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    common.add_argument("--seed", type=int, help="root seed for every random choice (default 0)")
    common.add_argument("--out", help="output directory (default $HG_E2E_OUT/<command>)")
    common.add_argument("--jobs", type=int, help="worker processes for rollouts (default 1)")

    ap = argparse.ArgumentParser(prog="hg-e2e", description="Guidance-augmented end-to-end driving on a synthetic world")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate an expert dataset")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--episodes", type=int)
    p.add_argument("--max-frames", dest="max_frames", type=int)
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), help="sensor/model dims")
    p.add_argument("--world", choices=sorted(WORLD_PRESETS))

    p = sub.add_parser("pretrain", parents=[common], help="stage 1: train everything on machine data")
    p.add_argument("--dataset", required=False, help="dataset directory from gen-data")
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS))

    p = sub.add_parser("finetune", parents=[common], help="stage 2: train the decision part on human data")
    p.add_argument("--dataset", help="human-split dataset directory")
    p.add_argument("--checkpoint", help="pretrained checkpoint")
    p.add_argument("--guidance", choices=GUIDANCE)
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS))

    p = sub.add_parser("evaluate", parents=[common], help="closed-loop benchmark of one policy")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--checkpoint", help="model checkpoint (for --policy model)")
    p.add_argument("--routes", type=int)
    p.add_argument("--world", choices=sorted(WORLD_PRESETS))
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS))

    p = sub.add_parser("ablate", parents=[common], help="all guidance variants plus baselines and the EEG sweep")
    p.add_argument("--preset", choices=sorted(ablation.PRESETS))
    p.add_argument("--routes", type=int, help="override the preset's benchmark size")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, help="seeds used: seed, seed+1, ... (default 3)")
    p.add_argument("--no-sweep", dest="sweep", action="store_const", const=False, help="skip the EEG-label sweep")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of analytic gradients")
    p.add_argument("--module", choices=(*gradcheck.MODULES, "all"))
    p.add_argument("--dims", choices=sorted(MODEL_PRESETS))

    p = sub.add_parser("inspect", parents=[common], help="print one frame of a dataset")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--episode", type=int)
    p.add_argument("--frame", type=int)
    return ap


# -- helpers -----------------------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return out


def _load_dataset(path: str | None, flag: str = "--dataset"):
    if not path:
        raise CliError(f"{flag} is required (a directory written by 'hg-e2e gen-data')")
    try:
        return read_dataset(path)
    except DatasetError as err:
        raise CliError(f"cannot read dataset: {err}") from None


def _check_dims(ds, cfg: RunConfig, mcfg: ModelConfig) -> None:
    want = json.loads(json.dumps(mcfg.to_dict()))
    if ds.config.get("model") != want:
        match = [name for name, c in MODEL_PRESETS.items() if json.loads(json.dumps(c.to_dict())) == ds.config.get("model")]
        hint = f"; it matches --preset {match[0]}" if match else ""
        raise CliError(f"dataset was generated for different model dims than --preset {cfg.preset}{hint}")


def _load_model(mcfg: ModelConfig, path: str | None, seed: int) -> DrivingModel:
    if not path:
        raise CliError("--checkpoint is required here")
    model = DrivingModel(mcfg, seed)
    try:
        return load_model(model, path)
    except FileNotFoundError:
        raise CliError(f"checkpoint {path} does not exist") from None
    except CheckpointError as err:
        raise CliError(f"cannot load checkpoint {path}: {err} (does --preset match the one used to train it?)") from None


# -- subcommands -------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    if cfg.split not in SPLITS:
        raise CliError(f"--split must be one of {SPLITS}")
    if cfg.episodes < 1:
        raise CliError("--episodes must be >= 1")
    out = _out_dir(cfg)
    ds = generate_dataset(cfg.seed, cfg.episodes, cfg.split, cfg.data_config(), cfg.model_config(),
                          max_frames=cfg.max_frames)
    write_dataset(ds, out / "dataset")
    print(f"wrote {len(ds)} frames in {len(ds.episodes)} episodes to {out / 'dataset'}")
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    tcfg = cfg.train_config("pretrain")
    ds = _load_dataset(cfg.dataset)
    _check_dims(ds, cfg, mcfg)
    out = _out_dir(cfg)
    res = pretrain(DrivingModel(mcfg, cfg.seed), FrameArrays.from_frames(ds.frames), tcfg, out)
    print(f"pretrained {tcfg.epochs} epochs, final loss {res.log[-1]['total']:.4f}; checkpoint {res.checkpoints[-1]}")
    return 0


def cmd_finetune(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    tcfg = cfg.train_config("finetune")
    ds = _load_dataset(cfg.dataset)
    _check_dims(ds, cfg, mcfg)
    model = _load_model(mcfg, cfg.checkpoint, cfg.seed)
    out = _out_dir(cfg)
    try:
        res = finetune(model, FrameArrays.from_frames(ds.frames), tcfg, out)
    except ValueError as err:
        raise CliError(str(err)) from None
    print(f"finetuned ({tcfg.guidance}) {tcfg.epochs} epochs, final loss {res.log[-1]['total']:.4f}; "
          f"checkpoint {res.checkpoints[-1]}")
    return 0


def make_policy(cfg: RunConfig):
    if cfg.policy == "expert":
        return ExpertDriver()
    if cfg.policy == "random":
        return RandomPolicy(cfg.seed)
    if cfg.policy == "static":
        return StaticPolicy()
    if cfg.policy == "model":
        data = cfg.data_config()
        return ModelPolicy(_load_model(cfg.model_config(), cfg.checkpoint, cfg.seed), data.history, data.density_side)
    raise CliError(f"--policy must be one of {POLICIES}")


def cmd_evaluate(cfg: RunConfig) -> int:
    if cfg.checkpoint and cfg.policy != "model":
        raise CliError("--checkpoint only applies to --policy model")
    routes = 4 if cfg.routes is None else cfg.routes
    if routes < 1:
        raise CliError("--routes must be >= 1")
    policy = make_policy(cfg)
    out = _out_dir(cfg)
    logs = run_benchmark(policy, benchmark_scenarios(routes, cfg.data_config().world), jobs=cfg.jobs)
    report = metrics_report({cfg.seed: logs}, cfg.policy)
    (out / "metrics.json").write_text(dumps_report(report))
    agg = report["aggregate"]
    print(f"{cfg.policy}: DS {agg['DS']['mean']:.2f}  RC {agg['RC']['mean']:.2f}  IS {agg['IS']['mean']:.3f}"
          f"  over {routes} routes")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    try:
        p = ablation.get_preset(cfg.preset)
    except ValueError as err:
        raise CliError(str(err)) from None
    if cfg.n_seeds < 1:
        raise CliError("--n-seeds must be >= 1")
    p = dataclasses.replace(p, seeds=tuple(cfg.seed + k for k in range(cfg.n_seeds)))
    if cfg.routes is not None:
        p = dataclasses.replace(p, routes=cfg.routes)
    out = _out_dir(cfg)
    t0 = time.monotonic()
    report = ablation.run_ablation(p, jobs=cfg.jobs, sweep=cfg.sweep,
                                   log=lambda m: print(f"[{time.monotonic() - t0:7.1f}s] {m}", flush=True))
    (out / "report.json").write_text(ablation.dumps_report(report))
    table = ablation.format_table(report)
    (out / "table.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    try:
        errors = gradcheck.run(cfg.module, cfg.dims, cfg.seed)
    except ValueError as err:
        raise CliError(str(err)) from None
    out = _out_dir(cfg)
    (out / "gradcheck.json").write_text(json.dumps(errors, indent=1, sort_keys=True) + "\n")
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:32s} {err:.3e} {'ok' if err < GRADCHECK_TOL else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return 0 if worst < GRADCHECK_TOL else 1


def _stats(a: np.ndarray) -> str:
    return f"shape {tuple(a.shape)} min {a.min():.4g} max {a.max():.4g} mean {a.mean():.4g}"


def describe_frame(f) -> str:
    lines = [f"timestamp {f.timestamp:.2f} s  speed {f.speed:.2f} m/s"]
    for name in ("image", "bev"):
        lines.append(f"{name:9s} {_stats(getattr(f, name))}")
    lines.append(f"history   {np.round(f.history, 3).tolist()}")
    lines.append(f"goal      {np.round(f.goal, 3).tolist()}")
    lines.append(f"waypoints {np.round(f.waypoints, 3).tolist()}")
    occupied = np.argwhere(f.density[..., 0] > 0.5)
    lines.append(f"density   shape {tuple(f.density.shape)}, {len(occupied)} occupied cells")
    for i, j in occupied:
        lines.append(f"  cell ({i},{j}) {np.round(f.density[i, j, 1:], 3).tolist()}")
    lines.append(f"traffic   {f.traffic.tolist()}  (red light, stop sign, junction)")
    if f.gaze is None:
        lines.append("gaze      none (machine split)")
    else:
        g = f.gaze
        r, c = np.unravel_index(int(np.argmax(g)), g.shape)
        p = g[g > 0] / g.sum()
        entropy = float(-(p * np.log(p)).sum())  # of the map normalised to unit mass
        cov = float(np.mean(g > 0.5 * g.max()))
        lines.append(f"gaze      shape {tuple(g.shape)} peak {g.max():.4g} at ({r},{c}) mass {g.sum():.3f} "
                     f"entropy {entropy:.3f} nats ({entropy / np.log(g.size):.2f} of uniform), "
                     f"{cov:.1%} of pixels above half peak")
    lines.append(f"eeg       {f.eeg}")
    lines.append(f"brake     {f.brake}")
    return "\n".join(lines)


def cmd_inspect(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg.dataset)
    if not 0 <= cfg.episode < len(ds.episodes):
        raise CliError(f"--episode must be in [0, {len(ds.episodes) - 1}]")
    ep = ds.episodes[cfg.episode]
    if not 0 <= cfg.frame < len(ep.frames):
        raise CliError(f"--frame must be in [0, {len(ep.frames) - 1}] for episode {cfg.episode}")
    print(f"dataset {cfg.dataset}: split {ds.split}, seed {ds.seed}, {len(ds.episodes)} episodes, {len(ds)} frames")
    print(f"episode {cfg.episode} ({ep.route_id}), frame {cfg.frame} of {len(ep.frames)}")
    print(describe_frame(ep.frames[cfg.frame]))
    return 0


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return HANDLERS[cfg.command](cfg)
    except (CliError, TrainingError) as err:
        print(f"hg-e2e {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
