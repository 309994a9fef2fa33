"""Finite-difference gradient checks for each trainable block at a given config."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig, preset
from .decision import DecisionTransformer
from .heads import (
    DensityHead,
    EyeHead,
    IntentionHead,
    LossWeights,
    TrafficHead,
    WaypointHead,
    density_loss,
    eye_loss,
    intention_loss,
    total_loss,
    traffic_loss,
    waypoint_loss,
)
from .numeric import Tensor, finite_diff_check, make_rng
from .perception import MBTBlock, PerceptionEncoder

MODULES = ("mbt", "encoder", "decoder", "heads")


def _check(loss_fn, params, inputs=(), coords=4, seed=0):
    point = dict(params.items())
    for i, t in enumerate(inputs):
        point[f"input{i}"] = t
    res = finite_diff_check(loss_fn, point, 1e-5, max_coords_per_tensor=coords,
                            rng=np.random.default_rng(seed))
    return res.max_rel_error


def _probe(rng, shape):
    return Tensor(rng.normal(size=shape))


def check_mbt(cfg: ModelConfig, seed=0, coords=4) -> dict[str, float]:
    rng = make_rng(seed, "gradcheck", "mbt")
    img_shape = cfg.image_stage_shapes()[0]
    bev_shape = cfg.bev_stage_shapes()[0]
    block = MBTBlock(img_shape, bev_shape, cfg, 0, rng)
    img = Tensor(rng.normal(size=(2,) + img_shape), requires_grad=True)
    bev = Tensor(rng.normal(size=(2,) + bev_shape), requires_grad=True)
    w = _probe(rng, (2,) + bev_shape)

    def f():
        return (block(img, bev) * w).sum()
    return {"mbt_attention": _check(f, block.parameters(), (img, bev), coords, seed)}


def check_encoder(cfg: ModelConfig, seed=0, coords=3) -> dict[str, float]:
    rng = make_rng(seed, "gradcheck", "encoder")
    enc = PerceptionEncoder(cfg, rng)
    s = cfg.sensor
    img = Tensor(rng.normal(size=(1, s.image_channels, s.image_height, s.image_width)))
    bev = Tensor(rng.normal(size=(1, s.bev_channels, s.bev_extent, s.bev_extent)))
    probe = None

    def f():
        nonlocal probe
        z = enc(img, bev).tokens
        if probe is None:
            probe = _probe(rng, z.shape)
        return (z * probe).sum()
    return {"fused_encoder": _check(f, enc.parameters(), (), coords, seed)}


def check_decoder(cfg: ModelConfig, seed=0, coords=4) -> dict[str, float]:
    rng = make_rng(seed, "gradcheck", "decoder")
    dec = DecisionTransformer(cfg, rng)
    z = Tensor(rng.normal(size=(2, 5, cfg.d_model)), requires_grad=True)
    hist = rng.normal(size=(2, cfg.history, 2))
    probe = _probe(rng, (2, dec.layout.total, cfg.d_model))

    def f():
        return (dec(z, hist).embeddings * probe).sum()
    return {"decoder": _check(f, dec.parameters(), (z,), coords, seed)}


def check_heads(cfg: ModelConfig, seed=0, coords=6) -> dict[str, float]:
    rng = make_rng(seed, "gradcheck", "heads")
    d, b = cfg.d_model, 2
    w = LossWeights()
    out = {}

    wp = WaypointHead(d, rng, cfg.waypoint_scale)
    emb = Tensor(rng.normal(size=(b, max(cfg.history, 1), d)), requires_grad=True)
    hist, goal = rng.normal(size=(b, cfg.history, 2)), rng.normal(size=(b, 2)) * 10
    gt = rng.normal(size=(b, 3, 2)) * 3
    out["waypoint"] = _check(lambda: waypoint_loss(wp(emb, hist, goal), gt), wp.parameters(), (emb,), coords, seed)

    r = cfg.density_side
    dh = DensityHead(d, r, rng)
    emb = Tensor(rng.normal(size=(b, r * r, d)), requires_grad=True)
    gt = np.concatenate([(rng.uniform(size=(b, r, r, 1)) < 0.4).astype(float),
                         rng.normal(size=(b, r, r, 6))], axis=-1)
    out["density"] = _check(lambda: density_loss(dh(emb), gt), dh.parameters(), (emb,), coords, seed)

    th = TrafficHead(d, rng)
    emb = Tensor(rng.normal(size=(b, 1, d)), requires_grad=True)
    gt = (rng.uniform(size=(b, 3)) < 0.5).astype(float)
    out["traffic"] = _check(lambda: traffic_loss(th(emb), gt, w), th.parameters(), (emb,), coords, seed)

    gh, gw = cfg.eye_grid()
    eh = EyeHead(d, (gh, gw), rng, cfg.eye_downsample)
    emb = Tensor(rng.normal(size=(b, gh * gw, d)), requires_grad=True)
    gt = rng.uniform(size=(b, cfg.sensor.image_height, cfg.sensor.image_width))
    out["eye"] = _check(lambda: eye_loss(eh(emb), gt), eh.parameters(), (emb,), coords, seed)

    ih = IntentionHead(d, rng)
    emb = Tensor(rng.normal(size=(b, 1, d)), requires_grad=True)
    eeg, brake = np.array([1.0, 0.0]), np.array([1.0, 1.0])
    out["intention"] = _check(lambda: intention_loss(ih(emb), eeg, brake, w), ih.parameters(), (emb,), coords, seed)

    comps_params = {}
    for name, mod in (("tf", th), ("hb", ih)):
        for k, v in mod.parameters().items():
            comps_params[f"{name}.{k}"] = v
    emb_t = Tensor(rng.normal(size=(b, 1, d)))
    tgt = (rng.uniform(size=(b, 3)) < 0.5).astype(float)

    def tot():
        return total_loss({"tf": traffic_loss(th(emb_t), tgt, w),
                           "hb": intention_loss(ih(emb_t), eeg, brake, w)}, w)
    out["total_loss"] = _check(tot, comps_params, (), coords, seed)
    return out


CHECKS = {"mbt": check_mbt, "encoder": check_encoder, "decoder": check_decoder, "heads": check_heads}


def run(module: str = "all", dims: str | ModelConfig = "toy", seed: int = 0) -> dict[str, float]:
    """Max relative error per block; ``module`` is one of MODULES or ``all``."""
    cfg = preset(dims) if isinstance(dims, str) else dims
    names = MODULES if module == "all" else (module,)
    out: dict[str, float] = {}
    for name in names:
        if name not in CHECKS:
            raise ValueError(f"unknown module {name!r}; choose from {', '.join(MODULES)} or all")
        out.update({k: float(v) for k, v in CHECKS[name](cfg, seed).items()})
    return out
