"""Seed derivation: one run seed, deterministic per-component sub-streams."""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit sub-seed for ``(seed, *keys)``; keys may be str or int."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(str(k).encode("utf-8")))
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
