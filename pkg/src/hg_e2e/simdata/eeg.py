"""Emulated EEG intention labels: a noisy, possibly time-skewed copy of the brake signal."""
from __future__ import annotations

import numpy as np

from ..numeric import make_rng


def shift_labels(labels, shift_frames: int) -> np.ndarray:
    """Delay (positive) or advance (negative) a 0/1 sequence, zero-filling the gap."""
    x = np.asarray(labels, dtype=float)
    out = np.zeros_like(x)
    n = len(x)
    k = int(shift_frames)
    if k >= 0:
        out[k:] = x[: max(n - k, 0)]
    else:
        out[: max(n + k, 0)] = x[-k:]
    return out


def synthesize_eeg_labels(brake_labels, accuracy: float, shift_frames: int = 0, seed: int = 0) -> np.ndarray:
    """Shift by ``shift_frames`` then flip each label independently with probability 1 - accuracy."""
    if not 0.5 < accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in (0.5, 1], got {accuracy}")
    x = np.asarray(brake_labels, dtype=float)
    if x.size and not np.all((x == 0) | (x == 1)):
        raise ValueError("brake labels must be 0/1")
    shifted = shift_labels(x, shift_frames)
    flips = make_rng(seed, "eeg").uniform(size=shifted.shape) < (1.0 - accuracy)
    return np.where(flips, 1.0 - shifted, shifted)
