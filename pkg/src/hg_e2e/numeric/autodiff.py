"""Gradient extraction and the central finite-difference oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor, backward, no_grad


@dataclass
class GradientReport:
    grads: dict[str, np.ndarray]
    disconnected: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in self.grads.values())))


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> GradientReport:
    """d(loss)/d(param) for every named parameter.

    Parameters the loss does not reach get a zero gradient and are listed in
    ``disconnected``.
    """
    if loss.size != 1:
        raise ShapeError(f"grad() needs a scalar loss, got shape {loss.shape}")
    for p in params.values():
        p.grad = None
    backward(loss)
    grads: dict[str, np.ndarray] = {}
    disconnected: list[str] = []
    for name, p in params.items():
        if p.grad is None:
            grads[name] = np.zeros_like(p.data)
            disconnected.append(name)
        else:
            grads[name] = p.grad
        p.grad = None
    return GradientReport(grads, disconnected)


@dataclass
class FiniteDiffResult:
    max_rel_error: float
    checked: int
    excluded: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    worst: tuple[str, tuple[int, ...]] | None = None

    def __float__(self) -> float:
        return self.max_rel_error


def finite_diff_check(
    f: Callable[[], Tensor],
    point: Mapping[str, Tensor],
    eps: float = 1e-5,
    *,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
    kink_tol: float = 1e-3,
) -> FiniteDiffResult:
    """Compare analytic gradients of the scalar ``f()`` with central differences.

    ``point`` names the tensors to perturb (in place, restored afterwards).
    Error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    Coordinates whose one-sided differences disagree by more than
    ``kink_tol`` are treated as non-differentiable points (e.g. ReLU at 0) and
    excluded.  ``max_coords_per_tensor`` samples coordinates without
    replacement when a tensor is large.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = f()
    if loss.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar function, got shape {loss.shape}")
    report = grad(loss, point)
    base = loss.item()
    rng = rng or np.random.default_rng(0)

    def value() -> float:
        with no_grad():
            out = f().item()
        if not np.isfinite(out):
            raise NonFiniteError("finite-difference evaluation produced a non-finite value")
        return out

    worst_err, worst_at, checked = 0.0, None, 0
    excluded: list[tuple[str, tuple[int, ...]]] = []
    for name, tensor in point.items():
        flat = tensor.data.reshape(-1)
        n = flat.size
        idx = np.arange(n)
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            idx = np.sort(rng.choice(n, size=max_coords_per_tensor, replace=False))
        analytic = report.grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value()
            flat[i] = orig - eps
            f_minus = value()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            fwd = (f_plus - base) / eps
            bwd = (base - f_minus) / eps
            coord = tuple(int(c) for c in np.unravel_index(i, tensor.shape))
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(numeric)):
                excluded.append((name, coord))
                continue
            err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
            checked += 1
            if err > worst_err or worst_at is None:
                worst_err, worst_at = err, (name, coord)
    return FiniteDiffResult(worst_err, checked, excluded, worst_at)
