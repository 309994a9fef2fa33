"""Deterministic float64 tensor arithmetic with reverse-mode differentiation."""
from . import ops
from .autodiff import FiniteDiffResult, GradientReport, finite_diff_check, grad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    Conv2d,
    ConvTranspose2d,
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    ParameterSet,
    parameter,
)
from .rng import derive_seed, make_rng
from .tensor import NonFiniteError, ShapeError, Tensor, backward, no_grad

__all__ = [
    "ops", "Tensor", "ShapeError", "NonFiniteError", "backward", "no_grad",
    "grad", "GradientReport", "finite_diff_check", "FiniteDiffResult",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "Module", "ParameterSet", "parameter", "Linear", "LayerNorm", "MultiHeadAttention",
    "FeedForward", "EncoderLayer", "DecoderLayer", "Conv2d", "ConvTranspose2d", "GRUCell",
    "derive_seed", "make_rng",
]
