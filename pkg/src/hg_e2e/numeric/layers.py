"""Parameterised building blocks: linear, norm, attention, conv, GRU."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


class ParameterSet(OrderedDict):
    """Ordered ``name -> Tensor`` map over every trainable tensor of a model."""

    def __setitem__(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        if not isinstance(value, Tensor):
            raise TypeError(f"parameter {name!r} must be a Tensor")
        super().__setitem__(name, value)

    def values_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def num_values(self) -> int:
        return int(sum(v.size for v in self.values()))

    def subset(self, prefixes) -> "ParameterSet":
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        out = ParameterSet()
        for k, v in self.items():
            if k.startswith(tuple(prefixes)):
                out[k] = v
        return out


class Module:
    """Parameters and child modules are discovered from instance attributes in
    assignment order, which fixes parameter naming and iteration order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> ParameterSet:
        ps = ParameterSet()
        for k, v in self.named_parameters():
            ps[k] = v
        return ps

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(_uniform(rng, (in_dim, out_dim), in_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear expects last dim {self.in_dim}, got input shape {x.shape}")
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate W_Q, W_K, W_V and output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kv_dim: int | None = None):
        if dim <= 0 or heads <= 0 or dim % heads:
            raise ValueError(f"attention dim {dim} must be positive and divisible by heads {heads}")
        kv_dim = kv_dim or dim
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(kv_dim, dim, rng)
        self.w_v = Linear(kv_dim, dim, rng)
        self.w_o = Linear(dim, dim, rng)
        self.heads = heads
        self.dim = dim
        self._last_weights: np.ndarray | None = None

    @property
    def last_weights(self) -> np.ndarray | None:
        """Attention weights of the most recent call, shape (B, heads, Nq, Nk)."""
        return self._last_weights

    def _split(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def forward(self, query, key=None, value=None):
        key = query if key is None else key
        value = key if value is None else value
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key))
        v = self._split(self.w_v(value))
        weights = attention_weights(q, k)
        self._last_weights = weights.data
        out = weights @ v
        b, h, n, dh = out.shape
        out = out.transpose(0, 2, 1, 3).reshape(b, n, h * dh)
        return self.w_o(out)


def attention_weights(q, k):
    """softmax(q k^T / sqrt(D)) over the key axis."""
    depth = q.shape[-1]
    if depth == 0:
        raise ValueError("attention depth D must be positive")
    scores = (q @ ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(depth))
    return ops.softmax(scores, axis=-1)


def scaled_dot_attention(q, k, v):
    return attention_weights(q, k) @ v


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ff_mult: int = 2):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim, rng)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h)
        return x + self.ff(self.norm2(x))


class DecoderLayer(Module):
    """Pre-norm block: self-attention over queries, cross-attention into memory, feed-forward."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ff_mult: int = 2):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm3 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim, rng)

    def forward(self, x, memory):
        h = self.norm1(x)
        x = x + self.self_attn(h)
        x = x + self.cross_attn(self.norm2(x), memory)
        return x + self.ff(self.norm3(x))


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        fan_in = in_ch * kernel * kernel
        self.weight = parameter(_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = parameter(np.zeros(out_ch))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        self.weight = parameter(_uniform(rng, (in_ch, out_ch, kernel, kernel), in_ch))
        self.bias = parameter(np.zeros(out_ch))
        self.stride = stride

    def forward(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride)


class GRUCell(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.w_ih = parameter(_uniform(rng, (in_dim, 3 * hidden), hidden))
        self.w_hh = parameter(_uniform(rng, (hidden, 3 * hidden), hidden))
        self.b_ih = parameter(np.zeros(3 * hidden))
        self.b_hh = parameter(np.zeros(3 * hidden))
        self.hidden = hidden

    def forward(self, x, h):
        return ops.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)
