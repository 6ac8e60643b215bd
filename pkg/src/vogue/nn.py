"""Small layer library on top of :mod:`vogue.autodiff`."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, DropoutRNG, Tensor

NEG_INF = -1e9


class Module:
    """Parameter container. Tensors with ``requires_grad`` and child modules are discovered
    from instance attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)


class Linear(Module):
    """y = x W^T + b with W stored as (out, in)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = xavier(rng, d_out, d_in)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(
                f"linear: input feature dim {x.shape[-1]} != weight in-dim {self.weight.shape[1]}"
            )
        vector = x.ndim == 1
        if vector:
            x = ad.reshape(x, (1, x.shape[0]))
        y = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            y = y + self.bias
        return ad.reshape(y, y.shape[1:]) if vector else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator, dropout: float = 0.0):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)
        self.p = dropout

    def __call__(self, x: Tensor, train: bool = False, rng: DropoutRNG | None = None) -> Tensor:
        h = ad.dropout(ad.relu(self.inner(x)), self.p, train, rng)
        return self.outer(h)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, T, D) -> (B, H, T, D/H)."""
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, T, Dh) -> (B, T, H*Dh)."""
    b, h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; keys/values may come from a stream of another width."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, d_memory: int | None = None):
        if d_model % heads:
            raise ValueError(f"heads ({heads}) must divide d_model ({d_model})")
        d_memory = d_model if d_memory is None else d_memory
        self.heads = heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_memory, d_model, rng)
        self.v_proj = Linear(d_memory, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, memory: Tensor | None = None, key_mask=None,
                 causal: bool = False) -> Tensor:
        """``key_mask``: (B, Tk) bool, true for real (non-pad) keys."""
        memory = x if memory is None else memory
        q = split_heads(self.q_proj(x), self.heads)
        k = split_heads(self.k_proj(memory), self.heads)
        v = split_heads(self.v_proj(memory), self.heads)
        scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(q.shape[-1]))
        blocked = None
        if key_mask is not None:
            blocked = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        if causal:
            tq, tk = x.shape[1], memory.shape[1]
            fut = np.triu(np.ones((tq, tk), dtype=bool), k=1)[None, None]
            blocked = fut if blocked is None else (blocked | fut)
        if blocked is not None:
            scores = ad.mask_fill(scores, blocked, NEG_INF)
        attn = ad.softmax_rows(scores)
        return self.out_proj(merge_heads(ad.matmul(attn, v)))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
