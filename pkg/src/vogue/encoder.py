"""Two independent transformer encoder stacks, one for the question and one for the logical form."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, DropoutRNG, Tensor
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention, sinusoidal_positions


class EncoderLayer(Module):
    """Pre-norm block: x + SA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float):
        self.norm_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, 2 * d, rng, dropout)
        self.p = dropout

    def __call__(self, x: Tensor, mask=None, train: bool = False,
                 rng: DropoutRNG | None = None) -> Tensor:
        x = x + ad.dropout(self.attn(self.norm_attn(x), key_mask=mask), self.p, train, rng)
        return x + ad.dropout(self.ff(self.norm_ff(x), train, rng), self.p, train, rng)


class Encoder(Module):
    def __init__(self, d: int, layers: int, heads: int, rng: np.random.Generator, dropout: float = 0.1):
        self.d = d
        self.p = dropout
        self.layers = [EncoderLayer(d, heads, rng, dropout) for _ in range(layers)]
        self.norm_out = LayerNorm(d)

    def __call__(self, x: Tensor, mask=None, train: bool = False,
                 rng: DropoutRNG | None = None) -> Tensor:
        """``x``: (B, T, d) or (T, d) embeddings; ``mask``: (B, T) true on real tokens."""
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        if x.shape[-1] != self.d:
            raise DimensionError(f"encoder: input dim {x.shape[-1]} != model dim {self.d}")
        t = x.shape[1]
        h = x * math.sqrt(self.d) + sinusoidal_positions(t, self.d)
        h = ad.dropout(h, self.p, train, rng)
        for layer in self.layers:
            h = layer(h, mask, train, rng)
        h = self.norm_out(h)
        return ad.reshape(h, h.shape[1:]) if single else h


class DualEncoder(Module):
    """Parameters are never shared between the two streams."""

    def __init__(self, d: int, layers: int, heads: int, rng: np.random.Generator, dropout: float = 0.1):
        self.question = Encoder(d, layers, heads, rng, dropout)
        self.logical_form = Encoder(d, layers, heads, rng, dropout)

    def encode_question(self, x_q, mask=None, train=False, rng=None) -> Tensor:
        return self.question(x_q, mask, train, rng)

    def encode_lf(self, x_lf, mask=None, train=False, rng=None) -> Tensor:
        return self.logical_form(x_lf, mask, train, rng)

    def __call__(self, x_q: Tensor, x_lf: Tensor, q_mask=None, lf_mask=None,
                 train: bool = False, rng: DropoutRNG | None = None) -> tuple[Tensor, Tensor]:
        return (self.question(x_q, q_mask, train, rng),
                self.logical_form(x_lf, lf_mask, train, rng))


def encode(x_q: Tensor, x_lf: Tensor, params: DualEncoder, train: bool = False,
           rng: DropoutRNG | None = None) -> tuple[Tensor, Tensor]:
    return params(x_q, x_lf, train=train, rng=rng)
