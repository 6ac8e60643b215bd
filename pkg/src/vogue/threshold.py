"""Binary relevance gate over the two [CTX] summaries."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, DropoutRNG, Tensor
from .nn import Linear, Module

LEAKY_SLOPE = 0.01


class SimilarityThreshold(Module):
    """softmax(W2 · LeakyReLU(W1 · [h_q; h_lf] + b1) + b2), W1: d×2d, W2: 2×d."""

    def __init__(self, d: int, rng: np.random.Generator, dropout: float = 0.1):
        self.d = d
        self.hidden = Linear(2 * d, d, rng)
        self.out = Linear(d, 2, rng)
        self.p = dropout

    def logits(self, h_q_ctx: Tensor, h_lf_ctx: Tensor, train: bool = False,
               rng: DropoutRNG | None = None) -> Tensor:
        if h_q_ctx.shape[-1] != self.d or h_lf_ctx.shape[-1] != self.d:
            raise DimensionError(
                f"threshold: summaries {h_q_ctx.shape} / {h_lf_ctx.shape}, expected dim {self.d}"
            )
        x = ad.concat([h_q_ctx, h_lf_ctx], axis=-1)
        h = ad.leaky_relu(self.hidden(x), LEAKY_SLOPE)
        return self.out(ad.dropout(h, self.p, train, rng))

    def __call__(self, h_q_ctx: Tensor, h_lf_ctx: Tensor, train: bool = False,
                 rng: DropoutRNG | None = None) -> Tensor:
        return ad.softmax_rows(self.logits(h_q_ctx, h_lf_ctx, train, rng))


def classify(h_q_ctx: Tensor, h_lf_ctx: Tensor, params: SimilarityThreshold) -> np.ndarray:
    """Probability pair(s) ``(p0, p1)``; eval mode."""
    return params(h_q_ctx, h_lf_ctx).data


def decide(p) -> bool | np.ndarray:
    """True (use both inputs) iff p1 >= p0."""
    p = np.asarray(p)
    out = p[..., 1] >= p[..., 0]
    return bool(out) if out.ndim == 0 else out
