"""Joint question / logical-form attention and the fused decoder memory.

The raw attention drops both the 1/sqrt(d) scale and the softmax::

    A = Q K^T V   over the stacked rows [h_q; h_lf]

which splits into ``A_q = Q_q K_q^T V_q + Q_q K_lf^T V_lf`` and the mirror
image for the logical-form rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, DropoutRNG, Tensor
from .nn import FeedForward, LayerNorm, Linear, Module, merge_heads, split_heads


def stacked_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Q K^T V without scaling or normalization."""
    return ad.matmul(ad.matmul(q, ad.transpose(k)), v)


@dataclass
class Fused:
    memory: Tensor          # (B, Tq + Tlf, d)
    memory_mask: np.ndarray  # (B, Tq + Tlf) bool
    summary: Tensor         # (B, 2d): [h_qca[CTX]; h_lfca[CTX]]


def _as_batch(x: Tensor) -> Tensor:
    return ad.reshape(x, (1,) + x.shape) if x.ndim == 2 else x


def _full_mask(x: Tensor, mask) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:2], dtype=bool)
    return np.asarray(mask, dtype=bool)


def ctx_rows(h: Tensor, mask: np.ndarray) -> Tensor:
    """The last real row of each sequence, which holds [CTX]."""
    last = mask.sum(axis=1) - 1
    return h[np.arange(h.shape[0]), last]


class CrossAttentionFusion(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.1):
        if d % heads:
            raise ValueError(f"heads ({heads}) must divide d ({d})")
        self.d = d
        self.heads = heads
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d, d, rng, bias=False)
        self.w_v = Linear(d, d, rng, bias=False)
        self.w_o = Linear(d, d, rng)
        self.norm_attn = LayerNorm(d)
        self.ff = FeedForward(d, 2 * d, rng, dropout)
        self.norm_ff = LayerNorm(d)
        self.p = dropout

    def raw(self, h_qlf: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Per-head Q K^T V over the stacked streams, heads merged; padded rows carry no key/value."""
        q = self.w_q(h_qlf)
        k = self.w_k(h_qlf)
        v = self.w_v(h_qlf)
        if mask is not None:
            keep = np.asarray(mask, dtype=np.float64)[..., None]
            k, v = k * keep, v * keep
        if self.heads == 1:
            return stacked_attention(q, k, v)
        out = stacked_attention(split_heads(q, self.heads), split_heads(k, self.heads),
                                split_heads(v, self.heads))
        return merge_heads(out)

    def __call__(self, h_q: Tensor, h_lf: Tensor, q_mask=None, lf_mask=None,
                 train: bool = False, rng: DropoutRNG | None = None) -> tuple[Tensor, Tensor]:
        """Returns ``(h_qca, h_lfca)`` with the input row counts."""
        h_q, h_lf = _as_batch(h_q), _as_batch(h_lf)
        if h_q.shape[-1] != self.d or h_lf.shape[-1] != self.d:
            raise DimensionError(
                f"cross-attention: feature dims {h_q.shape[-1]} / {h_lf.shape[-1]} != {self.d}"
            )
        if h_q.shape[0] != h_lf.shape[0]:
            raise DimensionError(f"cross-attention: batch sizes {h_q.shape[0]} != {h_lf.shape[0]}")
        tq = h_q.shape[1]
        mask = np.concatenate([_full_mask(h_q, q_mask), _full_mask(h_lf, lf_mask)], axis=1)
        h = ad.concat([h_q, h_lf], axis=1)
        a = self.w_o(self.raw(h, mask))
        x = self.norm_attn(h + ad.dropout(a, self.p, train, rng))
        x = self.norm_ff(x + ad.dropout(self.ff(x, train, rng), self.p, train, rng))
        return x[:, :tq], x[:, tq:]


def fuse(h_qca: Tensor, h_lfca: Tensor, q_mask=None, lf_mask=None) -> Fused:
    """Row-stacked decoder memory plus the 2d feature concatenation of the [CTX] rows."""
    h_qca, h_lfca = _as_batch(h_qca), _as_batch(h_lfca)
    qm, lm = _full_mask(h_qca, q_mask), _full_mask(h_lfca, lf_mask)
    memory = ad.concat([h_qca, h_lfca], axis=1)
    summary = ad.concat([ctx_rows(h_qca, qm), ctx_rows(h_lfca, lm)], axis=-1)
    return Fused(memory, np.concatenate([qm, lm], axis=1), summary)


def cross_attend(h_q: Tensor, h_lf: Tensor, params: CrossAttentionFusion, q_mask=None,
                 lf_mask=None, train: bool = False, rng: DropoutRNG | None = None):
    return params(h_q, h_lf, q_mask, lf_mask, train, rng)


def hybrid_fuse(h_q, h_lf, params: CrossAttentionFusion | None, q_mask=None, lf_mask=None,
                train: bool = False, rng: DropoutRNG | None = None) -> Fused:
    """``params=None`` skips cross-attention and concatenates the encoder outputs directly."""
    if params is None:
        return fuse(h_q, h_lf, q_mask, lf_mask)
    h_qca, h_lfca = params(h_q, h_lf, q_mask, lf_mask, train, rng)
    return fuse(h_qca, h_lfca, q_mask, lf_mask)


def question_only_fuse(h_q, params: CrossAttentionFusion | None, q_mask=None,
                       train: bool = False, rng: DropoutRNG | None = None) -> Fused:
    """Same path as :func:`hybrid_fuse` with the question copied into the logical-form slot."""
    return hybrid_fuse(h_q, h_q, params, q_mask, q_mask, train, rng)
