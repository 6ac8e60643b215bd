"""Task losses and their uncertainty-weighted combination."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def nll(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean over unmasked positions of -log softmax(logits)[target]."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("nll needs at least one target")
    v = logits.shape[-1]
    if targets.min() < 0 or targets.max() >= v:
        raise IndexError(f"target id out of range [0, {v})")
    logp = ad.log_softmax(logits)
    picked = logp[tuple(np.indices(targets.shape)) + (targets,)]
    if mask is None:
        return -ad.tmean(picked)
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count < 1:
        raise ValueError("nll: every position is masked")
    return -(ad.tsum(picked * mask) * (1.0 / count))


def combined_loss(loss_st: Tensor, loss_dec: Tensor, s_st: Tensor, s_dec: Tensor) -> Tensor:
    """exp(-s_st) L_st + s_st + exp(-s_dec) L_dec + s_dec, with s the learned log-variances."""
    return (ad.exp(-s_st) * loss_st + s_st) + (ad.exp(-s_dec) * loss_dec + s_dec)
