"""Joint training of the gate and the verbalizer."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .autodiff import DropoutRNG, Tape, Tensor
from .data import Example, Vocabs, build_vocabs, make_batch, split_dev
from .grammar import CorruptionImpossible, LogicalForm, corrupt
from .losses import combined_loss, nll
from .metrics import f1_binary, perplexity
from .model import ModelConfig, VogueModel

__all__ = [
    "Adam", "TrainConfig", "TrainingAborted", "clip_grad_norm", "combined_loss", "nll",
    "noam_lr", "sample_negatives", "train",
]

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Defaults are the full-scale hyperparameters; :meth:`desk` gives the small-machine overrides."""

    epochs: int = 100
    batch_size: int = 256
    warmup: int = 4000
    clip_max_norm: float = 5.0
    seed: int = 0
    dropout: float = 0.1
    d: int = 300
    layers: int = 2
    heads: int = 6
    no_cross_attention: bool = False
    no_multitask: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-9
    dev_fraction: float = 0.1
    min_count: int = 1

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(batch_size=8, warmup=400, d=64, heads=4, epochs=300)
        base.update(overrides)
        return cls(**base)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, layers=self.layers, heads=self.heads, dropout=self.dropout,
                           no_cross_attention=self.no_cross_attention,
                           independent_gate=self.no_multitask)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


def noam_lr(step: int, d_model: int, warmup: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1 or warmup < 1:
        raise ValueError("step and warmup must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


class Adam:
    def __init__(self, params: dict[str, Tensor], d_model: int, warmup: int,
                 betas=(0.9, 0.999), eps: float = 1e-9):
        self.params = params
        self.d_model = d_model
        self.warmup = warmup
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    @property
    def lr(self) -> float:
        return noam_lr(max(self.step_count, 1), self.d_model, self.warmup)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> float:
        self.step_count += 1
        t = self.step_count
        lr = noam_lr(t, self.d_model, self.warmup)
        c1 = 1.0 - self.b1 ** t
        c2 = 1.0 - self.b2 ** t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * p.grad
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr


def sample_negatives(examples: Sequence[Example], pool: Sequence[LogicalForm],
                     rng: np.random.Generator) -> list[LogicalForm]:
    """One corrupted logical form per example; a copy of the gold form when none exists."""
    out = []
    for ex in examples:
        try:
            out.append(corrupt(ex.logical_form, list(pool), rng))
        except CorruptionImpossible:
            log.info("no corruption for %s", ex.logical_form.surface)
            out.append(ex.logical_form)
    return out


@dataclass
class EpochStats:
    epoch: int
    loss_st: float
    loss_dec: float
    loss: float
    lr: float
    f1_st: float
    dev_ppl: float

    def to_dict(self) -> dict:
        return asdict(self)


def dev_perplexity(model: VogueModel, examples: Sequence[Example], batch_size: int = 64) -> float:
    """Teacher-forced perplexity over the first reference, hybrid path with the gold form."""
    total, count = 0.0, 0
    for i in range(0, len(examples), batch_size):
        batch = make_batch(examples[i:i + batch_size], model.vocabs)
        mem = model.memory(batch.q_ids, batch.q_mask, batch.lf_ids, batch.lf_mask)
        logits = model.decoder.decode_train(mem, batch.tgt_in, batch.tgt_in_mask)
        n = int(batch.tgt_mask.sum())
        total += nll(logits, batch.tgt_out, batch.tgt_mask).item() * n
        count += n
    return perplexity(total, count)


@dataclass
class TrainResult:
    model: VogueModel
    stats: list[EpochStats] = field(default_factory=list)
    train_examples: list[Example] = field(default_factory=list)
    dev_examples: list[Example] = field(default_factory=list)


def train(dataset: Sequence[Example], config: TrainConfig, vocabs: Vocabs | None = None,
          on_epoch: Callable[[EpochStats, VogueModel], None] | None = None) -> TrainResult:
    """Train on ``dataset`` (minus a seeded dev split) and return the model with per-epoch stats.

    Under ``no_multitask`` the gate and the verbalizer own disjoint parameters and separate
    optimizers, each clipped on its own; only the multitask run uses the learned weights.
    """
    if not dataset:
        raise ValueError("empty training set")
    train_set, dev_set = split_dev(list(dataset), config.dev_fraction, config.seed)
    if not train_set:
        raise ValueError("dev split left no training records")
    vocabs = vocabs or build_vocabs(train_set, config.min_count)
    model = VogueModel(config.model_config(), vocabs, seed=config.seed)
    dropout_rng = DropoutRNG(config.seed)
    pool = [ex.logical_form for ex in dataset]
    betas = (config.beta1, config.beta2)

    if config.no_multitask:
        optimizers = [Adam(model.gate_parameters(), config.d, config.warmup, betas, config.adam_eps),
                      Adam(model.verbalizer_parameters(), config.d, config.warmup, betas,
                           config.adam_eps)]
    else:
        optimizers = [Adam(model.named_parameters(), config.d, config.warmup, betas,
                           config.adam_eps)]

    result = TrainResult(model, train_examples=train_set, dev_examples=dev_set)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        negatives = sample_negatives(train_set, pool, rng)
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        steps = 0
        preds, golds = [], []
        lr = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = make_batch([train_set[i] for i in idx], vocabs, [negatives[i] for i in idx])
            for opt in optimizers:
                opt.zero_grad()
            with Tape() as tape:
                loss_st, loss_dec, p, g = model.losses(batch, train=True, rng=dropout_rng)
                if config.no_multitask:
                    loss = loss_st + loss_dec
                else:
                    loss = combined_loss(loss_st, loss_dec, model.s_st, model.s_dec)
                if not math.isfinite(loss.item()):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch} step {optimizers[0].step_count + 1}: "
                        f"loss_st={loss_st.item()} loss_dec={loss_dec.item()} "
                        f"lr={optimizers[0].lr:.3g}"
                    )
                tape.backward(loss)
            norms = [clip_grad_norm(list(o.params.values()), config.clip_max_norm)
                     for o in optimizers]
            if not all(math.isfinite(n) for n in norms):
                raise TrainingAborted(f"non-finite gradient norm at epoch {epoch}: {norms}")
            lr = [o.step() for o in optimizers][-1]
            sums += (loss_st.item(), loss_dec.item(), loss.item())
            steps += 1
            preds.extend(p.tolist())
            golds.extend(g.tolist())
        _, _, f1 = f1_binary(preds, golds)
        dev_ppl = dev_perplexity(model, dev_set or train_set)
        mean = sums / steps
        stats = EpochStats(epoch, float(mean[0]), float(mean[1]), float(mean[2]), lr, f1, dev_ppl)
        result.stats.append(stats)
        log.debug("epoch %s", stats.to_dict())
        if on_epoch is not None:
            on_epoch(stats, model)
    return result
