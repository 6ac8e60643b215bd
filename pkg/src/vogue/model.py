"""The full verbalizer: embeddings, dual encoder, relevance gate, fusion and decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutRNG, Tensor
from .data import Batch, Vocabs
from .decoder import HybridDecoder
from .encoder import DualEncoder
from .losses import nll
from .fusion import CrossAttentionFusion, Fused, ctx_rows, hybrid_fuse, question_only_fuse
from .nn import Module
from .text import init_embeddings
from .threshold import SimilarityThreshold


@dataclass
class ModelConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    dropout: float = 0.1
    no_cross_attention: bool = False
    # one encoder pair per task, so the gate and the verbalizer can be trained independently
    independent_gate: bool = False
    share_embeddings: bool = False
    tie_decoder_embeddings: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class InputEncoder(Module):
    """Embedding tables plus the two encoder stacks."""

    def __init__(self, cfg: ModelConfig, vocabs: Vocabs, rng: np.random.Generator):
        self.q_table = init_embeddings(len(vocabs.question), cfg.d, rng)
        if cfg.share_embeddings:
            self.lf_table = None
        else:
            self.lf_table = init_embeddings(len(vocabs.logical_form), cfg.d, rng)
        self.encoder = DualEncoder(cfg.d, cfg.layers, cfg.heads, rng, cfg.dropout)

    def question(self, ids, mask, train=False, rng=None) -> Tensor:
        x = ad.embedding_lookup(ids, self.q_table)
        return self.encoder.encode_question(x, mask, train, rng)

    def logical_form(self, ids, mask, train=False, rng=None) -> Tensor:
        table = self.q_table if self.lf_table is None else self.lf_table
        x = ad.embedding_lookup(ids, table)
        return self.encoder.encode_lf(x, mask, train, rng)


class VogueModel(Module):
    def __init__(self, cfg: ModelConfig, vocabs: Vocabs, seed: int = 0):
        if cfg.share_embeddings and vocabs.question.tokens != vocabs.logical_form.tokens:
            raise ValueError("share_embeddings needs one vocabulary for questions and logical forms")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.vocabs = vocabs
        self.inputs = InputEncoder(cfg, vocabs, rng)
        self.threshold = SimilarityThreshold(cfg.d, rng, cfg.dropout)
        self.fusion = None if cfg.no_cross_attention else CrossAttentionFusion(
            cfg.d, cfg.heads, rng, cfg.dropout)
        self.decoder = HybridDecoder(cfg.d, vocabs.decoder, cfg.layers, cfg.heads, rng,
                                     cfg.dropout, cfg.tie_decoder_embeddings)
        self.gate_inputs = InputEncoder(cfg, vocabs, rng) if cfg.independent_gate else None
        self.s_st = Tensor(np.zeros(()), requires_grad=True)
        self.s_dec = Tensor(np.zeros(()), requires_grad=True)

    # parameter groups -------------------------------------------------------

    def gate_parameters(self) -> dict[str, Tensor]:
        enc = self.gate_inputs if self.gate_inputs is not None else self.inputs
        prefix = "gate_inputs." if self.gate_inputs is not None else "inputs."
        out = enc.named_parameters(prefix)
        out.update(self.threshold.named_parameters("threshold."))
        return out

    def verbalizer_parameters(self) -> dict[str, Tensor]:
        out = self.inputs.named_parameters("inputs.")
        if self.fusion is not None:
            out.update(self.fusion.named_parameters("fusion."))
        out.update(self.decoder.named_parameters("decoder."))
        return out

    # forward pieces ---------------------------------------------------------

    def gate_logits(self, q_ids, q_mask, lf_ids, lf_mask, train=False, rng=None,
                    h_q: Tensor | None = None) -> Tensor:
        enc = self.gate_inputs if self.gate_inputs is not None else self.inputs
        if h_q is None or self.gate_inputs is not None:
            h_q = enc.question(q_ids, q_mask, train, rng)
        h_lf = enc.logical_form(lf_ids, lf_mask, train, rng)
        return self.threshold.logits(ctx_rows(h_q, q_mask), ctx_rows(h_lf, lf_mask), train, rng)

    def gate_probs(self, q_ids, q_mask, lf_ids, lf_mask) -> np.ndarray:
        return ad.softmax_rows(self.gate_logits(q_ids, q_mask, lf_ids, lf_mask)).data

    def fused(self, h_q, q_mask, h_lf=None, lf_mask=None, train=False, rng=None) -> Fused:
        if h_lf is None:
            return question_only_fuse(h_q, self.fusion, q_mask, train, rng)
        return hybrid_fuse(h_q, h_lf, self.fusion, q_mask, lf_mask, train, rng)

    def memory(self, q_ids, q_mask, lf_ids=None, lf_mask=None, train=False, rng=None) -> Fused:
        """Decoder memory; without ``lf_ids`` the question-only path is taken."""
        h_q = self.inputs.question(q_ids, q_mask, train, rng)
        if lf_ids is None:
            return self.fused(h_q, q_mask, train=train, rng=rng)
        h_lf = self.inputs.logical_form(lf_ids, lf_mask, train, rng)
        return self.fused(h_q, q_mask, h_lf, lf_mask, train, rng)

    def losses(self, batch: Batch, train: bool = False, rng: DropoutRNG | None = None):
        """Threshold NLL over gold (label 1) and corrupted (label 0) pairs, and decoder NLL.

        The decoder is taught on both the hybrid path with the gold logical form and the
        question-only path, since the gate may route a record to either at inference.
        Returns ``(loss_st, loss_dec, gate_predictions, gate_labels)``.
        """
        b = batch.size
        h_q = self.inputs.question(batch.q_ids, batch.q_mask, train, rng)
        h_lf = self.inputs.logical_form(batch.lf_ids, batch.lf_mask, train, rng)

        pos = self.gate_logits(batch.q_ids, batch.q_mask, batch.lf_ids, batch.lf_mask, train,
                               rng, h_q=h_q)
        neg = self.gate_logits(batch.q_ids, batch.q_mask, batch.neg_ids, batch.neg_mask, train,
                               rng, h_q=h_q)
        logits_st = ad.concat([pos, neg], axis=0)
        labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(b, dtype=np.int64)])
        loss_st = nll(logits_st, labels)
        preds = logits_st.data[:, 1] >= logits_st.data[:, 0]

        hybrid = self.fused(h_q, batch.q_mask, h_lf, batch.lf_mask, train, rng)
        q_only = self.fused(h_q, batch.q_mask, train=train, rng=rng)
        mem = _stack_fused(hybrid, q_only)
        tgt_in = np.concatenate([batch.tgt_in, batch.tgt_in])
        tgt_in_mask = np.concatenate([batch.tgt_in_mask, batch.tgt_in_mask])
        logits = self.decoder.decode_train(mem, tgt_in, tgt_in_mask, train, rng)
        tgt_out = np.concatenate([batch.tgt_out, batch.tgt_out])
        tgt_mask = np.concatenate([batch.tgt_mask, batch.tgt_mask])
        loss_dec = nll(logits, tgt_out, tgt_mask)
        return loss_st, loss_dec, preds, labels.astype(bool)


def _stack_fused(a: Fused, b: Fused) -> Fused:
    """Batch-concatenate two memories, padding the shorter one."""
    ta, tb = a.memory.shape[1], b.memory.shape[1]
    t = max(ta, tb)

    def padded(f: Fused, n: int):
        if n == t:
            return f.memory, f.memory_mask
        zeros = Tensor(np.zeros((f.memory.shape[0], t - n, f.memory.shape[2])))
        mask = np.concatenate([f.memory_mask, np.zeros((f.memory.shape[0], t - n), bool)], 1)
        return ad.concat([f.memory, zeros], axis=1), mask

    ma, ka = padded(a, ta)
    mb, kb = padded(b, tb)
    return Fused(ad.concat([ma, mb], axis=0), np.concatenate([ka, kb]),
                 ad.concat([a.summary, b.summary], axis=0))
