"""Transformer decoder over the fused memory, plus placeholder realization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutRNG, Tensor
from .fusion import Fused
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention, sinusoidal_positions, xavier
from .text import ANS, END, ENT, START, Vocab

log = logging.getLogger(__name__)


class DecoderLayer(Module):
    def __init__(self, width: int, d_memory: int, heads: int, rng: np.random.Generator, dropout: float):
        self.norm_self = LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, heads, rng)
        self.norm_cross = LayerNorm(width)
        self.cross_attn = MultiHeadAttention(width, heads, rng, d_memory=d_memory)
        self.norm_ff = LayerNorm(width)
        self.ff = FeedForward(width, 2 * width, rng, dropout)
        self.p = dropout

    def __call__(self, x, memory, memory_mask, tgt_mask, train=False, rng=None):
        p = self.p
        h = self.self_attn(self.norm_self(x), key_mask=tgt_mask, causal=True)
        x = x + ad.dropout(h, p, train, rng)
        h = self.cross_attn(self.norm_cross(x), memory, key_mask=memory_mask)
        x = x + ad.dropout(h, p, train, rng)
        return x + ad.dropout(self.ff(self.norm_ff(x), train, rng), p, train, rng)


@dataclass
class Generation:
    ids: list[int]
    probs: list[np.ndarray] = field(default_factory=list)


class HybridDecoder(Module):
    """Width 2d; output map W_dec is |V_dec| x 2d (untied from the input table by default)."""

    def __init__(self, d: int, vocab: Vocab, layers: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.1, tie_embeddings: bool = False):
        self.width = w = 2 * d
        self.vocab = vocab
        self.p = dropout
        self.embedding = Tensor(rng.uniform(-0.1, 0.1, size=(len(vocab), w)), requires_grad=True)
        self.layers = [DecoderLayer(w, d, heads, rng, dropout) for _ in range(layers)]
        self.norm_out = LayerNorm(w)
        self.tie_embeddings = tie_embeddings
        self.w_dec = None if tie_embeddings else xavier(rng, len(vocab), w)

    @property
    def start_id(self) -> int:
        return self.vocab.id_of[START]

    @property
    def end_id(self) -> int:
        return self.vocab.id_of[END]

    def hidden(self, fused: Fused, tgt_ids: np.ndarray, tgt_mask: np.ndarray | None = None,
               train: bool = False, rng: DropoutRNG | None = None) -> Tensor:
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        if tgt_ids.ndim == 1:
            tgt_ids = tgt_ids[None]
        t = tgt_ids.shape[1]
        x = ad.embedding_lookup(tgt_ids, self.embedding) * math.sqrt(self.width)
        x = x + sinusoidal_positions(t, self.width)
        x = x + ad.reshape(fused.summary, (fused.summary.shape[0], 1, self.width))
        x = ad.dropout(x, self.p, train, rng)
        for layer in self.layers:
            x = layer(x, fused.memory, fused.memory_mask, tgt_mask, train, rng)
        return self.norm_out(x)

    def project(self, h: Tensor) -> Tensor:
        w = self.embedding if self.tie_embeddings else self.w_dec
        return ad.matmul(h, ad.transpose(w))

    def decode_train(self, fused: Fused, tgt_in: np.ndarray, tgt_mask: np.ndarray | None = None,
                     train: bool = False, rng: DropoutRNG | None = None) -> Tensor:
        """Teacher-forced logits (B, T, |V_dec|); position t sees inputs <= t only."""
        return self.project(self.hidden(fused, tgt_in, tgt_mask, train, rng))

    def step_logprobs(self, fused: Fused, prefix: np.ndarray) -> np.ndarray:
        logits = self.decode_train(fused, prefix).data[:, -1]
        return ad.log_softmax(Tensor(logits)).data

    def decode_greedy(self, fused: Fused, max_len: int) -> list[Generation]:
        """Argmax decoding (lowest index wins ties) for every row of the batch."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        b = fused.memory.shape[0]
        prefix = np.full((b, 1), self.start_id, dtype=np.int64)
        gens = [Generation([]) for _ in range(b)]
        done = np.zeros(b, dtype=bool)
        for _ in range(max_len):
            logp = self.step_logprobs(fused, prefix)
            nxt = logp.argmax(axis=-1)
            for i in np.flatnonzero(~done):
                gens[i].ids.append(int(nxt[i]))
                gens[i].probs.append(np.exp(logp[i]))
            done |= nxt == self.end_id
            if done.all():
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        return gens

    def decode_beam(self, fused: Fused, max_len: int, width: int) -> list[Generation]:
        """Beam search ranked by mean per-token log-probability."""
        if width < 1:
            raise ValueError("beam width must be >= 1")
        out = []
        for i in range(fused.memory.shape[0]):
            one = Fused(fused.memory[i:i + 1], fused.memory_mask[i:i + 1], fused.summary[i:i + 1])
            out.append(self._beam_one(one, max_len, width))
        return out

    def _beam_one(self, fused: Fused, max_len: int, width: int) -> Generation:
        beams: list[tuple[list[int], float]] = [([], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for _ in range(max_len):
            k = len(beams)
            rep = Fused(
                Tensor(np.repeat(fused.memory.data, k, axis=0)),
                np.repeat(fused.memory_mask, k, axis=0),
                Tensor(np.repeat(fused.summary.data, k, axis=0)),
            )
            prefix = np.array([[self.start_id] + ids for ids, _ in beams], dtype=np.int64)
            logp = self.step_logprobs(rep, prefix)
            cands = []
            for j, (ids, score) in enumerate(beams):
                for tok in np.argsort(-logp[j], kind="stable")[:width]:
                    cands.append((ids + [int(tok)], score + float(logp[j, tok])))
            cands.sort(key=lambda c: -c[1] / len(c[0]))
            beams = []
            for ids, score in cands:
                (finished if ids[-1] == self.end_id else beams).append((ids, score))
                if len(beams) == width:
                    break
            if not beams or len(finished) >= width:
                break
        pool = finished or beams
        ids, _ = max(pool, key=lambda c: c[1] / len(c[0]))
        return Generation(ids)


def strip_special(tokens: list[str]) -> list[str]:
    out = []
    for t in tokens:
        if t == END:
            break
        if t != START:
            out.append(t)
    return out


def realize(tokens: list[str], entities: list[str], answer: str) -> str:
    """Fill the i-th [ENT] with ``entities[i]`` and every [ANS] with ``answer``."""
    out, k = [], 0
    for tok in strip_special(tokens):
        if tok == ENT:
            if k < len(entities):
                out.append(entities[k])
            else:
                log.warning("realization: [ENT] #%d has no entity to fill it", k + 1)
                out.append(tok)
            k += 1
        elif tok == ANS:
            out.append(answer)
        else:
            out.append(tok)
    return " ".join(out)
