"""End-to-end scoring: gate, decode, realize, then BLEU / METEOR / perplexity / threshold F1."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Example, make_batch, question_tokens
from .decoder import realize
from .grammar import LogicalForm
from .losses import nll
from .metrics import bleu, corpus_bleu, f1_binary, meteor, perplexity
from .model import VogueModel
from .text import UNK, tokenize
from .threshold import decide
from .trainer import sample_negatives

log = logging.getLogger(__name__)

MODES = ("auto", "hybrid", "question")


class CompatibilityError(ValueError):
    """The data cannot be encoded meaningfully with the checkpoint's vocabularies."""


def check_compatible(model: VogueModel, examples: Sequence[Example], max_unk: float = 0.5) -> None:
    """Refuse data whose question tokens are mostly unknown to the model."""
    toks = [t for ex in examples for t in question_tokens(ex)]
    if not toks:
        return
    vocab = model.vocabs.question
    unk = sum(1 for t in toks if t not in vocab or t == UNK) / len(toks)
    if unk > max_unk:
        raise CompatibilityError(
            f"{unk:.0%} of question tokens are outside the checkpoint vocabulary")


@dataclass
class EvalReport:
    corpus: dict
    examples: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"corpus": self.corpus, "examples": self.examples}


@dataclass
class Prediction:
    tokens: list[str]
    text: str
    use_hybrid: bool


def route(model: VogueModel, examples: Sequence[Example], mode: str = "auto") -> np.ndarray:
    """Per-record decision to use the logical form alongside the question."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "hybrid":
        return np.ones(len(examples), dtype=bool)
    if mode == "question":
        return np.zeros(len(examples), dtype=bool)
    batch = make_batch(examples, model.vocabs)
    return np.asarray(decide(model.gate_probs(batch.q_ids, batch.q_mask, batch.lf_ids,
                                              batch.lf_mask)), dtype=bool)


def _decode(model: VogueModel, examples: Sequence[Example], hybrid: bool, max_len: int,
            beam_width: int | None):
    batch = make_batch(examples, model.vocabs)
    if hybrid:
        mem = model.memory(batch.q_ids, batch.q_mask, batch.lf_ids, batch.lf_mask)
    else:
        mem = model.memory(batch.q_ids, batch.q_mask)
    if beam_width:
        gens = model.decoder.decode_beam(mem, max_len, beam_width)
    else:
        gens = model.decoder.decode_greedy(mem, max_len)
    logits = model.decoder.decode_train(mem, batch.tgt_in, batch.tgt_in_mask)
    n = int(batch.tgt_mask.sum())
    total_nll = nll(logits, batch.tgt_out, batch.tgt_mask).item() * n
    return gens, total_nll, n


def predict(model: VogueModel, examples: Sequence[Example], mode: str = "auto",
            max_len: int = 40, beam_width: int | None = None, batch_size: int = 64):
    """Realized predictions plus the teacher-forced NLL of the first references."""
    use = route(model, examples, mode)
    preds: list[Prediction | None] = [None] * len(examples)
    total_nll, count = 0.0, 0
    for flag in (True, False):
        idx = np.flatnonzero(use == flag)
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            group = [examples[i] for i in chunk]
            gens, t_nll, n = _decode(model, group, flag, max_len, beam_width)
            total_nll += t_nll
            count += n
            for i, ex, gen in zip(chunk, group, gens):
                toks = model.vocabs.decoder.decode(gen.ids)
                preds[i] = Prediction(toks, realize(toks, ex.entity_surfaces, ex.answer), flag)
    return preds, total_nll, count


def threshold_scores(model: VogueModel, examples: Sequence[Example], seed: int = 0,
                     pool: Sequence[LogicalForm] | None = None) -> tuple[float, float, float]:
    """Gate precision/recall/F1 on gold pairs plus one seeded corrupted pair per record."""
    pool = list(pool) if pool is not None else [ex.logical_form for ex in examples]
    negatives = sample_negatives(examples, pool, np.random.default_rng(seed))
    keep = [i for i, (ex, neg) in enumerate(zip(examples, negatives)) if neg != ex.logical_form]
    batch = make_batch(examples, model.vocabs)
    p_pos = model.gate_probs(batch.q_ids, batch.q_mask, batch.lf_ids, batch.lf_mask)
    preds = list(np.asarray(decide(p_pos), dtype=bool))
    gold = [True] * len(examples)
    if keep:
        sub = [examples[i] for i in keep]
        nb = make_batch(sub, model.vocabs, [negatives[i] for i in keep])
        p_neg = model.gate_probs(nb.q_ids, nb.q_mask, nb.neg_ids, nb.neg_mask)
        preds += list(np.asarray(decide(p_neg), dtype=bool))
        gold += [False] * len(keep)
    return f1_binary(preds, gold)


def evaluate(model: VogueModel, examples: Sequence[Example], mode: str = "auto",
             beam_width: int | None = None, max_len: int = 40, seed: int = 0,
             pool: Sequence[LogicalForm] | None = None) -> EvalReport:
    if not examples:
        raise ValueError("nothing to evaluate")
    check_compatible(model, examples)
    preds, total_nll, count = predict(model, examples, mode, max_len, beam_width)
    cands, refs, rows = [], [], []
    exact = 0
    for i, (ex, pr) in enumerate(zip(examples, preds)):
        cand = tokenize(pr.text)
        ref_texts = [r.realized() for r in ex.references]
        ref_toks = [tokenize(t) for t in ref_texts]
        match = any(cand == r for r in ref_toks)
        exact += match
        cands.append(cand)
        refs.append(ref_toks)
        rows.append({
            "index": i,
            "question": ex.question,
            "prediction": pr.text,
            "references": ref_texts,
            "bleu4": bleu(cand, ref_toks, 4, smooth=True),
            "meteor": meteor(cand, ref_toks),
            "use_hybrid": bool(pr.use_hybrid),
            "exact_match": bool(match),
        })
    p, r, f1 = threshold_scores(model, examples, seed, pool)
    corpus = {"n": len(examples)}
    for n in range(1, 5):
        corpus[f"bleu{n}"] = corpus_bleu(cands, refs, n)
    corpus.update({
        "meteor": float(np.mean([row["meteor"] for row in rows])),
        "perplexity": perplexity(total_nll, count),
        "threshold_precision": p,
        "threshold_recall": r,
        "threshold_f1": f1,
        "exact_match": exact / len(examples),
        "exact_match_count": exact,
    })
    return EvalReport(corpus, rows)
