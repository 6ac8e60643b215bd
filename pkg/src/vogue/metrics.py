"""BLEU, METEOR (exact-match unigram variant), perplexity and binary F1."""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache
from typing import Sequence

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_counts(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[int, int]:
    cand = ngrams(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            if c > max_ref[g]:
                max_ref[g] = c
    matched = sum(min(c, max_ref[g]) for g, c in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def closest_ref_length(c: int, references: Sequence[Tokens]) -> int:
    """Reference length nearest to ``c``; the shorter one on ties."""
    return min((len(r) for r in references), key=lambda r: (abs(r - c), r))


def brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def _combine(matched: Sequence[int], total: Sequence[int], c: int, r: int, smooth: bool) -> float:
    if c == 0:
        return 0.0
    logs = []
    for n, (m, t) in enumerate(zip(matched, total), 1):
        if smooth and n > 1:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logs.append(math.log(m / t))
    return brevity_penalty(c, r) * math.exp(sum(logs) / len(logs))


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4,
         smooth: bool = False) -> float:
    """Sentence BLEU. ``smooth`` adds one to matches and totals for orders >= 2."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not references:
        raise ValueError("at least one reference is required")
    counts = [_clipped_counts(candidate, references, n) for n in range(1, max_n + 1)]
    c = len(candidate)
    return _combine([m for m, _ in counts], [t for _, t in counts], c,
                    closest_ref_length(c, references) if c else 0, smooth)


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
                max_n: int = 4) -> float:
    """Counts are pooled over the corpus before precisions and the brevity penalty are formed."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matched = [0] * max_n
    total = [0] * max_n
    c = r = 0
    for cand, refs in zip(candidates, references):
        for n in range(1, max_n + 1):
            m, t = _clipped_counts(cand, refs, n)
            matched[n - 1] += m
            total[n - 1] += t
        c += len(cand)
        r += closest_ref_length(len(cand), refs) if cand else 0
    return _combine(matched, total, c, r, smooth=False)


# ---------------------------------------------------------------------------
# METEOR
# ---------------------------------------------------------------------------


def align(candidate: Tokens, reference: Tokens) -> tuple[int, int]:
    """(matches, chunks) of the exact-match alignment with most matches, then fewest chunks.

    A chunk is a maximal run of matches contiguous and in order in both sentences.
    """
    cand, ref = tuple(candidate), tuple(reference)
    need = Counter(cand) & Counter(ref)
    total = sum(need.values())
    if total == 0:
        return 0, 0
    words = sorted(need)
    slot = {w: k for k, w in enumerate(words)}
    positions = {w: [j for j, t in enumerate(ref) if t == w] for w in words}
    later = [Counter(cand[i + 1:]) for i in range(len(cand))]
    impossible = len(cand) + 1

    # every maximal alignment matches exactly need[w] copies of each word w
    @lru_cache(maxsize=None)
    def best(i: int, used: int, prev: int, owed: tuple[int, ...]) -> int:
        if i == len(cand):
            return 0 if not any(owed) else impossible
        tok = cand[i]
        if tok not in slot:
            return best(i + 1, used, -2, owed)
        k = slot[tok]
        result = impossible
        if owed[k] <= later[i][tok]:
            result = best(i + 1, used, -2, owed)
        if owed[k]:
            nxt = owed[:k] + (owed[k] - 1,) + owed[k + 1:]
            for j in positions[tok]:
                if not used >> j & 1:
                    opened = 0 if j == prev + 1 else 1
                    result = min(result, opened + best(i + 1, used | 1 << j, j, nxt))
        return result

    return total, best(0, 0, -2, tuple(need[w] for w in words))


def meteor_single(candidate: Tokens, reference: Tokens) -> float:
    matches, chunks = align(candidate, reference)
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(reference)
    f = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f * (1.0 - penalty)


def meteor(candidate: Tokens, references) -> float:
    """Best score over the references (a single token list is accepted as one reference)."""
    if references and isinstance(references[0], str):
        references = [references]
    return max((meteor_single(candidate, r) for r in references), default=0.0)


def perplexity(total_nll: float, token_count: int) -> float:
    if token_count < 1:
        raise ValueError("token_count must be >= 1")
    return math.exp(total_nll / token_count)


def f1_binary(predictions: Sequence[bool], gold: Sequence[bool]) -> tuple[float, float, float]:
    """Precision, recall and F1 of the positive class; empty denominators give 0."""
    if len(predictions) != len(gold):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(gold)} labels")
    if len(gold) == 0:
        raise ValueError("need at least one prediction")
    tp = sum(1 for p, g in zip(predictions, gold) if p and g)
    fp = sum(1 for p, g in zip(predictions, gold) if p and not g)
    fn = sum(1 for p, g in zip(predictions, gold) if g and not p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


REPORT_SCHEMA = {
    "type": "object",
    "required": ["corpus", "examples"],
    "properties": {
        "corpus": {
            "type": "object",
            "required": ["n", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "perplexity",
                         "threshold_precision", "threshold_recall", "threshold_f1"],
            "properties": {
                "n": {"type": "integer", "minimum": 0},
                **{k: {"type": "number", "minimum": 0, "maximum": 1}
                   for k in ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "threshold_precision",
                             "threshold_recall", "threshold_f1", "exact_match")},
                "perplexity": {"type": "number", "minimum": 1},
            },
        },
        "examples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "question", "prediction", "references", "bleu4", "meteor",
                             "use_hybrid"],
                "properties": {
                    "index": {"type": "integer"},
                    "question": {"type": "string"},
                    "prediction": {"type": "string"},
                    "references": {"type": "array", "items": {"type": "string"}},
                    "bleu4": {"type": "number", "minimum": 0, "maximum": 1},
                    "meteor": {"type": "number", "minimum": 0, "maximum": 1},
                    "use_hybrid": {"type": "boolean"},
                    "exact_match": {"type": "boolean"},
                },
            },
        },
    },
}
