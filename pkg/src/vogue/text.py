"""Tokenization, entity masking, vocabularies and embedding lookup."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, embedding_lookup

PAD, UNK, CTX, ENT = "[PAD]", "[UNK]", "[CTX]", "[ENT]"
START, END, ANS = "[START]", "[END]", "[ANS]"
ENCODER_SPECIALS = (PAD, UNK, CTX, ENT)
DECODER_SPECIALS = (PAD, UNK, CTX, ENT, START, END, ANS)

_TOKEN = re.compile(
    r"""
    (?P<special>\[(?:PAD|UNK|CTX|ENT|START|END|ANS)\])
  | (?P<clitic>'(?:s|re|ve|ll|d|m|t)\b)
  | (?P<number>\d+(?:[.,]\d+)+)
  | (?P<word>[^\W_]+(?:[-_][^\W_]+)*)
  | (?P<punct>\S)
    """,
    re.VERBOSE | re.IGNORECASE,
)


class SpanError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation off as standalone tokens, keep ``[ENT]``-style specials."""
    out = []
    for m in _TOKEN.finditer(text):
        tok = m.group(0)
        out.append(tok.upper() if m.lastgroup == "special" else tok.lower())
    return out


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # exclusive


def mask_entities(tokens: Sequence[str], spans: Sequence) -> tuple[list[str], list[str]]:
    """Replace each span by one ``[ENT]``; return the masked tokens and span surfaces."""
    spans = [s if isinstance(s, Span) else Span(*s) for s in spans]
    prev_end = 0
    for s in spans:
        if not (0 <= s.start < s.end <= len(tokens)):
            raise SpanError(f"span {s.start}:{s.end} out of range for {len(tokens)} tokens")
        if s.start < prev_end:
            raise SpanError(f"span {s.start}:{s.end} overlaps or is out of order")
        prev_end = s.end
    masked, entities, i = [], [], 0
    for s in spans:
        masked.extend(tokens[i:s.start])
        masked.append(ENT)
        entities.append(" ".join(tokens[s.start:s.end]))
        i = s.end
    masked.extend(tokens[i:])
    return masked, entities


def unmask_entities(masked: Sequence[str], entities: Sequence[str]) -> list[str]:
    """Inverse of :func:`mask_entities` for token-joined surfaces."""
    it = iter(entities)
    out: list[str] = []
    for tok in masked:
        out.extend(next(it).split(" ") if tok == ENT else [tok])
    return out


def normalize_label(label: str) -> str:
    return " ".join(tokenize(label.replace("_", " ")))


def gazetteer_spans(tokens: Sequence[str], labels: Iterable[str]) -> list[Span]:
    """Greedy longest exact match of KG entity labels against the token sequence."""
    by_len: dict[int, set[tuple[str, ...]]] = {}
    for lab in labels:
        toks = tuple(tokenize(lab.replace("_", " ")))
        if toks:
            by_len.setdefault(len(toks), set()).add(toks)
    spans, i = [], 0
    lengths = sorted(by_len, reverse=True)
    while i < len(tokens):
        for n in lengths:
            if tuple(tokens[i:i + n]) in by_len[n]:
                spans.append(Span(i, i + n))
                i += n
                break
        else:
            i += 1
    return spans


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    specials: tuple[str, ...] = ENCODER_SPECIALS
    id_of: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "id_of", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def token_of(self, index: int) -> str:
        return self.tokens[index]

    def index(self, token: str) -> int:
        return self.id_of.get(token, self.id_of[UNK])

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def pad(self) -> int:
        return self.id_of[PAD]

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "specials": list(self.specials)}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(tuple(obj["tokens"]), tuple(obj["specials"]))


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1,
                specials: Sequence[str] = ENCODER_SPECIALS) -> Vocab:
    """Specials first, then tokens with count >= ``min_count`` by (-count, token)."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t for seq in corpus for t in seq if t not in specials)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(tuple(specials) + tuple(kept), tuple(specials))


def init_embeddings(vocab_size: int, dim: int, rng: np.random.Generator) -> Tensor:
    return Tensor(rng.uniform(-0.1, 0.1, size=(vocab_size, dim)), requires_grad=True)


def load_word_vectors(path: str | Path, vocab: Vocab, table: Tensor) -> int:
    """Overwrite rows of ``table`` from a ``token v1 ... vd`` text file; returns rows filled."""
    dim = table.shape[1]
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1 or parts[0] not in vocab:
                continue
            table.data[vocab.id_of[parts[0]]] = np.asarray(parts[1:], dtype=np.float64)
            hits += 1
    return hits


def embed(ids: Sequence[int], table: Tensor) -> Tensor:
    return embedding_lookup(ids, table)
