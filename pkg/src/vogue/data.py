"""Dataset records, JSON-lines ingestion and model-ready encoding."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grammar import GrammarError, LogicalForm, Ref, ToyKG, parse_lf
from .text import (
    CTX, DECODER_SPECIALS, END, ENT, START, Span, Vocab, build_vocab, gazetteer_spans,
    mask_entities, normalize_label, tokenize,
)

log = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\[(ENT|ANS)\]")


class IngestError(ValueError):
    """A dataset line is not a valid record; ``lineno`` is 1-based."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


@dataclass(frozen=True)
class Mention:
    surface: str
    start_token: int
    end_token: int  # exclusive
    id: str | None = None


@dataclass(frozen=True)
class Reference:
    text: str                      # with literal [ENT] / [ANS] placeholders
    slots: tuple[str, ...] = ()    # surface string per placeholder, in order

    def realized(self) -> str:
        it = iter(self.slots)
        return _PLACEHOLDER.sub(lambda m: next(it, m.group(0)), self.text)


@dataclass
class Example:
    question: str
    logical_form: LogicalForm
    answer: str
    entities: list[Mention] = field(default_factory=list)
    references: list[Reference] = field(default_factory=list)

    @property
    def entity_surfaces(self) -> list[str]:
        return [m.surface for m in self.entities]

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "logical_form": self.logical_form.surface,
            "answer": self.answer,
            "entities": [
                {k: v for k, v in vars(m).items() if v is not None} for m in self.entities
            ],
            "references": [r.text for r in self.references],
            "slots": [list(r.slots) for r in self.references],
        }


FIELDS = ("question", "logical_form", "answer", "entities", "references", "slots")


def _record_to_example(obj: dict, field_map: dict[str, str] | None, kg: ToyKG | None) -> Example:
    fm = {f: f for f in FIELDS}
    fm.update(field_map or {})
    question = obj[fm["question"]]
    lf = parse_lf(obj[fm["logical_form"]])
    answer = str(obj.get(fm["answer"], ""))
    q_tokens = tokenize(question)
    raw_ents = obj.get(fm["entities"])
    if raw_ents is None:
        raw_ents = []
        if kg is not None:
            for span in gazetteer_spans(q_tokens, kg.entities):
                raw_ents.append({"surface": " ".join(q_tokens[span.start:span.end]),
                                 "start_token": span.start, "end_token": span.end})
    mentions = [Mention(e["surface"], int(e["start_token"]), int(e["end_token"]), e.get("id"))
                for e in raw_ents]
    refs_raw = obj.get(fm["references"], [])
    slots_raw = obj.get(fm["slots"]) or [[] for _ in refs_raw]
    refs = []
    for r, s in zip(refs_raw, slots_raw):
        if isinstance(r, dict):
            refs.append(Reference(r["text"], tuple(r.get("slots", ()))))
        else:
            refs.append(Reference(r, tuple(s)))
    return Example(question, lf, answer, mentions, refs)


def load_dataset(path: str | Path, field_map: dict[str, str] | None = None,
                 kg: ToyKG | None = None) -> list[Example]:
    """Read one JSON record per line; records whose logical form does not parse are skipped."""
    examples, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestError(path, lineno, f"malformed JSON: {e.msg}") from None
            if not isinstance(obj, dict):
                raise IngestError(path, lineno, "record is not a JSON object")
            try:
                examples.append(_record_to_example(obj, field_map, kg))
            except GrammarError as e:
                skipped += 1
                log.info("%s:%d: skipping record, logical form does not parse: %s", path, lineno, e)
            except KeyError as e:
                raise IngestError(path, lineno, f"missing field {e}") from None
    if skipped:
        log.warning("%s: skipped %d record(s) with unparseable logical forms", path, skipped)
    if not examples:
        log.warning("%s: no records loaded", path)
    return examples


def save_dataset(examples: Iterable[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json()) + "\n")


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


def question_tokens(ex: Example) -> list[str]:
    """Masked question tokens ending in [CTX]."""
    tokens = tokenize(ex.question)
    spans = [Span(m.start_token, m.end_token) for m in ex.entities]
    masked, _ = mask_entities(tokens, spans)
    return masked + [CTX]


def _entity_keys(ex: Example) -> set[str]:
    keys = {normalize_label(m.surface) for m in ex.entities}
    keys |= {m.id for m in ex.entities if m.id}
    return keys


def lf_tokens(lf: LogicalForm, ex: Example) -> list[str]:
    """Linearized logical form ending in [CTX]; entity leaves mentioned in the question become [ENT]."""
    keys = _entity_keys(ex)
    out = []
    for tok, ref in _leaf_aligned(lf):
        if ref is not None and ref.role == "entity" and (
            ref.name in keys or normalize_label(ref.name) in keys
        ):
            out.append(ENT)
        else:
            out.append(tok)
    return out + [CTX]


def _leaf_aligned(lf: LogicalForm):
    def walk(n):
        if isinstance(n, Ref):
            yield n.name, n
        else:
            yield n.kind, None
            for a in n.args:
                yield from walk(a)

    yield from walk(lf.root)


def target_tokens(ref: Reference) -> list[str]:
    """Target with placeholders, framed by [START] ... [END]."""
    return [START] + tokenize(ref.text) + [END]


@dataclass
class Vocabs:
    question: Vocab
    logical_form: Vocab
    decoder: Vocab

    def to_json(self) -> dict:
        return {k: getattr(self, k).to_json() for k in ("question", "logical_form", "decoder")}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabs":
        return cls(*(Vocab.from_json(obj[k]) for k in ("question", "logical_form", "decoder")))


def build_vocabs(examples: Sequence[Example], min_count: int = 1) -> Vocabs:
    q = build_vocab((question_tokens(e) for e in examples), min_count)
    lf = build_vocab((lf_tokens(e.logical_form, e) for e in examples), min_count)
    dec = build_vocab((target_tokens(r) for e in examples for r in e.references[:1]), min_count,
                      specials=DECODER_SPECIALS)
    return Vocabs(q, lf, dec)


def pad(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


@dataclass
class Batch:
    q_ids: np.ndarray
    q_mask: np.ndarray
    lf_ids: np.ndarray
    lf_mask: np.ndarray
    neg_ids: np.ndarray | None
    neg_mask: np.ndarray | None
    tgt_in: np.ndarray
    tgt_in_mask: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray  # over tgt_out positions

    @property
    def size(self) -> int:
        return self.q_ids.shape[0]


def make_batch(examples: Sequence[Example], vocabs: Vocabs,
               negatives: Sequence[LogicalForm] | None = None) -> Batch:
    q = [vocabs.question.encode(question_tokens(e)) for e in examples]
    lf = [vocabs.logical_form.encode(lf_tokens(e.logical_form, e)) for e in examples]
    tgt = [vocabs.decoder.encode(target_tokens(e.references[0])) for e in examples]
    q_ids, q_mask = pad(q)
    lf_ids, lf_mask = pad(lf)
    neg_ids = neg_mask = None
    if negatives is not None:
        neg = [vocabs.logical_form.encode(lf_tokens(n, e)) for n, e in zip(negatives, examples)]
        neg_ids, neg_mask = pad(neg)
    t_ids, t_mask = pad(tgt)
    return Batch(q_ids, q_mask, lf_ids, lf_mask, neg_ids, neg_mask,
                 t_ids[:, :-1], t_mask[:, :-1], t_ids[:, 1:], t_mask[:, 1:])


def split_dev(examples: Sequence[Example], fraction: float, seed: int):
    """Seeded shuffle, then hold out ``round(fraction * n)`` records."""
    idx = np.random.default_rng(seed).permutation(len(examples))
    n_dev = int(round(fraction * len(examples)))
    dev = [examples[i] for i in sorted(idx[:n_dev])]
    train = [examples[i] for i in sorted(idx[n_dev:])]
    return train, dev
