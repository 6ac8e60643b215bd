"""Deterministic synthetic fixtures: a 20-entity ToyKG and templated QA records.

Run ``python3 -m vogue.synth OUTDIR`` to regenerate the shipped files.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .data import Example, Mention, Reference, load_dataset, save_dataset
from .grammar import ToyKG, execute, load_kg, parse_lf, save_kg
from .text import tokenize

FIXTURE_SIZES = (16, 64, 256)

NETWORKS = ["HBO", "Netflix", "BBC", "CNN"]
SHOWS = ["Veep", "Succession", "Sherlock", "Luther", "Narcos", "Ozark"]
PEOPLE = ["Armando_Iannucci", "Jesse_Armstrong", "Steven_Moffat", "Neil_Cross",
          "Chris_Brancato", "Bill_Dubuque"]
CITIES = ["London", "Atlanta", "New_York", "Los_Angeles"]

_OWNS = [("HBO", "Veep"), ("HBO", "Succession"), ("Netflix", "Narcos"), ("Netflix", "Ozark"),
         ("BBC", "Sherlock"), ("BBC", "Luther"), ("CNN", "Luther"), ("CNN", "Veep")]
_CREATED_BY = list(zip(SHOWS, PEOPLE))
_HQ = [("HBO", "New_York"), ("Netflix", "Los_Angeles"), ("BBC", "London"), ("CNN", "Atlanta")]
_BORN = [("Armando_Iannucci", "London"), ("Jesse_Armstrong", "London"),
         ("Steven_Moffat", "London"), ("Neil_Cross", "New_York"),
         ("Chris_Brancato", "New_York"), ("Bill_Dubuque", "Los_Angeles")]
_GENRE = {"Veep": "comedy", "Succession": "comedy", "Sherlock": "drama", "Luther": "drama",
          "Narcos": "drama", "Ozark": "drama"}


def toy_kg() -> ToyKG:
    triples = {(s, "owns", o) for s, o in _OWNS}
    triples |= {(s, "created_by", o) for s, o in _CREATED_BY}
    triples |= {(s, "headquartered_in", o) for s, o in _HQ}
    triples |= {(s, "born_in", o) for s, o in _BORN}
    types = {e: {"network"} for e in NETWORKS}
    types.update({e: {"show", _GENRE[e]} for e in SHOWS})
    types.update({e: {"person"} for e in PEOPLE})
    types.update({e: {"city"} for e in CITIES})
    return ToyKG(frozenset(triples), types)


def surface(entity: str) -> str:
    return entity.replace("_", " ")


@dataclass(frozen=True)
class Template:
    name: str
    lf: str                # python format string over entity slots e0, e1
    question: str          # entity slots in question order
    references: tuple[str, ...]
    slots: tuple[str, ...]  # LF entity slot names in question order
    domains: tuple[list, ...]


def _templates() -> list[Template]:
    T = Template
    return [
        T("owns", "find({e0}, owns)", "What shows does {e0} own?",
          ("[ENT] owns [ANS].", "The shows of [ENT] are [ANS].", "[ANS] belong to [ENT]."),
          ("e0",), (NETWORKS,)),
        T("owned_by", "find_reverse({e0}, owns)", "Which network owns {e0}?",
          ("[ENT] is owned by [ANS].",), ("e0",), (SHOWS,)),
        T("creator", "find({e0}, created_by)", "Who created {e0}?",
          ("[ENT] was created by [ANS].", "[ANS] created [ENT]."), ("e0",), (SHOWS,)),
        T("created", "find_reverse({e0}, created_by)", "What did {e0} create?",
          ("[ENT] created [ANS].",), ("e0",), (PEOPLE,)),
        T("hq", "find({e0}, headquartered_in)", "Where is {e0} headquartered?",
          ("[ENT] is headquartered in [ANS].", "The headquarters of [ENT] are in [ANS]."),
          ("e0",), (NETWORKS,)),
        T("based_in", "find_reverse({e0}, headquartered_in)", "Which network is based in {e0}?",
          ("[ANS] is based in [ENT].",), ("e0",), (CITIES,)),
        T("birthplace", "find({e0}, born_in)", "Where was {e0} born?",
          ("[ENT] was born in [ANS].", "The birthplace of [ENT] is [ANS].",
           "[ENT] comes from [ANS]."), ("e0",), (PEOPLE,)),
        T("born_here", "find_reverse({e0}, born_in)", "Who was born in {e0}?",
          ("[ANS] was born in [ENT].",), ("e0",), (CITIES,)),
        T("count_owns", "count(find({e0}, owns))", "How many shows does {e0} own?",
          ("[ENT] owns [ANS] shows.", "There are [ANS] shows owned by [ENT]."),
          ("e0",), (NETWORKS,)),
        T("count_owners", "count(find_reverse({e0}, owns))", "How many networks own {e0}?",
          ("[ENT] is owned by [ANS] networks.",), ("e0",), (SHOWS,)),
        T("count_born", "count(find_reverse({e0}, born_in))", "How many people were born in {e0}?",
          ("[ANS] people were born in [ENT].", "[ENT] is the birthplace of [ANS] people."),
          ("e0",), (CITIES,)),
        T("count_created", "count(find_reverse({e0}, created_by))",
          "How many shows did {e0} create?", ("[ENT] created [ANS] shows.",), ("e0",), (PEOPLE,)),
        T("does_own", "is_in({e1}, find({e0}, owns))", "Does {e0} own {e1}?",
          ("[ANS], whether [ENT] owns [ENT].",), ("e0", "e1"), (NETWORKS, SHOWS)),
        T("did_create", "is_in({e1}, find_reverse({e0}, created_by))", "Did {e0} create {e1}?",
          ("[ANS], whether [ENT] created [ENT].", "It is [ANS] that [ENT] created [ENT]."),
          ("e0", "e1"), (PEOPLE, SHOWS)),
        T("comedies", "filter_type(find({e0}, owns), comedy)", "Which comedies does {e0} own?",
          ("[ENT] owns the comedies [ANS].",), ("e0",), (NETWORKS,)),
        T("dramas", "filter_type(find({e0}, owns), drama)", "Which dramas does {e0} own?",
          ("[ENT] owns the dramas [ANS].", "The dramas of [ENT] are [ANS]."),
          ("e0",), (NETWORKS,)),
        T("either", "union(find({e0}, owns), find({e1}, owns))", "What shows do {e0} or {e1} own?",
          ("[ENT] or [ENT] own [ANS].",), ("e0", "e1"), (NETWORKS, NETWORKS)),
        T("both", "intersection(find({e0}, owns), find({e1}, owns))",
          "Which shows do both {e0} and {e1} own?",
          ("Both [ENT] and [ENT] own [ANS].", "[ANS] is owned by both [ENT] and [ENT]."),
          ("e0", "e1"), (NETWORKS, NETWORKS)),
    ]


TEMPLATES = _templates()


def answer_text(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, int):
        return str(value)
    names = sorted(surface(e) for e in value)
    return " and ".join(names) if names else "nothing"


def _bindings(t: Template, kg: ToyKG) -> list[dict]:
    out = []
    for e0 in t.domains[0]:
        for e1 in (t.domains[1] if len(t.domains) > 1 else [None]):
            if e1 is not None and e1 == e0:
                continue
            b = {"e0": e0} if e1 is None else {"e0": e0, "e1": e1}
            value = execute(parse_lf(t.lf.format(**b)), kg)
            # keep every binding with a non-empty set answer; booleans and counts always count
            if isinstance(value, frozenset) and not value:
                continue
            out.append(b)
    return out


def make_example(t: Template, binding: dict, kg: ToyKG) -> Example:
    lf = parse_lf(t.lf.format(**binding))
    question = t.question.format(**{k: surface(v) for k, v in binding.items()})
    tokens = tokenize(question)
    mentions = []
    cursor = 0
    for slot in t.slots:
        ent = binding[slot]
        ent_toks = tokenize(surface(ent))
        for i in range(cursor, len(tokens) - len(ent_toks) + 1):
            if tokens[i:i + len(ent_toks)] == ent_toks:
                mentions.append(Mention(surface(ent), i, i + len(ent_toks), ent))
                cursor = i + len(ent_toks)
                break
        else:
            raise AssertionError(f"{ent} not found in {question!r}")
    answer = answer_text(execute(lf, kg))
    slot_values = [m.surface for m in mentions]
    refs = []
    for text in t.references:
        ents = iter(slot_values)
        fill = []
        for tok in tokenize(text):
            if tok == "[ENT]":
                fill.append(next(ents))
            elif tok == "[ANS]":
                fill.append(answer)
        refs.append(Reference(text, tuple(fill)))
    return Example(question, lf, answer, mentions, refs)


def generate(n: int, seed: int = 0, kg: ToyKG | None = None) -> list[Example]:
    """``n`` records over a seeded subset of templates, each template used at least twice.

    Templates are visited round-robin in a seeded order; bindings are drawn per record.
    """
    kg = kg or toy_kg()
    rng = np.random.default_rng(seed)
    k = max(1, min(len(TEMPLATES), n // 2))
    chosen = sorted(rng.choice(len(TEMPLATES), size=k, replace=False))
    pools = {ti: _bindings(TEMPLATES[ti], kg) for ti in chosen}
    out = []
    while len(out) < n:
        for ti in rng.permutation(chosen):
            if len(out) == n:
                break
            b = pools[ti][int(rng.integers(len(pools[ti])))]
            out.append(make_example(TEMPLATES[ti], b, kg))
    return out


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("vogue") / "fixtures" / name))


def fixture(n: int) -> list[Example]:
    return load_dataset(fixture_path(f"toy_{n}.jsonl"))


def fixture_kg() -> ToyKG:
    return load_kg(fixture_path("toy_kg.tsv"))


def write_fixtures(outdir: str | Path) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kg = toy_kg()
    save_kg(kg, outdir / "toy_kg.tsv")
    for n in FIXTURE_SIZES:
        save_dataset(generate(n, seed=n, kg=kg), outdir / f"toy_{n}.jsonl")


if __name__ == "__main__":
    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "fixtures")
