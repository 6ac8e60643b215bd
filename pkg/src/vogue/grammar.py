"""Logical forms over a small action grammar, plus a toy triple store to run them on.

Actions and their signatures::

    find(entity, relation)          -> set     objects of (e, p, ?)
    find_reverse(entity, relation)  -> set     subjects of (?, p, e)
    filter_type(set, type)          -> set
    is_in(entity, set)              -> boolean
    count(set)                      -> number
    union(set, set)                 -> set
    intersection(set, set)          -> set

Surface syntax is function-call notation; whitespace is insignificant.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

# argument slots: a leaf role ("entity" / "relation" / "type") or "set"
SIGNATURES: dict[str, tuple[str, ...]] = {
    "find": ("entity", "relation"),
    "find_reverse": ("entity", "relation"),
    "filter_type": ("set", "type"),
    "is_in": ("entity", "set"),
    "count": ("set",),
    "union": ("set", "set"),
    "intersection": ("set", "set"),
}
RESULT_SORT: dict[str, str] = {
    "find": "set",
    "find_reverse": "set",
    "filter_type": "set",
    "is_in": "boolean",
    "count": "number",
    "union": "set",
    "intersection": "set",
}
LEAF_ROLES = ("entity", "relation", "type")

_WORD = re.compile(r"[A-Za-z0-9_'\-]+")
_QUALIFIER = re.compile(r"\(\s*([A-Za-z0-9_'\-]+)\s*\)")


class GrammarError(ValueError):
    """Malformed logical-form text; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CorruptionImpossible(RuntimeError):
    pass


@dataclass(frozen=True)
class Ref:
    role: str  # entity | relation | type
    name: str


@dataclass(frozen=True)
class Action:
    kind: str
    args: tuple[Union["Action", Ref], ...]

    @property
    def sort(self) -> str:
        return RESULT_SORT[self.kind]


Node = Union[Action, Ref]


def render(node: Node) -> str:
    if isinstance(node, Ref):
        return node.name
    return f"{node.kind}({', '.join(render(a) for a in node.args)})"


def linearize(node: Node) -> list[str]:
    """Prefix token sequence; unambiguous because every action has fixed arity."""
    out: list[str] = []

    def walk(n: Node) -> None:
        if isinstance(n, Ref):
            out.append(n.name)
        else:
            out.append(n.kind)
            for a in n.args:
                walk(a)

    walk(node)
    return out


@dataclass(frozen=True)
class LogicalForm:
    root: Action

    @property
    def surface(self) -> str:
        return render(self.root)

    @property
    def linearization(self) -> list[str]:
        return linearize(self.root)

    @property
    def sort(self) -> str:
        return self.root.sort

    def leaves(self) -> list[Ref]:
        return [n for n in iter_nodes(self.root) if isinstance(n, Ref)]

    def depth(self) -> int:
        def d(n: Node) -> int:
            return 0 if isinstance(n, Ref) else 1 + max(d(a) for a in n.args)

        return d(self.root)

    def __str__(self) -> str:
        return self.surface


def iter_nodes(node: Node) -> Iterable[Node]:
    yield node
    if isinstance(node, Action):
        for a in node.args:
            yield from iter_nodes(a)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def offset(self) -> int:
        return len(self.text[: self.pos].encode("utf-8"))

    def error(self, msg: str) -> GrammarError:
        return GrammarError(msg, self.offset())

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            got = self.peek() or "end of input"
            raise self.error(f"expected {ch!r}, got {got!r}")
        self.pos += 1

    def ident(self) -> tuple[str, int]:
        self.skip_ws()
        start = self.pos
        m = _WORD.match(self.text, self.pos)
        if not m:
            raise self.error("expected an identifier")
        self.pos = m.end()
        return m.group(0), start

    def node(self, expected: str) -> Node:
        self.skip_ws()
        start = self.pos
        name, _ = self.ident()
        if name in SIGNATURES and self.peek() == "(":
            self.pos = self.text.index("(", self.pos) + 1
            kind = name
            sig = SIGNATURES[kind]
            args: list[Node] = []
            for i, slot in enumerate(sig):
                if i:
                    if self.peek() == ")":
                        raise self.error(f"{kind} takes {len(sig)} arguments, got {i}")
                    self.expect(",")
                args.append(self.node(slot))
            if self.peek() == ",":
                raise self.error(f"{kind} takes {len(sig)} arguments, got more")
            self.expect(")")
            action = Action(kind, tuple(args))
            if expected in LEAF_ROLES:
                self.pos = start
                raise self.error(f"expected {expected} leaf, got {kind} ({action.sort})")
            if expected != action.sort:
                self.pos = start
                raise self.error(f"expected {expected} expression, got {kind} ({action.sort})")
            return action
        if self.peek() == "(":
            # a leaf label may carry one parenthesized qualifier: White_River_(Vermont)
            m = _QUALIFIER.match(self.text, self.pos)
            if m is None:
                self.pos = start
                raise self.error(f"unknown action {name!r}")
            name = f"{name}({m.group(1)})"
            self.pos = m.end()
            tail = _WORD.match(self.text, self.pos)
            if tail:
                name += tail.group(0)
                self.pos = tail.end()
        if expected not in LEAF_ROLES:
            self.pos = start
            raise self.error(f"expected {expected} expression, got leaf {name!r}")
        return Ref(expected, name)


def parse_lf(text: str) -> LogicalForm:
    """Parse canonical text such as ``count(find_reverse(Chicago_Bulls, team))``."""
    if not text or not text.strip():
        raise GrammarError("empty logical form", 0)
    p = _Parser(text)
    p.skip_ws()
    start = p.pos
    name, _ = p.ident()
    if name not in SIGNATURES:
        p.pos = start
        raise p.error(f"unknown action {name!r}")
    sort = RESULT_SORT[name]
    p.pos = start
    root = p.node(sort)
    p.skip_ws()
    if p.pos != len(p.text):
        raise p.error("trailing input")
    return LogicalForm(root)


# ---------------------------------------------------------------------------
# knowledge graph + execution
# ---------------------------------------------------------------------------


@dataclass
class ToyKG:
    triples: frozenset[tuple[str, str, str]] = frozenset()
    type_of: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.triples = frozenset(self.triples)
        self.type_of = {e: frozenset(ts) for e, ts in self.type_of.items()}
        fwd: dict[tuple[str, str], set[str]] = defaultdict(set)
        rev: dict[tuple[str, str], set[str]] = defaultdict(set)
        for s, p, o in self.triples:
            fwd[s, p].add(o)
            rev[o, p].add(s)
        self._fwd = {k: frozenset(v) for k, v in fwd.items()}
        self._rev = {k: frozenset(v) for k, v in rev.items()}

    def objects(self, subject: str, predicate: str) -> frozenset[str]:
        return self._fwd.get((subject, predicate), frozenset())

    def subjects(self, obj: str, predicate: str) -> frozenset[str]:
        return self._rev.get((obj, predicate), frozenset())

    def types(self, entity: str) -> frozenset[str]:
        return self.type_of.get(entity, frozenset())

    @property
    def entities(self) -> list[str]:
        ents = {s for s, _, _ in self.triples} | {o for _, _, o in self.triples}
        return sorted(ents | set(self.type_of))

    @property
    def relations(self) -> list[str]:
        return sorted({p for _, p, _ in self.triples})


def load_kg(path: str | Path) -> ToyKG:
    """Read ``subject<TAB>predicate<TAB>object`` lines; ``@type`` predicates assign types."""
    triples = set()
    types: dict[str, set[str]] = defaultdict(set)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        s, p, o = (x.strip() for x in parts)
        if p == "@type":
            types[s].add(o)
        else:
            triples.add((s, p, o))
    return ToyKG(frozenset(triples), dict(types))


def save_kg(kg: ToyKG, path: str | Path) -> None:
    lines = [f"{s}\t{p}\t{o}" for s, p, o in sorted(kg.triples)]
    lines += [f"{e}\t@type\t{t}" for e in sorted(kg.type_of) for t in sorted(kg.type_of[e])]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


AnswerValue = Union[frozenset, bool, int]


def execute(lf: LogicalForm | Action, kg: ToyKG) -> AnswerValue:
    """Evaluate against ``kg``. Unknown symbols simply yield empty sets."""
    node = lf.root if isinstance(lf, LogicalForm) else lf
    return _eval(node, kg)


def _eval(node: Action, kg: ToyKG) -> AnswerValue:
    k, a = node.kind, node.args
    if k == "find":
        return kg.objects(a[0].name, a[1].name)
    if k == "find_reverse":
        return kg.subjects(a[0].name, a[1].name)
    if k == "filter_type":
        return frozenset(e for e in _eval(a[0], kg) if a[1].name in kg.types(e))
    if k == "is_in":
        return a[0].name in _eval(a[1], kg)
    if k == "count":
        return len(_eval(a[0], kg))
    if k == "union":
        return _eval(a[0], kg) | _eval(a[1], kg)
    if k == "intersection":
        return _eval(a[0], kg) & _eval(a[1], kg)
    raise AssertionError(k)


# ---------------------------------------------------------------------------
# edit distance + corruption
# ---------------------------------------------------------------------------


def levenshtein(a, b) -> int:
    """Edit distance between two sequences (insert, delete, substitute all cost 1)."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


_KIND_SWAPS = {
    "find": ("find_reverse",),
    "find_reverse": ("find",),
    "union": ("intersection",),
    "intersection": ("union",),
}


def _paths(node: Node, prefix=()):
    yield prefix, node
    if isinstance(node, Action):
        for i, a in enumerate(node.args):
            yield from _paths(a, prefix + (i,))


def _replace(node: Node, path: tuple[int, ...], new: Node) -> Node:
    if not path:
        return new
    args = list(node.args)
    args[path[0]] = _replace(args[path[0]], path[1:], new)
    return Action(node.kind, tuple(args))


def _local_edits(lf: LogicalForm, pool: list[LogicalForm]) -> tuple[list, list]:
    kind_edits, leaf_edits = [], []
    pool_leaves: dict[str, list[str]] = {r: [] for r in LEAF_ROLES}
    for other in pool:
        for ref in other.leaves():
            if ref.name not in pool_leaves[ref.role]:
                pool_leaves[ref.role].append(ref.name)
    for path, node in _paths(lf.root):
        if isinstance(node, Action):
            for kind in _KIND_SWAPS.get(node.kind, ()):
                kind_edits.append((path, Action(kind, node.args)))
        else:
            for name in pool_leaves[node.role]:
                if name != node.name:
                    leaf_edits.append((path, Ref(node.role, name)))
    return kind_edits, leaf_edits


def nearest_neighbor(lf: LogicalForm, pool: list[LogicalForm]) -> LogicalForm | None:
    """Pool element at minimal positive edit distance; earliest wins ties."""
    target = lf.linearization
    best, best_d = None, None
    for cand in pool:
        d = levenshtein(target, cand.linearization)
        if d > 0 and (best_d is None or d < best_d):
            best, best_d = cand, d
    return best


def corrupt(lf: LogicalForm, pool: list[LogicalForm], rng: np.random.Generator,
            strategy: str | None = None) -> LogicalForm:
    """A well-formed logical form different from ``lf``.

    With probability 1/2 a local edit is applied (swap an action for a
    same-signature kind, or one leaf for a same-role leaf seen in ``pool``);
    otherwise the nearest pool neighbour by edit distance is returned. When
    the drawn strategy has no candidate the other one is used. ``strategy``
    may force ``"edit"`` or ``"neighbor"``.
    """
    if not pool:
        raise CorruptionImpossible("empty pool")
    pick_edit = rng.random() < 0.5 if strategy is None else strategy == "edit"

    def edit() -> LogicalForm | None:
        kind_edits, leaf_edits = _local_edits(lf, pool)
        groups = [g for g in (kind_edits, leaf_edits) if g]
        if not groups:
            return None
        group = groups[int(rng.integers(len(groups)))]
        path, new = group[int(rng.integers(len(group)))]
        return LogicalForm(_replace(lf.root, path, new))

    order = (edit, lambda: nearest_neighbor(lf, pool))
    if not pick_edit:
        order = order[::-1]
    for attempt in order:
        out = attempt()
        if out is not None and out != lf:
            return out
    raise CorruptionImpossible(f"no corruption available for {lf.surface}")
