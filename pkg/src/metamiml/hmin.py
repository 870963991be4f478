"""Heterogeneous multi-instance network (HMIN) data model and text I/O.

An HMIN is a typed graph where exactly one node type holds *bags*: every
node of that type owns a dense ``n_i x d`` instance matrix and a (possibly
empty) set of label ids.  The on-disk format is line oriented::

    HMIN v1 [<n_nodes> <n_edges> <n_bags>]
    T <type_name> [BAG]
    R <relation_name> <type_a> <type_b> [DIRECTED]
    N <node_id> <type_name>
    E <relation_name> <src_id> <dst_id>
    L <label_id> <label_name>
    B <node_id> <n_i> <d>
    <n_i lines of d floats>
    Y <label_id> ...

Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class HminError(Exception):
    """Base class for HMIN loading errors.  ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedHeaderError(HminError):
    pass


class HminSyntaxError(HminError):
    pass


class DanglingEdgeError(HminError):
    pass


class DimensionMismatchError(HminError):
    pass


class DuplicateNodeError(HminError):
    pass


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class NodeType:
    name: str
    index: int
    is_bag: bool = False


@dataclass(frozen=True)
class Relation:
    name: str
    type_a: str
    type_b: str
    directed: bool = False


@dataclass(frozen=True)
class TypedEdge:
    src: int
    dst: int
    relation: str


@dataclass
class Bag:
    node: int
    instances: np.ndarray
    labels: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.instances = np.atleast_2d(np.asarray(self.instances, dtype=float))
        self.labels = frozenset(int(x) for x in self.labels)

    @property
    def n_instances(self) -> int:
        return self.instances.shape[0]


@dataclass(frozen=True)
class Finding:
    """One violated invariant reported by :func:`validate`."""

    code: str
    message: str


class Hmin:
    """Immutable-after-construction heterogeneous multi-instance network.

    ``adjacency`` maps ``node -> relation -> sorted neighbor ids``.  It is
    derived from ``edges`` unless passed explicitly (which exists mostly so
    that :func:`validate` can be exercised on inconsistent inputs).
    """

    def __init__(
        self,
        types: Sequence[NodeType],
        relations: Sequence[Relation],
        node_type: Mapping[int, str],
        edges: Sequence[TypedEdge],
        labels: Mapping[int, str],
        bags: Mapping[int, Bag],
        adjacency: Mapping[int, Mapping[str, Sequence[int]]] | None = None,
    ):
        self.types = {t.name: t for t in types}
        self.relations = {r.name: r for r in relations}
        self.node_type = dict(node_type)
        self.edges = list(edges)
        self.labels = dict(labels)
        self.bags = dict(bags)
        if adjacency is None:
            adjacency = _build_adjacency(self.node_type, self.edges, self.relations)
        self.adjacency = {
            v: {r: sorted(ns) for r, ns in rels.items()} for v, rels in adjacency.items()
        }
        self._typed: dict[int, dict[str, list[int]]] = {}
        for v, rels in self.adjacency.items():
            by_type: dict[str, set[int]] = {}
            for ns in rels.values():
                for u in ns:
                    t = self.node_type.get(u)
                    if t is not None:
                        by_type.setdefault(t, set()).add(u)
            self._typed[v] = {t: sorted(s) for t, s in by_type.items()}

    @property
    def bag_type(self) -> str | None:
        flagged = [t.name for t in self.types.values() if t.is_bag]
        return flagged[0] if len(flagged) == 1 else None

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def instance_dim(self) -> int | None:
        for bag in self.bags.values():
            return bag.instances.shape[1]
        return None

    def nodes_of_type(self, t: str) -> list[int]:
        return sorted(v for v, tt in self.node_type.items() if tt == t)

    def bag_nodes(self) -> list[int]:
        bt = self.bag_type
        return self.nodes_of_type(bt) if bt is not None else []

    def neighbors(self, node: int) -> list[int]:
        if node not in self.node_type:
            raise UnknownNodeError(node)
        out: set[int] = set()
        for ns in self.adjacency.get(node, {}).values():
            out.update(ns)
        return sorted(out)

    def relations_between(self, a: str, b: str) -> list[Relation]:
        """Relations that allow a step from type ``a`` to type ``b``."""
        out = []
        for r in self.relations.values():
            if r.type_a == a and r.type_b == b:
                out.append(r)
            elif not r.directed and r.type_a == b and r.type_b == a:
                out.append(r)
        return out

    def same_structure(self, other: "Hmin") -> bool:
        if self.types != other.types or self.relations != other.relations:
            return False
        if self.node_type != other.node_type or self.labels != other.labels:
            return False
        if sorted(self.edges, key=_edge_key) != sorted(other.edges, key=_edge_key):
            return False
        if self.bags.keys() != other.bags.keys():
            return False
        for v, bag in self.bags.items():
            o = other.bags[v]
            if bag.labels != o.labels or bag.instances.shape != o.instances.shape:
                return False
            if not np.array_equal(bag.instances, o.instances):
                return False
        return True

    def __repr__(self) -> str:
        return (
            f"Hmin(types={list(self.types)}, nodes={len(self.node_type)}, "
            f"edges={len(self.edges)}, bags={len(self.bags)}, labels={len(self.labels)})"
        )


def _edge_key(e: TypedEdge):
    return (e.relation, e.src, e.dst)


def _build_adjacency(node_type, edges, relations):
    adj: dict[int, dict[str, set[int]]] = {v: {} for v in node_type}
    for e in edges:
        adj.setdefault(e.src, {}).setdefault(e.relation, set()).add(e.dst)
        rel = relations.get(e.relation)
        if rel is None or not rel.directed:
            adj.setdefault(e.dst, {}).setdefault(e.relation, set()).add(e.src)
    return adj


def neighbors_of_type(g: Hmin, node: int, t: str | NodeType) -> list[int]:
    """Neighbors of ``node`` whose type is ``t``, sorted by id."""
    if node not in g.node_type:
        raise UnknownNodeError(node)
    name = t.name if isinstance(t, NodeType) else t
    return list(g._typed.get(node, {}).get(name, ()))


def validate(g: Hmin) -> list[Finding]:
    """Return every violated structural invariant of ``g`` (empty if valid)."""
    findings: list[Finding] = []
    flagged = [t.name for t in g.types.values() if t.is_bag]
    if len(flagged) != 1:
        findings.append(Finding("bag-type", f"expected exactly one bag type, found {flagged}"))
    names = [t.name for t in g.types.values()]
    if len(set(names)) != len(names):
        findings.append(Finding("type-names", "node type names are not unique"))

    for v, t in g.node_type.items():
        if t not in g.types:
            findings.append(Finding("node-type", f"node {v} has undeclared type {t!r}"))

    for r in g.relations.values():
        for t in (r.type_a, r.type_b):
            if t not in g.types:
                findings.append(Finding("relation-type", f"relation {r.name} uses undeclared type {t!r}"))

    for e in g.edges:
        for end in (e.src, e.dst):
            if end not in g.node_type:
                findings.append(Finding("dangling-edge", f"edge {e.relation} {e.src}-{e.dst} references unknown node {end}"))
        if e.relation not in g.relations:
            findings.append(Finding("edge-relation", f"edge {e.src}-{e.dst} uses undeclared relation {e.relation!r}"))

    for v, rels in g.adjacency.items():
        for r, ns in rels.items():
            rel = g.relations.get(r)
            if rel is None or rel.directed:
                continue
            for u in ns:
                if v not in g.adjacency.get(u, {}).get(r, ()):
                    findings.append(Finding("asymmetric-edge", f"undirected relation {r}: {v}->{u} present but {u}->{v} missing"))

    bt = flagged[0] if len(flagged) == 1 else None
    if bt is not None:
        for v in g.nodes_of_type(bt):
            if v not in g.bags:
                findings.append(Finding("missing-bag", f"bag node {v} has no Bag record"))
    dims = set()
    for v, bag in g.bags.items():
        if g.node_type.get(v) != bt:
            findings.append(Finding("bag-node-type", f"Bag record {v} is not a bag-type node"))
        if bag.instances.ndim != 2 or bag.instances.shape[0] < 1:
            findings.append(Finding("bag-empty", f"bag {v} has no instances"))
            continue
        dims.add(bag.instances.shape[1])
        if not np.all(np.isfinite(bag.instances)):
            findings.append(Finding("bag-nonfinite", f"bag {v} has non-finite features"))
        bad = [y for y in bag.labels if y not in g.labels]
        if bad:
            findings.append(Finding("bag-labels", f"bag {v} has labels outside the universe: {sorted(bad)}"))
    if len(dims) > 1:
        findings.append(Finding("instance-dim", f"bags disagree on instance dimension: {sorted(dims)}"))
    return findings


def _fmt(x: float) -> str:
    return repr(float(x))


def save_hmin(g: Hmin, path: str | Path) -> None:
    lines = [f"HMIN v1 {len(g.node_type)} {len(g.edges)} {len(g.bags)}"]
    for t in sorted(g.types.values(), key=lambda t: t.index):
        lines.append(f"T {t.name}" + (" BAG" if t.is_bag else ""))
    for r in g.relations.values():
        lines.append(f"R {r.name} {r.type_a} {r.type_b}" + (" DIRECTED" if r.directed else ""))
    for lid in sorted(g.labels):
        lines.append(f"L {lid} {g.labels[lid]}")
    for v in sorted(g.node_type):
        lines.append(f"N {v} {g.node_type[v]}")
    for e in g.edges:
        lines.append(f"E {e.relation} {e.src} {e.dst}")
    for v in sorted(g.bags):
        bag = g.bags[v]
        n, d = bag.instances.shape
        lines.append(f"B {v} {n} {d}")
        for row in bag.instances:
            lines.append(" ".join(_fmt(x) for x in row))
        lines.append(" ".join(["Y"] + [str(y) for y in sorted(bag.labels)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _content_lines(text: str) -> Iterable[tuple[int, list[str]]]:
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        yield no, s.split()


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise HminSyntaxError(f"{what} must be an integer, got {tok!r}", lineno) from None


def load_hmin(path: str | Path) -> Hmin:
    """Parse and validate an HMIN v1 file."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_hmin(text)


def parse_hmin(text: str) -> Hmin:
    it = iter(_content_lines(text))
    try:
        lineno, head = next(it)
    except StopIteration:
        raise MalformedHeaderError("empty file", 1) from None
    if head[:2] != ["HMIN", "v1"] or len(head) not in (2, 5):
        raise MalformedHeaderError(f"expected 'HMIN v1', got {' '.join(head)!r}", lineno)
    declared = None
    if len(head) == 5:
        declared = tuple(_int(x, lineno, "header count") for x in head[2:])

    types: list[NodeType] = []
    relations: list[Relation] = []
    node_type: dict[int, str] = {}
    edge_lines: list[tuple[int, TypedEdge]] = []
    labels: dict[int, str] = {}
    bags: dict[int, Bag] = {}
    bag_lines: dict[int, int] = {}
    dim: int | None = None

    while True:
        try:
            lineno, tok = next(it)
        except StopIteration:
            break
        kind = tok[0]
        if kind == "T":
            if len(tok) not in (2, 3) or (len(tok) == 3 and tok[2] != "BAG"):
                raise HminSyntaxError("expected 'T <name> [BAG]'", lineno)
            if any(t.name == tok[1] for t in types):
                raise HminSyntaxError(f"duplicate type {tok[1]!r}", lineno)
            types.append(NodeType(tok[1], len(types), len(tok) == 3))
        elif kind == "R":
            if len(tok) not in (4, 5) or (len(tok) == 5 and tok[4] != "DIRECTED"):
                raise HminSyntaxError("expected 'R <name> <type_a> <type_b> [DIRECTED]'", lineno)
            known = {t.name for t in types}
            for t in tok[2:4]:
                if t not in known:
                    raise HminSyntaxError(f"relation references undeclared type {t!r}", lineno)
            relations.append(Relation(tok[1], tok[2], tok[3], len(tok) == 5))
        elif kind == "N":
            if len(tok) != 3:
                raise HminSyntaxError("expected 'N <node_id> <type>'", lineno)
            v = _int(tok[1], lineno, "node id")
            if v < 0:
                raise HminSyntaxError("node ids are unsigned", lineno)
            if v in node_type:
                raise DuplicateNodeError(f"duplicate node id {v}", lineno)
            if not any(t.name == tok[2] for t in types):
                raise HminSyntaxError(f"node {v} has undeclared type {tok[2]!r}", lineno)
            node_type[v] = tok[2]
        elif kind == "E":
            if len(tok) != 4:
                raise HminSyntaxError("expected 'E <relation> <src> <dst>'", lineno)
            if not any(r.name == tok[1] for r in relations):
                raise HminSyntaxError(f"undeclared relation {tok[1]!r}", lineno)
            e = TypedEdge(_int(tok[2], lineno, "src"), _int(tok[3], lineno, "dst"), tok[1])
            edge_lines.append((lineno, e))
        elif kind == "L":
            if len(tok) < 3:
                raise HminSyntaxError("expected 'L <label_id> <name>'", lineno)
            lid = _int(tok[1], lineno, "label id")
            if lid in labels:
                raise HminSyntaxError(f"duplicate label id {lid}", lineno)
            labels[lid] = " ".join(tok[2:])
        elif kind == "B":
            if len(tok) != 4:
                raise HminSyntaxError("expected 'B <node_id> <n_i> <d>'", lineno)
            v = _int(tok[1], lineno, "bag node")
            n = _int(tok[2], lineno, "n_i")
            d = _int(tok[3], lineno, "d")
            if n < 1:
                raise HminSyntaxError(f"bag {v} must have at least one instance", lineno)
            if v in bags:
                raise DuplicateNodeError(f"duplicate bag record for node {v}", lineno)
            if dim is None:
                dim = d
            elif d != dim:
                raise DimensionMismatchError(f"bag {v} declares d={d} but earlier bags use d={dim}", lineno)
            rows = []
            for _ in range(n):
                try:
                    rl, vals = next(it)
                except StopIteration:
                    raise HminSyntaxError(f"bag {v}: file ended inside instance rows", lineno) from None
                if len(vals) != d:
                    raise DimensionMismatchError(
                        f"bag {v}: instance row has {len(vals)} values, expected d={d}", rl
                    )
                try:
                    rows.append([float(x) for x in vals])
                except ValueError:
                    raise HminSyntaxError(f"bag {v}: non-numeric instance value", rl) from None
            try:
                yl, ytok = next(it)
            except StopIteration:
                raise HminSyntaxError(f"bag {v}: missing 'Y' line", lineno) from None
            if ytok[0] != "Y":
                raise HminSyntaxError(f"bag {v}: expected 'Y' line after instances", yl)
            ys = frozenset(_int(x, yl, "label id") for x in ytok[1:])
            bags[v] = Bag(v, np.array(rows, dtype=float).reshape(n, d), ys)
            bag_lines[v] = lineno
        else:
            raise HminSyntaxError(f"unknown record kind {kind!r}", lineno)

    for lineno, e in edge_lines:
        for end in (e.src, e.dst):
            if end not in node_type:
                raise DanglingEdgeError(f"edge endpoint {end} is not a declared node", lineno)
    flagged = [t.name for t in types if t.is_bag]
    if len(flagged) != 1:
        raise HminSyntaxError(f"exactly one type must carry BAG, found {len(flagged)}")
    for v, lineno in bag_lines.items():
        if node_type.get(v) != flagged[0]:
            raise HminSyntaxError(f"bag record for node {v} which is not of bag type", lineno)
        bad = [y for y in bags[v].labels if y not in labels]
        if bad:
            raise HminSyntaxError(f"bag {v} uses undeclared labels {sorted(bad)}", lineno)
    for v, t in node_type.items():
        if t == flagged[0] and v not in bags:
            raise HminSyntaxError(f"bag node {v} has no 'B' record")

    g = Hmin(types, relations, node_type, [e for _, e in edge_lines], labels, bags)
    if declared is not None:
        actual = (len(node_type), len(g.edges), len(bags))
        if declared != actual:
            raise MalformedHeaderError(f"header counts {declared} disagree with content {actual}", 1)
    return g
