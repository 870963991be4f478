"""Meta-path parsing and meta-path constrained random walks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .hmin import Hmin, UnknownNodeError, neighbors_of_type


class MetaPathError(ValueError):
    pass


@dataclass(frozen=True)
class MetaPath:
    types: tuple[str, ...]

    def __post_init__(self):
        if len(self.types) < 2:
            raise MetaPathError("a meta-path needs at least two node types")

    def __str__(self) -> str:
        return "-".join(self.types)

    @property
    def cycle(self) -> tuple[str, ...]:
        # closed paths (G-D-G) repeat without doubling the shared endpoint
        if self.types[0] == self.types[-1]:
            return self.types[:-1]
        return self.types

    def type_at(self, step: int) -> str:
        c = self.cycle
        return c[step % len(c)]


def parse_metapath(text: str, g: Hmin) -> MetaPath:
    names = [t.strip() for t in text.strip().split("-")]
    if any(not n for n in names):
        raise MetaPathError(f"malformed meta-path {text!r}")
    for n in names:
        if n not in g.types:
            raise MetaPathError(f"unknown node type {n!r} in meta-path {text!r}")
    if names[0] != g.bag_type:
        raise MetaPathError(f"meta-path {text!r} must start at the bag type {g.bag_type!r}")
    for a, b in zip(names, names[1:]):
        if not g.relations_between(a, b):
            raise MetaPathError(f"no relation connects {a!r} to {b!r} in meta-path {text!r}")
    return MetaPath(tuple(names))


@dataclass(frozen=True)
class Walk:
    nodes: tuple[int, ...]
    path_index: int
    start: int


def sample_walk(g: Hmin, start: int, p: MetaPath, length: int, rng: np.random.Generator) -> Walk:
    """Walk of at most ``length`` steps following ``p`` cyclically.

    Each step picks uniformly among neighbors of the required type; the walk
    stops early when no such neighbor exists.
    """
    if start not in g.node_type:
        raise UnknownNodeError(start)
    if g.node_type[start] != p.types[0] or g.node_type[start] != g.bag_type:
        raise MetaPathError(f"walk start {start} is not a bag node")
    if length < 1:
        raise ValueError("walk length must be >= 1")
    nodes = [start]
    cur = start
    for step in range(1, length + 1):
        nbrs = neighbors_of_type(g, cur, p.type_at(step))
        if not nbrs:
            break
        cur = nbrs[int(rng.integers(len(nbrs)))]
        nodes.append(cur)
    return Walk(tuple(nodes), -1, start)


@dataclass
class WalkCorpus:
    paths: list[MetaPath]
    walks: dict[int, list[Walk]]
    num_walks: int
    walk_length: int
    seed: int
    _by_start: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return sum(len(ws) for ws in self.walks.values())

    def walks_from(self, path_index: int, start: int) -> list[Walk]:
        key = path_index
        if key not in self._by_start:
            idx: dict[int, list[Walk]] = {}
            for w in self.walks.get(path_index, []):
                idx.setdefault(w.start, []).append(w)
            self._by_start[key] = idx
        return self._by_start[key].get(start, [])


def _walk_stream(seed: int, bag: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, bag, path_index]))


def generate_corpus(
    g: Hmin,
    paths: Sequence[MetaPath],
    num_walks: int = 10,
    walk_length: int = 40,
    seed: int = 0,
    threads: int = 1,
) -> WalkCorpus:
    """``num_walks`` walks per bag node per meta-path.

    Every (bag, path) pair draws from its own RNG stream, so the result does
    not depend on ``threads``.
    """
    if not paths:
        raise ValueError("at least one meta-path is required")
    bags = g.bag_nodes()
    jobs = [(pi, b) for pi in range(len(paths)) for b in bags]

    def run(job):
        pi, b = job
        rng = _walk_stream(seed, b, pi)
        out = []
        for _ in range(num_walks):
            w = sample_walk(g, b, paths[pi], walk_length, rng)
            out.append(Walk(w.nodes, pi, b))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    walks: dict[int, list[Walk]] = {pi: [] for pi in range(len(paths))}
    for (pi, _), ws in zip(jobs, results):
        walks[pi].extend(ws)
    return WalkCorpus(list(paths), walks, num_walks, walk_length, seed)


def check_walk(g: Hmin, walk: Walk, p: MetaPath) -> list[str]:
    """Violations of the type-pattern and adjacency invariants (empty if none)."""
    problems = []
    for i, v in enumerate(walk.nodes):
        if g.node_type.get(v) != p.type_at(i):
            problems.append(f"position {i}: node {v} has type {g.node_type.get(v)!r}, expected {p.type_at(i)!r}")
    for a, b in zip(walk.nodes, walk.nodes[1:]):
        if b not in g.neighbors(a):
            problems.append(f"{a}->{b} is not an edge")
    return problems


def save_corpus(corpus: WalkCorpus, path: str | Path) -> None:
    lines = [
        f"# WALKS v1 num_walks={corpus.num_walks} walk_length={corpus.walk_length} seed={corpus.seed}",
        "# paths=" + ",".join(str(p) for p in corpus.paths),
    ]
    for pi in sorted(corpus.walks):
        for w in corpus.walks[pi]:
            lines.append(f"P{pi} " + " ".join(str(v) for v in w.nodes))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> WalkCorpus:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith("# WALKS v1"):
        raise ValueError(f"{path}: not a walk corpus file")
    meta = dict(kv.split("=", 1) for kv in lines[0].split()[3:])
    path_text = lines[1].split("=", 1)[1]
    paths = [MetaPath(tuple(s.split("-"))) for s in path_text.split(",") if s]
    walks: dict[int, list[Walk]] = {pi: [] for pi in range(len(paths))}
    for line in lines[2:]:
        if not line.strip():
            continue
        tag, *rest = line.split()
        pi = int(tag[1:])
        nodes = tuple(int(x) for x in rest)
        walks[pi].append(Walk(nodes, pi, nodes[0]))
    return WalkCorpus(paths, walks, int(meta["num_walks"]), int(meta["walk_length"]), int(meta["seed"]))
