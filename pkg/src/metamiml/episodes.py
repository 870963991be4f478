"""Source/target splits and per-bag support/query tasks."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .hmin import Hmin
from .walks import MetaPath, WalkCorpus


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitSpec:
    source_labels: tuple[int, ...]
    target_labels: tuple[int, ...]
    source_bags: tuple[int, ...]
    target_bags: tuple[int, ...]
    seed: int
    ratio: float = 0.8

    def label_pool(self, bag: int) -> tuple[int, ...]:
        if bag in self.source_bags:
            return self.source_labels
        if bag in self.target_bags:
            return self.target_labels
        raise KeyError(f"bag {bag} is not in the split")


def _partition(items: Sequence[int], ratio: float, rng: np.random.Generator):
    items = np.asarray(sorted(items), dtype=np.int64)
    n_src = min(max(round_half_up(ratio * len(items)), 1), len(items) - 1)
    perm = rng.permutation(len(items))
    return tuple(sorted(items[perm[:n_src]].tolist())), tuple(sorted(items[perm[n_src:]].tolist()))


def split_source_target(g: Hmin, ratio: float = 0.8, seed: int = 0) -> SplitSpec:
    """Uniform random disjoint split of labels and of bags at ``ratio``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    labels, bags = sorted(g.labels), g.bag_nodes()
    if len(labels) < 2 or len(bags) < 2:
        raise ValueError("need at least 2 labels and 2 bags to split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    src_l, tgt_l = _partition(labels, ratio, rng)
    src_b, tgt_b = _partition(bags, ratio, rng)
    return SplitSpec(src_l, tgt_l, src_b, tgt_b, seed, ratio)


def save_split(split: SplitSpec, path: str | Path) -> None:
    lines = [
        f"SPLIT v1 seed={split.seed} ratio={split.ratio!r}",
        "source_labels " + " ".join(map(str, split.source_labels)),
        "target_labels " + " ".join(map(str, split.target_labels)),
        "source_bags " + " ".join(map(str, split.source_bags)),
        "target_bags " + " ".join(map(str, split.target_bags)),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> SplitSpec:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if head[:2] != ["SPLIT", "v1"]:
        raise ValueError(f"{path}: not a split file")
    meta = dict(t.split("=", 1) for t in head[2:])
    parts = {}
    for line in lines[1:5]:
        key, *vals = line.split()
        parts[key] = tuple(int(v) for v in vals)
    return SplitSpec(
        parts["source_labels"], parts["target_labels"], parts["source_bags"],
        parts["target_bags"], int(meta["seed"]), float(meta["ratio"]),
    )


@dataclass
class TaskSide:
    direct: tuple[int, ...]
    paths: dict[int, tuple[int, ...]]
    labels: tuple[int, ...]
    y: np.ndarray


@dataclass
class Task:
    bag: int
    support: TaskSide
    query: TaskSide
    isolated: bool = False
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.bag == other.bag
            and self.isolated == other.isolated
            and all(
                a.direct == b.direct and a.paths == b.paths and a.labels == b.labels and np.array_equal(a.y, b.y)
                for a, b in ((self.support, other.support), (self.query, other.query))
            )
        )


def build_task(
    g: Hmin,
    bag: int,
    paths: Sequence[MetaPath],
    split: SplitSpec | None,
    query_labels: int,
    seed: int,
    corpus: WalkCorpus | None = None,
    pool: Sequence[int] | None = None,
) -> Task:
    """One task per bag: disjoint support/query labels and direct contexts.

    ``pool`` overrides the split's label pool for the bag.  Direct neighbors
    alternate between support (even position) and query (odd position) in
    sorted-id order; a walk's nodes belong to whichever side holds its first
    hop.
    """
    if pool is None:
        if split is None:
            raise ValueError("either a split or an explicit label pool is required")
        pool = split.label_pool(bag)
    pool = tuple(sorted(int(x) for x in pool))
    if not 1 <= query_labels < len(pool):
        raise ValueError(f"query_labels={query_labels} must be in [1, {len(pool) - 1}] for a pool of {len(pool)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, bag]))
    chosen = set(rng.choice(len(pool), size=query_labels, replace=False).tolist())
    q_labels = tuple(pool[i] for i in range(len(pool)) if i in chosen)
    s_labels = tuple(pool[i] for i in range(len(pool)) if i not in chosen)
    truth = g.bags[bag].labels

    nbrs = g.neighbors(bag)
    isolated = not nbrs
    if isolated:
        warnings.warn(f"bag {bag} has no neighbors; task has empty direct context", stacklevel=2)
    s_dir = tuple(nbrs[0::2])
    q_dir = tuple(nbrs[1::2])

    s_paths: dict[int, tuple[int, ...]] = {}
    q_paths: dict[int, tuple[int, ...]] = {}
    for pi in range(len(paths)):
        s_nodes: set[int] = set()
        q_nodes: set[int] = set()
        if corpus is not None:
            for w in corpus.walks_from(pi, bag):
                if len(w.nodes) < 2:
                    continue
                target = s_nodes if w.nodes[1] in s_dir else q_nodes
                target.update(v for v in w.nodes if v != bag)
        s_paths[pi] = tuple(sorted(s_nodes))
        q_paths[pi] = tuple(sorted(q_nodes))

    def indicator(ls):
        return np.array([1.0 if l in truth else 0.0 for l in ls])

    return Task(
        bag,
        TaskSide(s_dir, s_paths, s_labels, indicator(s_labels)),
        TaskSide(q_dir, q_paths, q_labels, indicator(q_labels)),
        isolated,
    )


def build_tasks(
    g: Hmin,
    bags: Sequence[int],
    paths: Sequence[MetaPath],
    split: SplitSpec | None,
    query_labels: int,
    seed: int,
    corpus: WalkCorpus | None = None,
    pool: Sequence[int] | None = None,
) -> list[Task]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [build_task(g, b, paths, split, query_labels, seed, corpus, pool) for b in bags]
