"""Planted-community synthetic HMIN generator.

Bags and auxiliary nodes are assigned to communities.  Each community owns a
block of labels; a bag carries its community's labels (with rare random
flips) and its instances are noisy copies of the centroids of its labels.
The returned manifest records the ground truth and a nearest-centroid
oracle score; the learner never reads it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hmin import Bag, Hmin, NodeType, Relation, TypedEdge


@dataclass(frozen=True)
class SynthConfig:
    n_bags: int = 60
    aux_types: tuple[str, ...] = ("D", "M")
    aux_counts: tuple[int, ...] = (40, 40)
    q: int = 12
    communities: int = 3
    d: int = 16
    instances: tuple[int, int] = (4, 10)
    sigma_f: float = 0.5
    eps: float = 0.05
    degree: int = 4
    label_flip: float = 0.02
    seed: int = 0
    bag_type: str = "G"

    def validate(self) -> None:
        if self.communities > self.q:
            raise ValueError(f"infeasible config: {self.communities} communities but only {self.q} labels")
        if not 0.0 <= self.eps < 0.5:
            raise ValueError("eps must lie in [0, 0.5)")
        if len(self.aux_types) != len(self.aux_counts):
            raise ValueError("aux_types and aux_counts must have equal length")
        counts = [self.n_bags, self.q, self.communities, self.d, self.degree, *self.aux_counts]
        if min(counts) < 1 or self.instances[0] < 1 or self.instances[1] < self.instances[0]:
            raise ValueError("all counts must be positive")
        if min(self.aux_counts) < self.communities:
            raise ValueError("each auxiliary type needs at least one node per community")
        if self.sigma_f < 0 or not 0.0 <= self.label_flip < 1.0:
            raise ValueError("sigma_f must be >= 0 and label_flip in [0, 1)")
        if self.bag_type in self.aux_types:
            raise ValueError("bag type name clashes with an auxiliary type")


@dataclass
class SynthManifest:
    config: dict
    bag_community: dict[int, int]
    aux_community: dict[int, int]
    label_community: dict[int, int]
    centroids: list[list[float]]
    instance_labels: dict[int, list[int]]
    oracle_macro_f1: float
    edge_density: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SynthManifest":
        raw = json.loads(text)
        for key in ("bag_community", "aux_community", "label_community", "instance_labels"):
            raw[key] = {int(k): v for k, v in raw[key].items()}
        raw["config"] = {k: tuple(v) if isinstance(v, list) else v for k, v in raw["config"].items()}
        return cls(**raw)


def make_centroids(q: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm label centroids: one-hot corners when ``d >= q``."""
    if d >= q:
        return np.eye(q, d)
    C = rng.normal(size=(q, d))
    return C / np.linalg.norm(C, axis=1, keepdims=True)


def nearest_centroid(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _macro_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    tp = (pred & truth).sum(axis=0)
    fp = (pred & ~truth).sum(axis=0)
    fn = (~pred & truth).sum(axis=0)
    active = (tp + fp + fn) > 0
    return float((2 * tp[active] / (2 * tp[active] + fp[active] + fn[active])).mean())


def oracle_bag_predictions(g: Hmin, centroids: np.ndarray, label_community: dict[int, int]) -> dict[int, set[int]]:
    """Nearest community-centroid oracle over each bag's mean instance."""
    comms = sorted(set(label_community.values()))
    comm_centroids = np.array(
        [centroids[[l for l, c in label_community.items() if c == k]].mean(axis=0) for k in comms]
    )
    out = {}
    for v, bag in g.bags.items():
        k = comms[int(nearest_centroid(bag.instances.mean(axis=0, keepdims=True), comm_centroids)[0])]
        out[v] = {l for l, c in label_community.items() if c == k}
    return out


def generate_synthetic(cfg: SynthConfig = SynthConfig()) -> tuple[Hmin, SynthManifest]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c = cfg.communities

    label_comm = {l: l * c // cfg.q for l in range(cfg.q)}
    bag_ids = list(range(cfg.n_bags))
    bag_comm = {v: int(k) for v, k in zip(bag_ids, rng.permutation(np.arange(cfg.n_bags) % c))}

    types = [NodeType(cfg.bag_type, 0, True)] + [NodeType(t, i + 1) for i, t in enumerate(cfg.aux_types)]
    relations = [Relation(f"{cfg.bag_type}{t}", cfg.bag_type, t) for t in cfg.aux_types]
    node_type = {v: cfg.bag_type for v in bag_ids}
    aux_comm: dict[int, int] = {}
    aux_by_type_comm: dict[str, list[list[int]]] = {}
    nxt = cfg.n_bags
    for t, count in zip(cfg.aux_types, cfg.aux_counts):
        ids = list(range(nxt, nxt + count))
        nxt += count
        comms = rng.permutation(np.arange(count) % c)
        buckets: list[list[int]] = [[] for _ in range(c)]
        for v, k in zip(ids, comms):
            node_type[v] = t
            aux_comm[v] = int(k)
            buckets[int(k)].append(v)
        aux_by_type_comm[t] = buckets

    edges: list[TypedEdge] = []
    within = across = 0
    for v in bag_ids:
        k = bag_comm[v]
        for t, rel in zip(cfg.aux_types, relations):
            buckets = aux_by_type_comm[t]
            chosen: list[int] = []
            for _ in range(cfg.degree):
                if c > 1 and rng.random() < cfg.eps:
                    other = [j for j in range(c) if j != k]
                    kk = other[int(rng.integers(len(other)))]
                else:
                    kk = k
                u = buckets[kk][int(rng.integers(len(buckets[kk])))]
                if u not in chosen:
                    chosen.append(u)
            for u in chosen:
                edges.append(TypedEdge(v, u, rel.name))
                if aux_comm[u] == k:
                    within += 1
                else:
                    across += 1

    centroids = make_centroids(cfg.q, cfg.d, rng)
    bags: dict[int, Bag] = {}
    inst_labels: dict[int, list[int]] = {}
    for v in bag_ids:
        k = bag_comm[v]
        labs = {l for l, cc in label_comm.items() if cc == k}
        flips = rng.random(cfg.q) < cfg.label_flip
        for l in np.flatnonzero(flips):
            labs ^= {int(l)}
        n = int(rng.integers(cfg.instances[0], cfg.instances[1] + 1))
        pool = sorted(labs) or sorted(l for l, cc in label_comm.items() if cc == k)
        which = [pool[int(i)] for i in rng.integers(len(pool), size=n)]
        X = centroids[which] + cfg.sigma_f * rng.normal(size=(n, cfg.d))
        bags[v] = Bag(v, X, frozenset(labs))
        inst_labels[v] = which

    labels = {l: f"L{l}" for l in range(cfg.q)}
    g = Hmin(types, relations, node_type, edges, labels, bags)

    oracle = oracle_bag_predictions(g, centroids, label_comm)
    truth = np.array([[l in bags[v].labels for l in range(cfg.q)] for v in bag_ids])
    pred = np.array([[l in oracle[v] for l in range(cfg.q)] for v in bag_ids])

    n_aux = sum(cfg.aux_counts)
    pairs_within = sum(
        sum(1 for u in aux_comm if aux_comm[u] == bag_comm[v]) for v in bag_ids
    )
    pairs_across = cfg.n_bags * n_aux - pairs_within
    density = {
        "within": within / pairs_within if pairs_within else 0.0,
        "across": across / pairs_across if pairs_across else 0.0,
    }
    cfg_dict = asdict(cfg)
    manifest = SynthManifest(
        cfg_dict, bag_comm, aux_comm, label_comm, centroids.tolist(), inst_labels,
        _macro_f1(pred, truth), density,
    )
    return g, manifest
