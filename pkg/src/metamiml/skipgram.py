"""Per-meta-path skip-gram with type-aware negative sampling.

Each meta-path gets its own :class:`EmbeddingTable`.  A bag's context vector
for that path is ``leaky_relu(W[bag] + b)``; ``W`` and ``b`` are what the
meta-learner later adapts and updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hmin import Hmin, UnknownNodeError
from .walks import WalkCorpus


@dataclass(frozen=True)
class SgConfig:
    dim: int = 16
    window: int = 4
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    slope: float = 0.01
    seed: int = 0
    batch_size: int = 1024

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if not 0.0 < self.slope < 1.0:
            raise ValueError("leaky-ReLU slope must lie in (0, 1)")
        if self.dim < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("dim, batch_size must be positive and epochs non-negative")


@dataclass
class EmbeddingTable:
    node_ids: np.ndarray
    W: np.ndarray
    C: np.ndarray
    b: np.ndarray
    path: str
    slope: float = 0.01
    _row: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._row = {int(v): i for i, v in enumerate(self.node_ids)}

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def row(self, node: int) -> int:
        try:
            return self._row[int(node)]
        except KeyError:
            raise UnknownNodeError(node) from None

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.node_ids.copy(), self.W.copy(), self.C.copy(), self.b.copy(), self.path, self.slope)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def init_table(node_ids, dim: int, path: str, rng: np.random.Generator, slope: float = 0.01) -> EmbeddingTable:
    node_ids = np.asarray(sorted(int(v) for v in node_ids), dtype=np.int64)
    bound = 0.5 / dim
    W = rng.uniform(-bound, bound, size=(len(node_ids), dim))
    C = rng.uniform(-bound, bound, size=(len(node_ids), dim))
    return EmbeddingTable(node_ids, W, C, np.zeros(dim), path, slope)


def training_pairs(nodes, window: int) -> list[tuple[int, int]]:
    """(center, context) pairs of one walk, center-major order."""
    out = []
    n = len(nodes)
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                out.append((nodes[i], nodes[j]))
    return out


def _pair_arrays(corpus: WalkCorpus, p: int, window: int, row_of: dict[int, int]):
    centers, contexts = [], []
    for w in corpus.walks.get(p, []):
        rows = [row_of[v] for v in w.nodes]
        for c, x in training_pairs(rows, window):
            centers.append(c)
            contexts.append(x)
    return np.asarray(centers, dtype=np.int64), np.asarray(contexts, dtype=np.int64)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _TypedNegatives:
    """Unigram^(3/4) sampler restricted to a node type."""

    def __init__(self, corpus: WalkCorpus, p: int, row_of: dict[int, int], node_type: np.ndarray):
        counts = np.zeros(len(node_type))
        for w in corpus.walks.get(p, []):
            for v in w.nodes:
                counts[row_of[v]] += 1
        self.node_type = node_type
        # one concatenated CDF; type slot j occupies (j, j + 1]
        self.slot = np.full(int(node_type.max()) + 1, -1, dtype=np.int64)
        rows_all, cdf_all = [], []
        for j, t in enumerate(np.unique(node_type)):
            rows = np.flatnonzero((node_type == t) & (counts > 0))
            if len(rows):
                weight = counts[rows] ** 0.75
                cdf = np.cumsum(weight) / weight.sum()
                cdf[-1] = 1.0
                self.slot[t] = len(rows_all)
                rows_all.append(rows)
                cdf_all.append(cdf + len(cdf_all))
        self.rows = np.concatenate(rows_all)
        self.cdf = np.concatenate(cdf_all)

    def draw(self, contexts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((len(contexts), k))
        slot = self.slot[self.node_type[contexts]]
        if np.any(slot < 0):
            raise ValueError("context node has a type that never occurs in the walks")
        idx = np.searchsorted(self.cdf, u + slot[:, None], side="right")
        return self.rows[np.minimum(idx, len(self.rows) - 1)]


def _scatter_add(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``target[rows] += values`` with repeated rows summed, in a fixed order."""
    n, dim = target.shape
    flat = (rows[:, None] * dim + np.arange(dim)).ravel()
    target += np.bincount(flat, weights=values.ravel(), minlength=n * dim).reshape(n, dim)


def negative_sampling_loss(table: EmbeddingTable, centers, contexts, negatives) -> float:
    """Mean negative-sampling objective (to be minimized) over the given pairs."""
    w = table.W[centers]
    pos = np.einsum("ij,ij->i", w, table.C[contexts])
    neg = np.einsum("ij,ikj->ik", w, table.C[negatives])
    loss = -np.log(_sigmoid(pos) + 1e-12) - np.log(_sigmoid(-neg) + 1e-12).sum(axis=1)
    return float(loss.mean())


def train_skipgram(
    corpus: WalkCorpus,
    p: int,
    cfg: SgConfig,
    g: Hmin | None = None,
    node_ids=None,
    history: list | None = None,
) -> EmbeddingTable:
    """Train the embedding table of meta-path ``p`` on its walks.

    Mini-batch SGD on the negative-sampling objective; updates inside a batch
    are summed per row in a fixed order so results are deterministic under
    ``cfg.seed``.  Negatives for a pair are drawn from nodes of the context
    node's type.  If ``history`` is given, per-epoch mean losses are appended.
    """
    walks = corpus.walks.get(p, [])
    if not walks:
        raise ValueError(f"corpus has no walks for path index {p}")
    if node_ids is None:
        if g is not None:
            node_ids = sorted(g.node_type)
        else:
            node_ids = sorted({v for w in walks for v in w.nodes})
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, p]))
    table = init_table(node_ids, cfg.dim, str(corpus.paths[p]), rng, cfg.slope)
    if cfg.epochs == 0:
        return table
    row_of = table._row
    if g is not None:
        type_names = sorted(g.types)
        node_type = np.array([type_names.index(g.node_type[int(v)]) for v in table.node_ids])
    else:
        node_type = np.zeros(len(table.node_ids), dtype=np.int64)
    sampler = _TypedNegatives(corpus, p, row_of, node_type)
    centers, contexts = _pair_arrays(corpus, p, cfg.window, row_of)
    W, C = table.W, table.C
    bs = cfg.batch_size
    for _ in range(cfg.epochs):
        order = rng.permutation(len(centers))
        total, count = 0.0, 0
        for start in range(0, len(order), bs):
            sel = order[start : start + bs]
            c, x = centers[sel], contexts[sel]
            n = sampler.draw(x, cfg.negatives, rng)
            wc = W[c]
            cx = C[x]
            cn = C[n]
            pos = np.einsum("ij,ij->i", wc, cx)
            neg = np.einsum("ij,ikj->ik", wc, cn)
            sp, sn = _sigmoid(pos), _sigmoid(neg)
            total += float((-np.log(sp + 1e-12) - np.log(1.0 - sn + 1e-12).sum(axis=1)).sum())
            count += len(sel)
            gp = (sp - 1.0)[:, None]
            gw = gp * cx + np.einsum("ik,ikj->ij", sn, cn)
            gcx = gp * wc
            gcn = sn[:, :, None] * wc[:, None, :]
            _scatter_add(W, c, -cfg.lr * gw)
            _scatter_add(C, np.concatenate([x, n.ravel()]), -cfg.lr * np.vstack([gcx, gcn.reshape(-1, cfg.dim)]))
        if history is not None:
            history.append(total / max(count, 1))
    return table


def context_from_row(w_row: np.ndarray, b: np.ndarray, slope: float) -> tuple[np.ndarray, np.ndarray]:
    """Context vector and its elementwise derivative w.r.t. ``w_row + b``."""
    pre = w_row + b
    return leaky_relu(pre, slope), leaky_relu_grad(pre, slope)


def bag_context(table: EmbeddingTable, bag: int) -> np.ndarray:
    return context_from_row(table.W[table.row(bag)], table.b, table.slope)[0]


def save_embedding(table: EmbeddingTable, path: str | Path) -> None:
    lines = [f"SGEMB v1 {len(table.node_ids)} {table.dim} {table.path} slope={table.slope!r}"]
    for v, row in zip(table.node_ids, table.W):
        lines.append(f"{int(v)} " + " ".join(repr(float(x)) for x in row))
    lines.append("BIAS " + " ".join(repr(float(x)) for x in table.b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding(path: str | Path) -> EmbeddingTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if head[:2] != ["SGEMB", "v1"]:
        raise ValueError(f"{path}: not an embedding file")
    n, dim, pname = int(head[2]), int(head[3]), head[4]
    slope = 0.01
    for tok in head[5:]:
        if tok.startswith("slope="):
            slope = float(tok.split("=", 1)[1])
    ids = np.empty(n, dtype=np.int64)
    W = np.empty((n, dim))
    for i, line in enumerate(lines[1 : n + 1]):
        tok = line.split()
        ids[i] = int(tok[0])
        W[i] = [float(x) for x in tok[1:]]
    bias = lines[n + 1].split()
    if bias[0] != "BIAS":
        raise ValueError(f"{path}: missing BIAS line")
    b = np.array([float(x) for x in bias[1:]])
    return EmbeddingTable(ids, W, np.zeros_like(W), b, pname, slope)
