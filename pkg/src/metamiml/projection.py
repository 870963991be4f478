"""Very sparse random projection of ``instance ⊕ context`` rows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class ProjectionMatrix:
    """``u x k`` matrix with entries in ``{+c, 0, -c}``, ``c = sqrt(s/k)``."""

    matrix: sparse.csr_matrix
    s: float
    seed: int | None
    _dense: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_dense", self.matrix.toarray())
        self._dense.setflags(write=False)

    @property
    def u(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    @property
    def dense(self) -> np.ndarray:
        return self._dense

    @classmethod
    def from_dense(cls, E: np.ndarray, s: float = 1.0) -> "ProjectionMatrix":
        """Wrap an arbitrary matrix; intended for tests and toy chains."""
        return cls(sparse.csr_matrix(np.asarray(E, dtype=float)), s, None)

    def __eq__(self, other):
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return (
            self.s == other.s
            and self.matrix.shape == other.matrix.shape
            and np.array_equal(self.dense, other.dense)
        )

    __hash__ = None


def default_sparsity(n_bags: int, policy: str = "sqrt") -> float:
    """``sqrt(n)`` or ``n / log(n)``, never below 1."""
    n = max(int(n_bags), 1)
    if policy == "sqrt":
        s = math.sqrt(n)
    elif policy == "log":
        s = n / math.log(n) if n > 1 else 1.0
    else:
        raise ValueError(f"unknown sparsity policy {policy!r}")
    return max(1.0, s)


def make_projection(u: int, k: int, s: float, seed: int) -> ProjectionMatrix:
    if u < 1 or k < 1:
        raise ValueError("u and k must be >= 1")
    if s < 1:
        raise ValueError("sparsity s must be >= 1")
    rng = np.random.default_rng(seed)
    r = rng.random((u, k))
    sign = np.zeros((u, k))
    sign[r < 0.5 / s] = 1.0
    sign[(r >= 0.5 / s) & (r < 1.0 / s)] = -1.0
    m = sparse.csr_matrix(sign * math.sqrt(s / k))
    return ProjectionMatrix(m, float(s), int(seed))


def project(instances: np.ndarray, context: np.ndarray, E: ProjectionMatrix) -> np.ndarray:
    """Rows ``(x_j ⊕ context) @ E`` for every instance row ``x_j``."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    context = np.asarray(context, dtype=float).ravel()
    n, d = instances.shape
    if d + context.size != E.u:
        raise ValueError(f"dimension mismatch: d={d} + d_l={context.size} != u={E.u}")
    Ed = E.dense
    # the context block is shared by every row
    return instances @ Ed[:d] + context @ Ed[d:]


def context_gradient(grad_out: np.ndarray, d: int, E: ProjectionMatrix) -> np.ndarray:
    """Pull ``dL/dX̂`` (n x k) back to ``dL/dcontext`` (length d_l)."""
    grad_out = np.atleast_2d(grad_out)
    if grad_out.shape[1] != E.k:
        raise ValueError(f"gradient has {grad_out.shape[1]} columns, expected k={E.k}")
    return E.dense[d:] @ grad_out.sum(axis=0)


@dataclass
class ProjectedBag:
    bag: int
    path: int
    X: np.ndarray


def project_bag(bag, context: np.ndarray, E: ProjectionMatrix, path: int = 0) -> ProjectedBag:
    X = project(bag.instances, context, E)
    return ProjectedBag(bag.node, path, X)


def save_projection(E: ProjectionMatrix, path: str | Path) -> None:
    coo = E.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"SRP v1 {E.u} {E.k} {E.s!r} {E.seed if E.seed is not None else -1}"]
    for i in order:
        lines.append(f"{coo.row[i]} {coo.col[i]} {'+' if coo.data[i] > 0 else '-'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_projection(path: str | Path) -> ProjectionMatrix:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if head[:2] != ["SRP", "v1"]:
        raise ValueError(f"{path}: not a projection file")
    u, k, s, seed = int(head[2]), int(head[3]), float(head[4]), int(head[5])
    c = math.sqrt(s / k)
    rows, cols, vals = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        r, col, sg = line.split()
        rows.append(int(r))
        cols.append(int(col))
        vals.append(c if sg == "+" else -c)
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(u, k))
    return ProjectionMatrix(m, s, None if seed < 0 else seed)
