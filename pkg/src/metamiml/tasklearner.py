"""Bag/instance task learner with hand-written backpropagation.

Architecture (``S`` is the active label subset of a task)::

    H1 = lrelu(X W1 + b1)            # n x h1
    H2 = lrelu(H1 W2 + b2)           # n x h2, shared trunk
    Z  = softmax_rows(H2 Wi[:, S] + bi[S])          # instance scores
    g  = softmax(colmax(H2) Wb[:, S] + bb[S])       # bag scores

    loss = ||y - g||^2 + ||g - colmax(Z)||^2
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wi", "bi", "Wb", "bb")
DEFAULT_SLOPE = 0.01


class OmegaParams:
    """Named collection of the task learner's weights.

    Supports ``+``, ``-``, scalar ``*`` and elementwise ``*`` between two
    parameter sets of the same shape.
    """

    __slots__ = ("arrays",)

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.arrays = {n: np.asarray(arrays[n], dtype=float) for n in PARAM_NAMES}
        k, h1 = self.arrays["W1"].shape
        h1b, h2 = self.arrays["W2"].shape
        q = self.arrays["Wi"].shape[1]
        expected = {
            "W1": (k, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,),
            "Wi": (h2, q), "bi": (q,), "Wb": (h2, q), "bb": (q,),
        }
        for n, shp in expected.items():
            if self.arrays[n].shape != shp:
                raise ValueError(f"{n} has shape {self.arrays[n].shape}, expected {shp}")

    @classmethod
    def init(cls, k: int, h1: int, h2: int, q: int, rng: np.random.Generator) -> "OmegaParams":
        """He-normal trunk, Glorot-normal heads, zero biases."""
        return cls({
            "W1": rng.normal(0.0, np.sqrt(2.0 / k), (k, h1)),
            "b1": np.zeros(h1),
            "W2": rng.normal(0.0, np.sqrt(2.0 / h1), (h1, h2)),
            "b2": np.zeros(h2),
            "Wi": rng.normal(0.0, np.sqrt(2.0 / (h2 + q)), (h2, q)),
            "bi": np.zeros(q),
            "Wb": rng.normal(0.0, np.sqrt(2.0 / (h2 + q)), (h2, q)),
            "bb": np.zeros(q),
        })

    @classmethod
    def zeros_like(cls, other: "OmegaParams") -> "OmegaParams":
        return cls({n: np.zeros_like(a) for n, a in other.arrays.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(PARAM_NAMES)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """``(k, h1, h2, q)``."""
        k, h1 = self.arrays["W1"].shape
        return k, h1, self.arrays["W2"].shape[1], self.arrays["Wi"].shape[1]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in PARAM_NAMES])

    @classmethod
    def from_flat(cls, like: "OmegaParams", vec: np.ndarray) -> "OmegaParams":
        out, i = {}, 0
        for n in PARAM_NAMES:
            a = like.arrays[n]
            out[n] = np.asarray(vec[i : i + a.size], dtype=float).reshape(a.shape).copy()
            i += a.size
        return cls(out)

    def copy(self) -> "OmegaParams":
        return OmegaParams({n: a.copy() for n, a in self.arrays.items()})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "OmegaParams":
        return OmegaParams({n: fn(a) for n, a in self.arrays.items()})

    def _zip(self, other, fn) -> "OmegaParams":
        if isinstance(other, OmegaParams):
            if self.shape != other.shape:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
            return OmegaParams({n: fn(self.arrays[n], other.arrays[n]) for n in PARAM_NAMES})
        return OmegaParams({n: fn(a, other) for n, a in self.arrays.items()})

    def __add__(self, other):
        return self._zip(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._zip(other, np.subtract)

    def __mul__(self, other):
        return self._zip(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._zip(other, np.divide)

    def array_equal(self, other: "OmegaParams") -> bool:
        return all(np.array_equal(self.arrays[n], other.arrays[n]) for n in PARAM_NAMES)

    def allclose(self, other: "OmegaParams", **kw) -> bool:
        return all(np.allclose(self.arrays[n], other.arrays[n], **kw) for n in PARAM_NAMES)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    def __repr__(self) -> str:
        k, h1, h2, q = self.shape
        return f"OmegaParams(k={k}, h1={h1}, h2={h2}, q={q})"


def weighted_sum(weights: Sequence[float], params: Sequence[OmegaParams]) -> OmegaParams:
    out = OmegaParams.zeros_like(params[0])
    for w, p in zip(weights, params):
        for n in PARAM_NAMES:
            out.arrays[n] += w * p.arrays[n]
    return out


def _lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def _lrelu_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def max_pool_columns(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0:
        raise ValueError("max pooling needs a non-empty 2-D matrix")
    return M.max(axis=0)


def _argmax_rows(M: np.ndarray) -> np.ndarray:
    # np.argmax returns the first index on ties
    return np.argmax(M, axis=0)


@dataclass
class TaskPrediction:
    instance_scores: np.ndarray
    bag_scores: np.ndarray
    cache: dict


def _labels(omega: OmegaParams, labels) -> np.ndarray:
    q = omega.shape[3]
    if labels is None:
        return np.arange(q)
    idx = np.asarray(labels, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("active label subset is empty")
    if np.unique(idx).size != idx.size:
        raise ValueError("active label subset has duplicates")
    if idx.min() < 0 or idx.max() >= q:
        raise ValueError(f"label index out of range for q={q}")
    return idx


def forward(omega: OmegaParams, X: np.ndarray, labels=None, slope: float = DEFAULT_SLOPE) -> TaskPrediction:
    """Instance scores (row-softmax) and bag scores over the active labels."""
    X = np.asarray(X, dtype=float)
    k = omega.shape[0]
    if X.ndim != 2 or X.shape[1] != k or X.shape[0] < 1:
        raise ValueError(f"expected an n x {k} input with n >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    S = _labels(omega, labels)
    P1 = X @ omega["W1"] + omega["b1"]
    H1 = _lrelu(P1, slope)
    P2 = H1 @ omega["W2"] + omega["b2"]
    H2 = _lrelu(P2, slope)
    Z = softmax(H2 @ omega["Wi"][:, S] + omega["bi"][S], axis=1)
    arg_h = _argmax_rows(H2)
    pooled = H2[arg_h, np.arange(H2.shape[1])]
    g = softmax(pooled @ omega["Wb"][:, S] + omega["bb"][S])
    cache = dict(X=X, S=S, P1=P1, H1=H1, P2=P2, H2=H2, arg_h=arg_h, pooled=pooled, slope=slope)
    return TaskPrediction(Z, g, cache)


@dataclass
class LossResult:
    loss: float
    grad_omega: OmegaParams
    grad_x: np.ndarray
    prediction: TaskPrediction


def loss_value(omega: OmegaParams, X: np.ndarray, y, labels=None, slope: float = DEFAULT_SLOPE) -> float:
    pred = forward(omega, X, labels, slope)
    return _loss_from(pred, _target(y, pred))


def _target(y, pred: TaskPrediction) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != pred.bag_scores.shape:
        raise ValueError(f"target has length {y.size}, expected {pred.bag_scores.size}")
    return y


def _loss_from(pred: TaskPrediction, y: np.ndarray) -> float:
    g = pred.bag_scores
    m = pred.instance_scores.max(axis=0)
    return float(np.sum((y - g) ** 2) + np.sum((g - m) ** 2))


def task_loss(omega: OmegaParams, X: np.ndarray, y, labels=None, slope: float = DEFAULT_SLOPE) -> LossResult:
    """Loss plus gradients w.r.t. every parameter and w.r.t. the input rows.

    Gradients of inactive head columns are zero.  At max-pool ties the
    subgradient goes to the lowest-index row.
    """
    pred = forward(omega, X, labels, slope)
    y = _target(y, pred)
    c = pred.cache
    S, H1, H2, X = c["S"], c["H1"], c["H2"], c["X"]
    Z, g = pred.instance_scores, pred.bag_scores
    n, h2 = H2.shape
    cols = np.arange(len(S))

    arg_z = _argmax_rows(Z)
    m = Z[arg_z, cols]
    loss = float(np.sum((y - g) ** 2) + np.sum((g - m) ** 2))

    dg = -2.0 * (y - g) + 2.0 * (g - m)
    dm = -2.0 * (g - m)

    # instance head
    dZ = np.zeros_like(Z)
    dZ[arg_z, cols] = dm
    dA = Z * (dZ - np.sum(dZ * Z, axis=1, keepdims=True))
    Wi_S = omega["Wi"][:, S]
    dWi_S = H2.T @ dA
    dbi_S = dA.sum(axis=0)
    dH2 = dA @ Wi_S.T

    # bag head on pooled trunk features
    dc = g * (dg - np.dot(dg, g))
    Wb_S = omega["Wb"][:, S]
    dWb_S = np.outer(c["pooled"], dc)
    dbb_S = dc
    dpooled = Wb_S @ dc
    dH2[c["arg_h"], np.arange(h2)] += dpooled

    slope = c["slope"]
    dP2 = dH2 * _lrelu_grad(c["P2"], slope)
    dW2 = H1.T @ dP2
    db2 = dP2.sum(axis=0)
    dH1 = dP2 @ omega["W2"].T
    dP1 = dH1 * _lrelu_grad(c["P1"], slope)
    dW1 = X.T @ dP1
    db1 = dP1.sum(axis=0)
    dX = dP1 @ omega["W1"].T

    grads = OmegaParams.zeros_like(omega)
    grads.arrays["W1"][:] = dW1
    grads.arrays["b1"][:] = db1
    grads.arrays["W2"][:] = dW2
    grads.arrays["b2"][:] = db2
    grads.arrays["Wi"][:, S] = dWi_S
    grads.arrays["bi"][S] = dbi_S
    grads.arrays["Wb"][:, S] = dWb_S
    grads.arrays["bb"][S] = dbb_S
    return LossResult(loss, grads, dX, pred)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, int]
    analytic: float
    numeric: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    omega: OmegaParams,
    X: np.ndarray,
    y,
    h: float = 1e-5,
    labels=None,
    slope: float = DEFAULT_SLOPE,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare every analytic partial (parameters and inputs) to central differences."""
    if h <= 0:
        raise ValueError("step h must be positive")
    res = task_loss(omega, X, y, labels, slope)
    X = np.asarray(X, dtype=float)
    worst = (-1.0, ("", -1), 0.0, 0.0)

    def f_omega(vec):
        return loss_value(OmegaParams.from_flat(omega, vec), X, y, labels, slope)

    def scan(name_of, base, analytic, fn):
        nonlocal worst
        numeric = np.empty_like(base)
        for i in range(base.size):
            step = base.copy()
            step[i] += h
            fp = fn(step)
            step[i] -= 2 * h
            fm = fn(step)
            numeric[i] = (fp - fm) / (2 * h)
        err = relative_error(analytic, numeric)
        j = int(np.argmax(err))
        if err[j] > worst[0]:
            worst = (float(err[j]), name_of(j), float(analytic[j]), float(numeric[j]))

    offsets = np.cumsum([0] + [omega[n].size for n in PARAM_NAMES])

    def omega_name(j):
        i = int(np.searchsorted(offsets, j, side="right") - 1)
        return PARAM_NAMES[i], int(j - offsets[i])

    scan(omega_name, omega.flat(), res.grad_omega.flat(), f_omega)
    scan(
        lambda j: ("X", int(j)),
        X.ravel().copy(),
        res.grad_x.ravel(),
        lambda v: loss_value(omega, v.reshape(X.shape), y, labels, slope),
    )
    err, where, a, num = worst
    return GradCheckReport(err, where, a, num, tolerance)


def kink_margin(omega: OmegaParams, X: np.ndarray, labels=None, slope: float = DEFAULT_SLOPE) -> float:
    """Distance of the input from the nearest non-smooth point.

    Smallest absolute pre-activation, and smallest gap between the top two
    rows of any pooled column.  Finite-difference checks need this to be
    comfortably larger than the step size.
    """
    pred = forward(omega, X, labels, slope)
    c = pred.cache
    margins = [np.abs(c["P1"]).min(), np.abs(c["P2"]).min()]
    for M in (c["H2"], pred.instance_scores):
        if M.shape[0] > 1:
            top2 = np.sort(M, axis=0)[-2:]
            margins.append((top2[1] - top2[0]).min())
    return float(min(margins))


def save_omega(omega: OmegaParams, path: str | Path) -> None:
    lines = ["OMEGA v1"]
    body = []
    for n in PARAM_NAMES:
        a = omega[n]
        body.append(f"{n} " + " ".join(str(s) for s in a.shape))
        body.append(" ".join(repr(float(x)) for x in a.ravel()))
    digest = hashlib.sha256("\n".join(body).encode()).hexdigest()
    lines.extend(body)
    lines.append(f"CHECKSUM {digest}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_omega(path: str | Path) -> OmegaParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != "OMEGA v1":
        raise ValueError(f"{path}: not an omega checkpoint")
    body = lines[1:-1]
    tag, digest = lines[-1].split()
    if tag != "CHECKSUM" or hashlib.sha256("\n".join(body).encode()).hexdigest() != digest:
        raise ValueError(f"{path}: checksum mismatch")
    arrays = {}
    for i in range(0, len(body), 2):
        name, *shape = body[i].split()
        vals = [float(x) for x in body[i + 1].split()]
        arrays[name] = np.array(vals).reshape(tuple(int(s) for s in shape))
    return OmegaParams(arrays)
