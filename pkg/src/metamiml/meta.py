"""First-order meta-learning over meta-path contexts.

Per task, the learner adapts the bag's embedding row for every meta-path,
weights the paths by attention over their support losses, fuses the
projected bag representations, adapts the task-learner weights on the
fused representation, and finally scores the query labels.  The outer loop
moves the shared prior along the mean query-loss gradient of a batch of
tasks, treating adapted-parameter gradients as prior gradients.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .episodes import Task
from .hmin import Bag
from .projection import ProjectionMatrix, context_gradient, project
from .skipgram import EmbeddingTable, context_from_row
from .tasklearner import LossResult, OmegaParams, forward, task_loss, weighted_sum

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, bag: int | None = None):
        self.bag = bag
        super().__init__(message if bag is None else f"{message} (task bag {bag})")


@dataclass
class GlobalPrior:
    """Shared meta-knowledge: one embedding table per path plus task-learner weights.

    ``projection`` is a frozen global parameter; gradients pass through it
    but it is never updated.
    """

    theta: list[EmbeddingTable]
    omega: OmegaParams
    projection: ProjectionMatrix
    alpha: float = 0.005
    beta: float = 0.005
    gamma: float = 0.005
    slope: float = 0.01
    attention_sign: str = "negative"
    omega_fusion: str = "attention"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.attention_sign not in ("negative", "literal"):
            raise ValueError("attention_sign must be 'negative' or 'literal'")
        if self.omega_fusion not in ("attention", "product"):
            raise ValueError("omega_fusion must be 'attention' or 'product'")

    @property
    def n_paths(self) -> int:
        return len(self.theta)

    def copy(self) -> "GlobalPrior":
        return GlobalPrior(
            [t.copy() for t in self.theta], self.omega.copy(), self.projection,
            self.alpha, self.beta, self.gamma, self.slope, self.attention_sign, self.omega_fusion,
        )

    def array_equal(self, other: "GlobalPrior") -> bool:
        if not self.omega.array_equal(other.omega) or self.n_paths != other.n_paths:
            return False
        return all(
            np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b) for a, b in zip(self.theta, other.theta)
        )


def attention_weights(support_losses: Sequence[float], sign: str = "negative") -> np.ndarray:
    """Softmax over paths of the (negated, by default) support losses."""
    losses = np.asarray(support_losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("need at least one path")
    if not np.all(np.isfinite(losses)):
        raise DivergenceError("non-finite support loss in attention")
    z = -losses if sign == "negative" else losses
    e = np.exp(z - z.max())
    return e / e.sum()


def attention_entropy(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    nz = a[a > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class PathInputs:
    context: np.ndarray
    dcontext: np.ndarray
    xhat: np.ndarray


def path_inputs(prior: GlobalPrior, p: int, instances: np.ndarray, row: np.ndarray, b: np.ndarray) -> PathInputs:
    ctx, dctx = context_from_row(row, b, prior.slope)
    return PathInputs(ctx, dctx, project(instances, ctx, prior.projection))


def prior_rows(prior: GlobalPrior, bag: int) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(t.W[t.row(bag)].copy(), t.b.copy()) for t in prior.theta]


def local_update_theta(
    prior: GlobalPrior,
    bag: int,
    instances: np.ndarray,
    grads_xhat: Sequence[np.ndarray],
    rows: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """One gradient step on each path's bag embedding row and bias.

    ``grads_xhat[p]`` is dL/dX̂ for path ``p``; it is pulled back through the
    projection and the leaky ReLU.  Only the bag's own row and the bias can
    move, so those are all that is returned.
    """
    if len(grads_xhat) != prior.n_paths:
        raise ValueError(f"expected {prior.n_paths} path gradients, got {len(grads_xhat)}")
    if rows is None:
        rows = prior_rows(prior, bag)
    d = np.atleast_2d(instances).shape[1]
    out = []
    for (row, b), G in zip(rows, grads_xhat):
        G = np.atleast_2d(G)
        if G.shape != (np.atleast_2d(instances).shape[0], prior.projection.k):
            raise ValueError(f"gradient shape {G.shape} does not match the projected bag")
        _, dctx = context_from_row(row, b, prior.slope)
        dpre = context_gradient(G, d, prior.projection) * dctx
        out.append((row - prior.alpha * dpre, b - prior.alpha * dpre))
    return out


@dataclass
class TaskAdaptation:
    bag: int
    theta_rows: list[tuple[np.ndarray, np.ndarray]]
    omega_paths: list[OmegaParams]
    attention: np.ndarray
    omega_fused: OmegaParams
    xhat_fused: np.ndarray
    xhat_paths: list[np.ndarray]
    support_losses: np.ndarray
    fused_support_loss_before: float
    evaluations: int = 0

    @property
    def omega_adapted(self) -> OmegaParams:
        """Attention-weighted combination of the per-path adapted weights."""
        return convex_combination(self.attention, self.omega_paths)


def convex_combination(weights: Sequence[float], params: Sequence[OmegaParams]) -> OmegaParams:
    """``sum_p w_p params_p`` for simplex weights; exact when all ``params`` are equal."""
    if all(p is params[0] or p.array_equal(params[0]) for p in params[1:]):
        return params[0].copy()
    return weighted_sum(weights, params)


def _check_finite(value: float, bag: int, what: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite {what}", bag)


def inner_adapt(prior: GlobalPrior, task: Task, instances: np.ndarray) -> TaskAdaptation:
    """Adapt the prior to one task's support set.

    Order of operations: per-path support losses at the prior, a gradient
    step on each path's embedding row, attention from those losses, fusion
    of the per-path weights and of the re-projected bag, then one step of the
    task-learner weights on the fused bag.
    """
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    S, y = task.support.labels, task.support.y
    rows0 = prior_rows(prior, task.bag)
    inputs0 = [path_inputs(prior, p, instances, *rows0[p]) for p in range(prior.n_paths)]
    results = [task_loss(prior.omega, pi.xhat, y, S, prior.slope) for pi in inputs0]
    losses = np.array([r.loss for r in results])
    for l in losses:
        _check_finite(l, task.bag, "support loss")
    evals = len(results)

    rows = local_update_theta(prior, task.bag, instances, [r.grad_x for r in results], rows0)
    a = attention_weights(losses, prior.attention_sign)

    omega_paths = [prior.omega] * prior.n_paths
    omega_fused = convex_combination(a, omega_paths)
    xhat_paths = [path_inputs(prior, p, instances, *rows[p]).xhat for p in range(prior.n_paths)]
    xhat_fused = sum(w * x for w, x in zip(a, xhat_paths))
    xhat_before = sum(w * pi.xhat for w, pi in zip(a, inputs0))
    before = task_loss(prior.omega, xhat_before, y, S, prior.slope).loss
    evals += 1

    base = omega_fused if prior.omega_fusion == "attention" else prior.omega * omega_fused
    new_paths = []
    for wp in omega_paths:
        res = task_loss(wp, xhat_fused, y, S, prior.slope)
        evals += 1
        _check_finite(res.loss, task.bag, "fused support loss")
        new_paths.append(base - prior.beta * res.grad_omega)
    return TaskAdaptation(task.bag, rows, new_paths, a, omega_fused, xhat_fused, xhat_paths, losses, before, evals)


def support_loss_after(prior: GlobalPrior, task: Task, adaptation: TaskAdaptation) -> float:
    return task_loss(adaptation.omega_adapted, adaptation.xhat_fused, task.support.y, task.support.labels, prior.slope).loss


def query_loss(prior: GlobalPrior, task: Task, adaptation: TaskAdaptation) -> LossResult:
    return task_loss(adaptation.omega_adapted, adaptation.xhat_fused, task.query.y, task.query.labels, prior.slope)


@dataclass
class TaskGradient:
    bag: int
    query_loss: float
    support_loss: float
    entropy: float
    omega: OmegaParams
    rows: list[np.ndarray]
    biases: list[np.ndarray]
    evaluations: int


def task_meta_gradient(prior: GlobalPrior, task: Task, instances: np.ndarray) -> TaskGradient:
    """First-order meta-gradient of one task's query loss."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    ad = inner_adapt(prior, task, instances)
    q = query_loss(prior, task, ad)
    _check_finite(q.loss, task.bag, "query loss")
    d = instances.shape[1]
    rows, biases = [], []
    for p, (row, b) in enumerate(ad.theta_rows):
        _, dctx = context_from_row(row, b, prior.slope)
        dpre = context_gradient(ad.attention[p] * q.grad_x, d, prior.projection) * dctx
        rows.append(dpre)
        biases.append(dpre)
    return TaskGradient(
        task.bag, q.loss, float(np.dot(ad.attention, ad.support_losses)), attention_entropy(ad.attention),
        q.grad_omega, rows, biases, ad.evaluations + 1,
    )


class _Adam:
    """Adam with lazily updated embedding rows."""

    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.state: dict = {}
        self.t: dict = {}

    def step(self, key, param: np.ndarray, grad: np.ndarray) -> None:
        m, v = self.state.get(key, (np.zeros_like(param), np.zeros_like(param)))
        t = self.t.get(key, 0) + 1
        m = self.b1 * m + (1 - self.b1) * grad
        v = self.b2 * v + (1 - self.b2) * grad * grad
        self.state[key], self.t[key] = (m, v), t
        mh = m / (1 - self.b1**t)
        vh = v / (1 - self.b2**t)
        param -= self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class MetaHistory:
    epochs: list[dict] = field(default_factory=list)
    step_checks: list[tuple[float, float]] = field(default_factory=list)

    def query_losses(self) -> list[float]:
        return [e["query_loss"] for e in self.epochs]

    def to_tsv(self) -> str:
        lines = ["epoch\tsupport_loss\tquery_loss\tattention_entropy"]
        for e in self.epochs:
            lines.append(
                f"{e['epoch']}\t{e['support_loss']!r}\t{e['query_loss']!r}\t{e['attention_entropy']!r}"
            )
        return "\n".join(lines) + "\n"


def _instances(bags: Mapping[int, Bag] | Mapping[int, np.ndarray], bag: int) -> np.ndarray:
    x = bags[bag]
    return x.instances if isinstance(x, Bag) else x


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def batch_query_loss(prior: GlobalPrior, tasks: Sequence[Task], bags, threads: int = 1) -> float:
    def one(t):
        ad = inner_adapt(prior, t, _instances(bags, t.bag))
        return query_loss(prior, t, ad).loss

    return float(np.mean(_map(one, list(tasks), threads)))


def meta_train(
    prior: GlobalPrior,
    tasks: Sequence[Task],
    bags: Mapping[int, Bag] | Mapping[int, np.ndarray],
    batch: int = 32,
    epochs: int = 20,
    seed: int = 0,
    threads: int = 1,
    optimizer: str = "sgd",
    step_check: bool = False,
) -> tuple[GlobalPrior, MetaHistory]:
    """Outer loop.  Returns an updated copy of ``prior`` and the training history.

    ``optimizer`` is ``"sgd"`` (plain step of size gamma) or ``"adam"``.
    With ``step_check`` the batch-mean query loss is re-evaluated after every
    update and the ``(before, after)`` pair is stored in the history.
    """
    if not tasks:
        raise ValueError("meta-training needs at least one task")
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    if optimizer not in ("sgd", "adam"):
        raise ValueError("optimizer must be 'sgd' or 'adam'")
    prior = prior.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3E7A]))
    adam = _Adam(prior.gamma) if optimizer == "adam" else None
    history = MetaHistory()
    tasks = list(tasks)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(tasks))
        q_losses, s_losses, ents, evals = [], [], [], 0
        for start in range(0, len(order), batch):
            chunk = [tasks[i] for i in order[start : start + batch]]
            grads = _map(lambda t: task_meta_gradient(prior, t, _instances(bags, t.bag)), chunk, threads)
            n = len(grads)
            g_omega = weighted_sum([1.0 / n] * n, [g.omega for g in grads])
            before = float(np.mean([g.query_loss for g in grads]))
            q_losses.extend(g.query_loss for g in grads)
            s_losses.extend(g.support_loss for g in grads)
            ents.extend(g.entropy for g in grads)
            evals += sum(g.evaluations for g in grads)

            if prior.gamma > 0:
                if adam is None:
                    for name in g_omega:
                        prior.omega.arrays[name] -= prior.gamma * g_omega[name]
                else:
                    for name in g_omega:
                        adam.step(("omega", name), prior.omega.arrays[name], g_omega[name])
                for p, table in enumerate(prior.theta):
                    row_grads: dict[int, np.ndarray] = {}
                    for g in grads:
                        r = table.row(g.bag)
                        row_grads[r] = row_grads.get(r, 0.0) + g.rows[p] / n
                    b_grad = sum(g.biases[p] for g in grads) / n
                    for r in sorted(row_grads):
                        if adam is None:
                            table.W[r] -= prior.gamma * row_grads[r]
                        else:
                            adam.step(("W", p, r), table.W[r], row_grads[r])
                    if adam is None:
                        table.b -= prior.gamma * b_grad
                    else:
                        adam.step(("b", p), table.b, b_grad)
                if not prior.omega.is_finite() or not all(np.all(np.isfinite(t.W)) for t in prior.theta):
                    raise DivergenceError("non-finite parameter after meta-update")
            if step_check:
                after = batch_query_loss(prior, chunk, bags, threads)
                history.step_checks.append((before, after))
        record = {
            "epoch": epoch,
            "support_loss": float(np.mean(s_losses)),
            "query_loss": float(np.mean(q_losses)),
            "attention_entropy": float(np.mean(ents)),
            "evaluations": evals,
        }
        history.epochs.append(record)
        log.info("epoch %d query loss %.5f support loss %.5f", epoch, record["query_loss"], record["support_loss"])
    return prior, history


@dataclass
class AdaptPrediction:
    bag: int
    labels: tuple[int, ...]
    bag_scores: np.ndarray
    instance_scores: np.ndarray
    truth: np.ndarray
    support_loss_before: float
    support_loss_after: float


def adapt_and_predict(prior: GlobalPrior, task: Task, instances: np.ndarray, steps: int = 1) -> AdaptPrediction:
    """Predict a task's query labels after ``steps`` gradient steps.

    ``steps = 0`` predicts with the prior weights on the attention-fused
    prior representation.  ``steps >= 1`` runs one full inner adaptation
    (which contains the first step) and then ``steps - 1`` further steps of
    the task-learner weights on the support loss.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    S, y = task.support.labels, task.support.y
    if steps == 0:
        rows = prior_rows(prior, task.bag)
        inputs = [path_inputs(prior, p, instances, *rows[p]) for p in range(prior.n_paths)]
        losses = [task_loss(prior.omega, pi.xhat, y, S, prior.slope).loss for pi in inputs]
        a = attention_weights(losses, prior.attention_sign)
        xhat = sum(w * pi.xhat for w, pi in zip(a, inputs))
        omega = prior.omega
        before = after = task_loss(omega, xhat, y, S, prior.slope).loss
    else:
        ad = inner_adapt(prior, task, instances)
        before = ad.fused_support_loss_before
        omega, xhat = ad.omega_adapted, ad.xhat_fused
        for _ in range(steps - 1):
            res = task_loss(omega, xhat, y, S, prior.slope)
            omega = omega - prior.beta * res.grad_omega
        after = task_loss(omega, xhat, y, S, prior.slope).loss
    pred = forward(omega, xhat, task.query.labels, prior.slope)
    if not np.all(np.isfinite(pred.bag_scores)):
        raise DivergenceError("non-finite prediction", task.bag)
    return AdaptPrediction(
        task.bag, task.query.labels, pred.bag_scores, pred.instance_scores, task.query.y.copy(), before, after
    )
