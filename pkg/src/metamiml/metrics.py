"""Multi-label ranking metrics: macro AUROC, macro AUPRC, top-K F1, 1 - HL.

Matrix-level functions accept an optional boolean ``mask`` of evaluated
cells; masked-out cells are ignored by every metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def _column(scores, truth):
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(truth).ravel().astype(bool)
    if s.shape != t.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, t


def auroc(scores, truth) -> float:
    """Rank-sum AUROC with midranks for ties."""
    s, t = _column(scores, truth)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    r = rankdata(s)
    return float((r[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, truth) -> float:
    """Step-interpolated average precision over distinct score thresholds."""
    s, t = _column(scores, truth)
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, t_sorted = s[order], t[order]
    tp = np.cumsum(t_sorted)
    # last index of each block of tied scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp_at = tp[last].astype(float)
    precision = tp_at / (last + 1)
    recall = tp_at / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


@dataclass
class MacroResult:
    value: float
    n_labels: int
    excluded: tuple[int, ...]


def _prep(S, T, mask):
    S = np.asarray(S, dtype=float)
    T = np.asarray(T).astype(bool)
    if S.shape != T.shape or S.ndim != 2:
        raise ValueError("score and truth matrices must be 2-D with equal shapes")
    M = np.ones_like(T) if mask is None else np.asarray(mask).astype(bool)
    if M.shape != S.shape:
        raise ValueError("mask shape must match the score matrix")
    return S, T, M


def macro_auroc(S, T, mask=None) -> MacroResult:
    S, T, M = _prep(S, T, mask)
    vals, excluded = [], []
    for j in range(S.shape[1]):
        m = M[:, j]
        t = T[m, j]
        if t.sum() == 0 or (~t).sum() == 0:
            excluded.append(j)
            continue
        vals.append(auroc(S[m, j], t))
    return MacroResult(float(np.mean(vals)) if vals else float("nan"), len(vals), tuple(excluded))


def macro_auprc(S, T, mask=None) -> MacroResult:
    S, T, M = _prep(S, T, mask)
    vals, excluded = [], []
    for j in range(S.shape[1]):
        m = M[:, j]
        t = T[m, j]
        if t.sum() == 0:
            excluded.append(j)
            continue
        vals.append(auprc(S[m, j], t))
    return MacroResult(float(np.mean(vals)) if vals else float("nan"), len(vals), tuple(excluded))


def default_k(T, mask=None) -> int:
    """Mean number of positive labels per row, rounded half up, at least 1."""
    T = np.asarray(T).astype(bool)
    M = np.ones_like(T) if mask is None else np.asarray(mask).astype(bool)
    per_row = (T & M).sum(axis=1)
    return max(1, int(math.floor(per_row.mean() + 0.5)))


def top_k_predictions(S, K: int, mask=None) -> np.ndarray:
    """0/1 matrix marking the K best labels per row; ties go to the lower label id."""
    S = np.asarray(S, dtype=float)
    M = np.ones(S.shape, dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > S.shape[1]:
        raise ValueError(f"K={K} exceeds the number of labels {S.shape[1]}")
    P = np.zeros(S.shape, dtype=bool)
    for i in range(S.shape[0]):
        cand = np.flatnonzero(M[i])
        order = cand[np.lexsort((cand, -S[i, cand]))]
        P[i, order[:K]] = True
    return P


def avg_f1_topk(S, T, K: int | None = None, mask=None) -> float:
    """Macro F1 of top-K predictions over labels present in truth or prediction."""
    S, T, M = _prep(S, T, mask)
    if K is None:
        K = default_k(T, M)
    P = top_k_predictions(S, K, M)
    T = T & M
    tp = (P & T).sum(axis=0)
    fp = (P & ~T).sum(axis=0)
    fn = (~P & T & M).sum(axis=0)
    active = (tp + fp + fn) > 0
    if not active.any():
        return float("nan")
    f1 = 2 * tp[active] / (2 * tp[active] + fp[active] + fn[active])
    return float(f1.mean())


def one_minus_hl(pred, truth, mask=None) -> float:
    P = np.asarray(pred).astype(bool)
    T = np.asarray(truth).astype(bool)
    if P.shape != T.shape:
        raise ValueError("prediction and truth shapes differ")
    M = np.ones_like(T) if mask is None else np.asarray(mask).astype(bool)
    total = int(M.sum())
    if total == 0:
        raise ValueError("no cells to evaluate")
    return 1.0 - float(((P != T) & M).sum()) / total


METRIC_ORDER = ("AvgF1", "AUROC", "AUPRC", "1-HL")


@dataclass
class EvalResult:
    values: dict
    K: int
    excluded_labels: tuple[int, ...]


def evaluate(S, T, mask=None, K: int | None = None) -> EvalResult:
    S, T, M = _prep(S, T, mask)
    if K is None:
        K = default_k(T, M)
    roc = macro_auroc(S, T, M)
    pr = macro_auprc(S, T, M)
    P = top_k_predictions(S, K, M)
    values = {
        "AvgF1": avg_f1_topk(S, T, K, M),
        "AUROC": roc.value,
        "AUPRC": pr.value,
        "1-HL": one_minus_hl(P, T, M),
    }
    return EvalResult(values, K, roc.excluded)


def summarize(runs: list[EvalResult]) -> list[dict]:
    """Mean and sample standard deviation of each metric across runs."""
    rows = []
    for name in METRIC_ORDER:
        vals = np.array([r.values[name] for r in runs], dtype=float)
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if vals.size else float("nan")
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        excluded = sorted({j for r in runs for j in r.excluded_labels})
        rows.append({
            "metric": name, "mean": mean, "std": std, "n_runs": int(vals.size),
            "K": runs[0].K if runs else 0, "excluded_labels": excluded,
        })
    return rows


def format_report(rows: list[dict], title: str | None = None) -> str:
    lines = []
    if title:
        lines.append(f"# {title}")
    lines.append("metric\tmean\tstd\tn_runs\tK\texcluded_labels")
    for r in rows:
        exc = ",".join(str(x) for x in r["excluded_labels"]) or "-"
        lines.append(f"{r['metric']}\t{r['mean']:.4f}\t{r['std']:.4f}\t{r['n_runs']}\t{r['K']}\t{exc}")
    return "\n".join(lines) + "\n"
