"""End-to-end stages shared by the CLI and the acceptance tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig, stage_seed
from .episodes import SplitSpec, Task, build_tasks, split_source_target
from .hmin import Hmin
from .meta import AdaptPrediction, GlobalPrior, MetaHistory, adapt_and_predict, meta_train
from .metrics import EvalResult, evaluate
from .projection import default_sparsity, make_projection
from .skipgram import EmbeddingTable, SgConfig, train_skipgram
from .tasklearner import OmegaParams
from .walks import MetaPath, WalkCorpus, generate_corpus, parse_metapath

log = logging.getLogger(__name__)


def parse_paths(g: Hmin, cfg: RunConfig) -> list[MetaPath]:
    return [parse_metapath(p, g) for p in cfg.walk.metapaths]


def walk_stage(g: Hmin, cfg: RunConfig, threads: int = 1) -> WalkCorpus:
    return generate_corpus(
        g, parse_paths(g, cfg), cfg.walk.num_walks, cfg.walk.length, stage_seed(cfg.seed, "walk"), threads
    )


def embed_stage(g: Hmin, corpus: WalkCorpus, cfg: RunConfig) -> list[EmbeddingTable]:
    e = cfg.embed
    sg = SgConfig(e.dim, cfg.walk.window, e.negatives, e.epochs, e.lr, e.slope, stage_seed(cfg.seed, "embed"), e.batch_size)
    return [train_skipgram(corpus, p, sg, g=g) for p in range(len(corpus.paths))]


def sparsity(cfg: RunConfig, n_bags: int) -> float:
    if cfg.projection.s in ("sqrt", "log"):
        return default_sparsity(n_bags, cfg.projection.s)
    return float(cfg.projection.s)


def init_prior(g: Hmin, tables: Sequence[EmbeddingTable], cfg: RunConfig) -> GlobalPrior:
    d = g.instance_dim
    d_l = tables[0].dim
    k = cfg.projection.k
    E = make_projection(d + d_l, k, sparsity(cfg, len(g.bags)), stage_seed(cfg.seed, "projection") % 2**32)
    h1 = cfg.task.h1 or k
    h2 = cfg.task.h2 or k
    rng = np.random.default_rng(stage_seed(cfg.seed, "omega"))
    omega = OmegaParams.init(k, h1, h2, g.num_labels, rng)
    m = cfg.meta
    return GlobalPrior(
        [t.copy() for t in tables], omega, E, m.alpha, m.beta, m.gamma, cfg.embed.slope,
        m.attention_sign, m.omega_fusion,
    )


_clip_warned: set[tuple[int, int]] = set()


def query_count(cfg: RunConfig, pool_size: int) -> int:
    """Configured query-label count, clipped so the support side keeps a label."""
    q = min(cfg.episodes.query_labels, pool_size - 1)
    if q < cfg.episodes.query_labels and (pool_size, cfg.episodes.query_labels) not in _clip_warned:
        _clip_warned.add((pool_size, cfg.episodes.query_labels))
        log.warning("label pool of %d cannot hold %d query labels; using %d", pool_size, cfg.episodes.query_labels, q)
    return max(q, 1)


def split_stage(g: Hmin, cfg: RunConfig) -> SplitSpec:
    return split_source_target(g, cfg.episodes.ratio, stage_seed(cfg.seed, "split"))


def source_tasks(g: Hmin, split: SplitSpec, paths, corpus, cfg: RunConfig, pool=None) -> list[Task]:
    size = len(pool) if pool is not None else len(split.source_labels)
    return build_tasks(
        g, split.source_bags, paths, split, query_count(cfg, size), stage_seed(cfg.seed, "episodes"), corpus, pool
    )


def target_tasks(g: Hmin, split: SplitSpec, paths, corpus, cfg: RunConfig, rep: int, pool=None) -> list[Task]:
    size = len(pool) if pool is not None else len(split.target_labels)
    seed = stage_seed(cfg.seed, f"adapt:{rep}")
    return build_tasks(g, split.target_bags, paths, split, query_count(cfg, size), seed, corpus, pool)


def train_stage(
    g: Hmin, prior: GlobalPrior, tasks: Sequence[Task], cfg: RunConfig, threads: int = 1, step_check: bool = False
) -> tuple[GlobalPrior, MetaHistory]:
    m = cfg.meta
    return meta_train(
        prior, tasks, g.bags, m.batch, m.epochs, stage_seed(cfg.seed, "train"), threads, m.optimizer, step_check
    )


@dataclass
class PredictionRow:
    rep: int
    bag: int
    label: int
    score: float
    truth: int


def adapt_stage(
    g: Hmin,
    prior: GlobalPrior,
    split: SplitSpec,
    paths,
    corpus,
    cfg: RunConfig,
    steps: int | None = None,
    repeats: int | None = None,
    pool=None,
) -> list[PredictionRow]:
    steps = cfg.meta.inner_steps if steps is None else steps
    repeats = cfg.episodes.repeats if repeats is None else repeats
    rows: list[PredictionRow] = []
    for rep in range(repeats):
        for task in target_tasks(g, split, paths, corpus, cfg, rep, pool):
            pred: AdaptPrediction = adapt_and_predict(prior, task, g.bags[task.bag].instances, steps)
            for lab, score, y in zip(pred.labels, pred.bag_scores, pred.truth):
                rows.append(PredictionRow(rep, task.bag, int(lab), float(score), int(y)))
    return rows


def save_predictions(rows: Sequence[PredictionRow], path: str | Path) -> None:
    lines = ["rep\tbag\tlabel\tscore\ttruth"]
    lines.extend(f"{r.rep}\t{r.bag}\t{r.label}\t{r.score!r}\t{r.truth}" for r in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictions(path: str | Path) -> list[PredictionRow]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["rep", "bag", "label", "score", "truth"]:
        raise ValueError(f"{path}: not a predictions file")
    out = []
    for line in lines[1:]:
        if line.strip():
            rep, bag, lab, score, y = line.split("\t")
            out.append(PredictionRow(int(rep), int(bag), int(lab), float(score), int(y)))
    return out


def prediction_matrices(rows: Sequence[PredictionRow], rep: int):
    """Score, truth and mask matrices (bags x labels) for one repetition."""
    sel = [r for r in rows if r.rep == rep]
    bags = sorted({r.bag for r in sel})
    labels = sorted({r.label for r in sel})
    bi = {b: i for i, b in enumerate(bags)}
    li = {l: j for j, l in enumerate(labels)}
    S = np.zeros((len(bags), len(labels)))
    T = np.zeros_like(S, dtype=bool)
    M = np.zeros_like(S, dtype=bool)
    for r in sel:
        i, j = bi[r.bag], li[r.label]
        S[i, j], T[i, j], M[i, j] = r.score, bool(r.truth), True
    return S, T, M, bags, labels


def evaluate_predictions(rows: Sequence[PredictionRow], K: int | None = None) -> list[EvalResult]:
    results = []
    for rep in sorted({r.rep for r in rows}):
        S, T, M, _, labels = prediction_matrices(rows, rep)
        kk = K
        if kk is not None:
            kk = min(kk, int(M.sum(axis=1).min()))
        res = evaluate(S, T, M, kk)
        res.excluded_labels = tuple(labels[j] for j in res.excluded_labels)
        results.append(res)
    return results


def metrics_k(cfg: RunConfig) -> int | None:
    return None if cfg.metrics.k == "auto" else int(cfg.metrics.k)


@dataclass
class ExperimentResult:
    prior: GlobalPrior
    initial_prior: GlobalPrior
    history: MetaHistory
    split: SplitSpec
    corpus: WalkCorpus
    paths: list[MetaPath]
    source: list[Task]


def run_training(g: Hmin, cfg: RunConfig, threads: int = 1, pool=None, step_check: bool = False) -> ExperimentResult:
    """walk -> embed -> split -> init -> meta-train, all in memory."""
    corpus = walk_stage(g, cfg, threads)
    tables = embed_stage(g, corpus, cfg)
    paths = list(corpus.paths)
    split = split_stage(g, cfg)
    prior0 = init_prior(g, tables, cfg)
    tasks = source_tasks(g, split, paths, corpus, cfg, pool)
    prior, history = train_stage(g, prior0, tasks, cfg, threads, step_check)
    return ExperimentResult(prior, prior0, history, split, corpus, paths, tasks)
