"""Command-line entry point: ``metamiml <subcommand> [options]``.

Every stage reads and writes files inside one run directory (``--out``).
Exit status: 0 ok, 2 configuration error, 3 data error, 4 numerical
divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from . import pipeline as P
from .config import ConfigError, RunConfig, load_config, parse_config, stage_seed
from .episodes import load_split, save_split
from .hmin import HminError, UnknownNodeError, load_hmin, save_hmin, validate
from .meta import DivergenceError, GlobalPrior
from .metrics import format_report, summarize
from .projection import load_projection, save_projection
from .skipgram import EmbeddingTable, load_embedding, save_embedding
from .synth import SynthConfig, generate_synthetic
from .tasklearner import load_omega, save_omega
from .walks import MetaPathError, load_corpus, save_corpus

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4

log = logging.getLogger("metamiml")

SWEEP_PARAMS = {
    "k": "projection.k",
    "alpha": "meta.alpha",
    "beta": "meta.beta",
    "gamma": "meta.gamma",
    "dim": "embed.dim",
    "query_labels": "episodes.query_labels",
}


class DataError(Exception):
    """Missing or inconsistent stage files."""


# ---------------------------------------------------------------- run dir


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_config(args) -> RunConfig:
    out = Path(args.out)
    if args.config:
        cfg = load_config(args.config)
    elif (out / "config.txt").exists():
        cfg = parse_config((out / "config.txt").read_text(encoding="utf-8"))
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    graph = getattr(args, "graph", None)
    cfg = replace(cfg, paths=replace(cfg.paths, out=str(out), graph=graph or cfg.paths.graph or str(out / "graph.hmin")))
    cfg.validate()
    return cfg


def _write_manifest(out: Path, cfg: RunConfig, stage: str) -> None:
    """Record config hash, seed and a checksum of every file in the run directory."""
    path = out / "run_manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    stages = manifest.get("stages", [])
    if stage not in stages:
        stages.append(stage)
    files = {}
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "run_manifest.json":
            files[f.relative_to(out).as_posix()] = _sha256(f)
    manifest = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "stage_seeds": {s: stage_seed(cfg.seed, s) for s in ("walk", "embed", "split", "projection", "omega", "episodes", "train")},
        "stages": stages,
        "files": files,
        "version": __version__,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _begin(args) -> tuple[RunConfig, Path]:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return cfg, out


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input file {path}; run the earlier stage first")
    return path


def _graph(cfg: RunConfig):
    g = load_hmin(_need(Path(cfg.paths.graph)))
    findings = validate(g)
    if findings:
        raise DataError("graph failed validation: " + "; ".join(f"{f.code}: {f.message}" for f in findings[:5]))
    return g


def _tables(out: Path, n_paths: int, sub: str = "") -> list[EmbeddingTable]:
    return [load_embedding(_need(out / sub / f"theta_p{i}.sgemb")) for i in range(n_paths)]


def _load_prior(out: Path, cfg: RunConfig, n_paths: int) -> GlobalPrior:
    m = cfg.meta
    return GlobalPrior(
        _tables(out, n_paths, "prior"),
        load_omega(_need(out / "prior" / "omega.ckpt")),
        load_projection(_need(out / "projection.srp")),
        m.alpha, m.beta, m.gamma, cfg.embed.slope, m.attention_sign, m.omega_fusion,
    )


# ---------------------------------------------------------------- stages


def synth_config(cfg: RunConfig) -> SynthConfig:
    s = cfg.synth
    return SynthConfig(
        n_bags=s.n_bags, aux_types=s.aux_types, aux_counts=s.aux_counts, q=s.q, communities=s.communities,
        d=s.d, instances=s.instances, sigma_f=s.sigma_f, eps=s.eps, degree=s.degree,
        label_flip=s.label_flip, seed=s.seed,
    )


def cmd_synth(args) -> int:
    """Generate the synthetic HMIN graph and its manifest."""
    cfg, out = _begin(args)
    try:
        scfg = synth_config(cfg)
        scfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    g, manifest = generate_synthetic(scfg)
    target = Path(args.graph) if args.graph else out / "graph.hmin"
    save_hmin(g, target)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    log.info("wrote %s (%d nodes, %d bags); oracle macro-F1 %.4f", target, len(g.node_type), len(g.bags), manifest.oracle_macro_f1)
    _write_manifest(out, cfg, "synth")
    return EXIT_OK


def cmd_walk(args) -> int:
    """Sample meta-path walks into corpus.walks."""
    cfg, out = _begin(args)
    g = _graph(cfg)
    corpus = P.walk_stage(g, cfg, args.threads)
    save_corpus(corpus, out / "corpus.walks")
    _write_manifest(out, cfg, "walk")
    return EXIT_OK


def cmd_embed(args) -> int:
    """Train one skip-gram table per meta-path."""
    cfg, out = _begin(args)
    g = _graph(cfg)
    corpus = load_corpus(_need(out / "corpus.walks"))
    for i, table in enumerate(P.embed_stage(g, corpus, cfg)):
        save_embedding(table, out / f"theta_p{i}.sgemb")
    _write_manifest(out, cfg, "embed")
    return EXIT_OK


def cmd_train(args) -> int:
    """Split labels, build the prior and meta-train it."""
    cfg, out = _begin(args)
    g = _graph(cfg)
    corpus = load_corpus(_need(out / "corpus.walks"))
    paths = list(corpus.paths)
    tables = _tables(out, len(paths))
    split = P.split_stage(g, cfg)
    save_split(split, out / "split.txt")
    prior0 = P.init_prior(g, tables, cfg)
    save_projection(prior0.projection, out / "projection.srp")
    tasks = P.source_tasks(g, split, paths, corpus, cfg)
    prior, history = P.train_stage(g, prior0, tasks, cfg, args.threads)
    (out / "prior").mkdir(exist_ok=True)
    save_omega(prior.omega, out / "prior" / "omega.ckpt")
    for i, table in enumerate(prior.theta):
        save_embedding(table, out / "prior" / f"theta_p{i}.sgemb")
    (out / "history.tsv").write_text(history.to_tsv(), encoding="utf-8")
    _write_manifest(out, cfg, "train")
    return EXIT_OK


def cmd_adapt(args) -> int:
    """Adapt the trained prior to every target task and score the query labels."""
    cfg, out = _begin(args)
    g = _graph(cfg)
    corpus = load_corpus(_need(out / "corpus.walks"))
    paths = list(corpus.paths)
    split = load_split(_need(out / "split.txt"))
    prior = _load_prior(out, cfg, len(paths))
    rows = P.adapt_stage(g, prior, split, paths, corpus, cfg, args.steps, args.repeats)
    P.save_predictions(rows, out / "predictions.tsv")
    _write_manifest(out, cfg, "adapt")
    return EXIT_OK


def _report_text(rows, cfg: RunConfig, title: str) -> str:
    results = P.evaluate_predictions(rows, P.metrics_k(cfg))
    return format_report(summarize(results), title)


def cmd_eval(args) -> int:
    """Score predictions.tsv and write report.txt."""
    cfg, out = _begin(args)
    rows = P.load_predictions(_need(out / "predictions.tsv"))
    if not rows:
        raise DataError("predictions file is empty")
    text = _report_text(rows, cfg, f"target tasks, seed {cfg.seed}, config {cfg.digest()}")
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _write_manifest(out, cfg, "eval")
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Retrain and evaluate once per value of one hyperparameter."""
    cfg, out = _begin(args)
    key = SWEEP_PARAMS.get(args.param, args.param)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    g = _graph(cfg)
    lines = [f"{args.param}\tAUROC_mean\tAUROC_std\tAUPRC_mean\tAvgF1_mean\t1-HL_mean"]
    for v in values:
        run_cfg = cfg.with_overrides({key: v})
        res = P.run_training(g, run_cfg, args.threads)
        rows = P.adapt_stage(g, res.prior, res.split, res.paths, res.corpus, run_cfg, args.steps, args.repeats)
        summary = {r["metric"]: r for r in summarize(P.evaluate_predictions(rows, P.metrics_k(run_cfg)))}
        lines.append(
            f"{v}\t{summary['AUROC']['mean']:.4f}\t{summary['AUROC']['std']:.4f}\t"
            f"{summary['AUPRC']['mean']:.4f}\t{summary['AvgF1']['mean']:.4f}\t{summary['1-HL']['mean']:.4f}"
        )
        log.info("sweep %s=%s AUROC %.4f", args.param, v, summary["AUROC"]["mean"])
    text = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _write_manifest(out, cfg, "sweep")
    return EXIT_OK


def cmd_report(args) -> int:
    """Summary of a finished run directory, rebuilt from stored artifacts only."""
    cfg, out = _begin(args)
    parts = ["# run summary", f"seed\t{cfg.seed}", f"config_digest\t{cfg.digest()}"]
    hist = out / "history.tsv"
    if hist.exists():
        recs = hist.read_text(encoding="utf-8").splitlines()[1:]
        if recs:
            first, last = recs[0].split("\t"), recs[-1].split("\t")
            parts.append(f"meta_epochs\t{len(recs)}")
            parts.append(f"query_loss_first\t{float(first[2]):.4f}")
            parts.append(f"query_loss_last\t{float(last[2]):.4f}")
    pred = out / "predictions.tsv"
    if pred.exists():
        parts.append("")
        parts.append(_report_text(P.load_predictions(pred), cfg, "target tasks").rstrip("\n"))
    sweep = out / "sweep.tsv"
    if sweep.exists():
        parts.append("")
        parts.append("# sweep")
        parts.append(sweep.read_text(encoding="utf-8").rstrip("\n"))
    if len(parts) == 3:
        raise DataError(f"{out} holds no training history, predictions or sweep results")
    text = "\n".join(parts) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    _write_manifest(out, cfg, "report")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "walk": cmd_walk,
    "embed": cmd_embed,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamiml", description="Meta-learning for multi-instance multi-label networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--graph", help="HMIN file (default: <out>/graph.hmin)")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap")
        p.add_argument("--quiet", action="store_true")
        if name in ("adapt", "sweep"):
            p.add_argument("--steps", type=int, default=None, help="adaptation steps (0 = none)")
            p.add_argument("--repeats", type=int, default=None, help="number of seeded repetitions")
        if name == "sweep":
            p.add_argument("--param", required=True, help=f"one of {sorted(SWEEP_PARAMS)} or a dotted config key")
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MetaPathError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("numerical divergence: %s", exc)
        return EXIT_DIVERGENCE
    except (DataError, HminError, UnknownNodeError, OSError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
