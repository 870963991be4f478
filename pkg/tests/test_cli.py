import json
import re

import numpy as np
import pytest

from metamiml.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, main
from metamiml.hmin import load_hmin, validate

SMALL = """\
walk.length = 10
walk.num_walks = 3
embed.epochs = 2
meta.epochs = 3
episodes.repeats = 2
synth.n_bags = 30
"""

STAGES = ["synth", "walk", "embed", "train", "adapt", "eval"]


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def run_all(out, cfg, threads=1):
    for stage in STAGES:
        assert main([stage, "--out", str(out), "--config", str(cfg), "--threads", str(threads), "--quiet"]) == EXIT_OK, stage


def test_synth_default_validates(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "r"), "--quiet"]) == EXIT_OK
    g = load_hmin(tmp_path / "r" / "graph.hmin")
    assert validate(g) == []
    assert (tmp_path / "r" / "manifest.json").exists()


def test_pipeline_is_reproducible(tmp_path, small_cfg, capsys):
    run_all(tmp_path / "a", small_cfg)
    run_all(tmp_path / "b", small_cfg, threads=3)
    for name in ("report.txt", "predictions.tsv", "history.tsv", "prior/omega.ckpt", "corpus.walks"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    report = (tmp_path / "a" / "report.txt").read_text()
    assert re.search(r"^AUROC\t\d\.\d{4}\t\d\.\d{4}\t2\t", report, re.M)


def test_eval_reproduces_from_artifacts(tmp_path, small_cfg):
    out = tmp_path / "r"
    run_all(out, small_cfg)
    before = (out / "report.txt").read_bytes()
    (out / "report.txt").unlink()
    assert main(["eval", "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "report.txt").read_bytes() == before


def test_run_manifest(tmp_path, small_cfg):
    out = tmp_path / "r"
    run_all(out, small_cfg)
    m = json.loads((out / "run_manifest.json").read_text())
    assert m["seed"] == 7
    assert m["stages"] == STAGES
    assert set(m["files"]) >= {"graph.hmin", "corpus.walks", "theta_p0.sgemb", "prior/omega.ckpt", "report.txt"}
    assert len(m["config_digest"]) == 16
    assert (out / "run_manifest.json").read_text() == json.dumps(m, indent=2, sort_keys=True) + "\n"


def test_report_and_sweep(tmp_path, small_cfg):
    out = tmp_path / "r"
    run_all(out, small_cfg)
    assert main(["sweep", "--out", str(out), "--param", "k", "--values", "8,16", "--repeats", "1", "--quiet"]) == EXIT_OK
    rows = (out / "sweep.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:2] == ["k", "AUROC_mean"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["8", "16"]
    assert main(["report", "--out", str(out), "--quiet"]) == EXIT_OK
    summary = (out / "summary.txt").read_text()
    assert "query_loss_last" in summary and "# sweep" in summary


def test_seed_flag_changes_results(tmp_path, small_cfg):
    for name, seed in (("a", "1"), ("b", "2")):
        out = tmp_path / name
        main(["synth", "--out", str(out), "--config", str(small_cfg), "--quiet"])
        assert main(["walk", "--out", str(out), "--seed", seed, "--quiet"]) == EXIT_OK
    assert (tmp_path / "a" / "corpus.walks").read_bytes() != (tmp_path / "b" / "corpus.walks").read_bytes()


def test_exit_codes(tmp_path, small_cfg):
    bad = tmp_path / "bad.cfg"
    bad.write_text("meta.unknown = 1\n")
    assert main(["synth", "--out", str(tmp_path / "x"), "--config", str(bad), "--quiet"]) == EXIT_CONFIG
    assert main(["train", "--out", str(tmp_path / "empty"), "--quiet"]) == EXIT_DATA
    assert main(["bogus"]) == EXIT_CONFIG
    (tmp_path / "g.hmin").write_text("HMIN v7\n")
    assert main(["walk", "--out", str(tmp_path / "y"), "--graph", str(tmp_path / "g.hmin"), "--quiet"]) == EXIT_DATA
    paths = tmp_path / "paths.cfg"
    paths.write_text(SMALL + "walk.metapaths = G-Q-G\n")
    main(["synth", "--out", str(tmp_path / "z"), "--quiet"])
    assert main(["walk", "--out", str(tmp_path / "z"), "--config", str(paths), "--quiet"]) == EXIT_CONFIG


def test_divergence_exit_code(tmp_path, small_cfg):
    out = tmp_path / "d"
    for stage in ("synth", "walk", "embed"):
        assert main([stage, "--out", str(out), "--config", str(small_cfg), "--quiet"]) == EXIT_OK
    hot = tmp_path / "hot.cfg"
    hot.write_text(SMALL + "meta.gamma = 1e300\nmeta.optimizer = sgd\n")
    with np.errstate(all="ignore"):
        code = main(["train", "--out", str(out), "--config", str(hot), "--quiet"])
    assert code == EXIT_DIVERGENCE

