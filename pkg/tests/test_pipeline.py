"""End-to-end behaviour on the synthetic graph outside the acceptance suite."""

import numpy as np
import pytest

from metamiml import pipeline as P
from metamiml.config import RunConfig
from metamiml.synth import SynthConfig, generate_synthetic


@pytest.fixture(scope="module")
def shared_pool_run():
    g, _ = generate_synthetic(SynthConfig())
    cfg = RunConfig()
    pool = sorted(g.labels)
    res = P.run_training(g, cfg, pool=pool)
    return g, cfg, pool, res


def _auroc(rows):
    return float(np.nanmean([r.values["AUROC"] for r in P.evaluate_predictions(rows)]))


def test_shared_pool_meta_training_beats_untrained_prior(shared_pool_run):
    # with all labels available, five query labels per task make ranking measurable
    g, cfg, pool, res = shared_pool_run
    trained = P.adapt_stage(g, res.prior, res.split, res.paths, res.corpus, cfg, steps=1, pool=pool)
    untrained = P.adapt_stage(g, res.initial_prior, res.split, res.paths, res.corpus, cfg, steps=0, pool=pool)
    a, b = _auroc(trained), _auroc(untrained)
    assert a >= 0.75
    assert a - b >= 0.05


def test_query_loss_falls_during_meta_training(shared_pool_run):
    h = shared_pool_run[3].history
    assert np.mean(h.query_losses()[-3:]) < np.mean(h.query_losses()[:3])


def test_label_disjoint_target_pool_clips_query_count():
    cfg = RunConfig()
    assert P.query_count(cfg, 2) == 1
    assert P.query_count(cfg, 12) == 5
