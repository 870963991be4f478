import itertools

import numpy as np
import pytest

from metamiml.hmin import parse_hmin
from metamiml.skipgram import (
    EmbeddingTable,
    SgConfig,
    bag_context,
    context_from_row,
    init_table,
    load_embedding,
    save_embedding,
    train_skipgram,
    training_pairs,
)
from metamiml.walks import generate_corpus, parse_metapath


def two_cliques(size=5):
    lines = ["HMIN v1", "T G BAG", "T D", "R GD G D", "L 0 x"]
    groups = []
    for c in range(2):
        gs = list(range(c * 100, c * 100 + size))
        ds = list(range(c * 100 + 50, c * 100 + 50 + size))
        groups.append(gs + ds)
        lines += [f"N {v} G" for v in gs] + [f"N {v} D" for v in ds]
        lines += [f"E GD {a} {b}" for a in gs for b in ds]
    for c in range(2):
        for v in range(c * 100, c * 100 + size):
            lines += [f"B {v} 1 1", "0", "Y"]
    return parse_hmin("\n".join(lines) + "\n"), groups


def test_window_one_pairs():
    assert set(training_pairs(["a", "b", "c"], 1)) == {("a", "b"), ("b", "a"), ("b", "c"), ("c", "b")}
    assert len(training_pairs(["a", "b", "c"], 1)) == 4


def test_window_pairs_brute_force():
    walk = list(range(9))
    for window in (1, 2, 4, 10):
        expected = [(walk[i], walk[j]) for i in range(9) for j in range(9) if i != j and abs(i - j) <= window]
        assert training_pairs(walk, window) == expected


def test_zero_epochs_is_initialization(toy):
    p = parse_metapath("G-D-G", toy)
    corpus = generate_corpus(toy, [p], 3, 6, seed=0)
    cfg = SgConfig(dim=4, epochs=0, seed=5)
    t = train_skipgram(corpus, 0, cfg, g=toy)
    ref = init_table(sorted(toy.node_type), 4, str(p), np.random.default_rng(np.random.SeedSequence([5, 0])))
    assert np.array_equal(t.W, ref.W) and np.array_equal(t.C, ref.C)
    assert np.array_equal(t.b, np.zeros(4))
    assert np.all(np.abs(t.W) <= 0.5 / 4)


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_components_separate():
    g, groups = two_cliques()
    p = parse_metapath("G-D-G", g)
    corpus = generate_corpus(g, [p], 10, 20, seed=0)
    t = train_skipgram(corpus, 0, SgConfig(dim=8, epochs=20, lr=0.05, seed=1, batch_size=64), g=g)
    within, cross = [], []
    for (i, a), (j, b) in itertools.combinations([(i, v) for i, grp in enumerate(groups) for v in grp], 2):
        c = _cos(t.W[t.row(a)], t.W[t.row(b)])
        (within if i == j else cross).append(c)
    assert np.mean(within) > np.mean(cross)


def test_loss_decreases_over_windows(synth_default):
    # the symmetric cliques hit a sampling-noise floor after two epochs, so use the planted graph
    g, _ = synth_default
    corpus = generate_corpus(g, [parse_metapath("G-D-G", g)], 2, 20, seed=0)
    hist: list[float] = []
    train_skipgram(corpus, 0, SgConfig(dim=8, epochs=15, lr=1e-2, seed=2, batch_size=64), g=g, history=hist)
    assert len(hist) == 15
    for start in range(len(hist) - 4):
        assert hist[start + 4] <= hist[start]


def test_deterministic(toy):
    corpus = generate_corpus(toy, [parse_metapath("G-D-G", toy)], 5, 8, seed=0)
    cfg = SgConfig(dim=4, epochs=3, seed=9, batch_size=7)
    a = train_skipgram(corpus, 0, cfg, g=toy)
    b = train_skipgram(corpus, 0, cfg, g=toy)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.C, b.C)


def test_negatives_match_context_type(toy):
    from metamiml.skipgram import _TypedNegatives

    corpus = generate_corpus(toy, [parse_metapath("G-D-G", toy)], 5, 8, seed=0)
    ids = sorted(toy.node_type)
    row_of = {v: i for i, v in enumerate(ids)}
    names = sorted(toy.types)
    types = np.array([names.index(toy.node_type[v]) for v in ids])
    sampler = _TypedNegatives(corpus, 0, row_of, types)
    ctx = np.array([row_of[0], row_of[10], row_of[2], row_of[11]] * 50)
    neg = sampler.draw(ctx, 5, np.random.default_rng(0))
    assert np.all(types[neg] == types[ctx][:, None])


def _table(w_row, b):
    return EmbeddingTable(np.array([7]), np.array([w_row], dtype=float), np.zeros((1, len(w_row))), np.array(b, dtype=float), "G-D-G")


def test_bag_context_leaky_relu():
    assert np.allclose(bag_context(_table([-1.0, 2.0], [0.0, 0.0]), 7), [-0.01, 2.0])
    assert np.array_equal(bag_context(_table([0.5, -0.5], [-0.5, 0.5]), 7), [0.0, 0.0])


def test_bag_context_gradient_fd(rng):
    h = 1e-5
    for _ in range(20):
        w = rng.normal(size=6)
        b = rng.normal(size=6)
        w[np.abs(w + b) < 1e-3] += 0.01
        _, analytic = context_from_row(w, b, 0.01)
        numeric = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            numeric[i] = (context_from_row(w + e, b, 0.01)[0][i] - context_from_row(w - e, b, 0.01)[0][i]) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-12)
        assert rel.max() < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        SgConfig(slope=1.5)
    with pytest.raises(ValueError):
        SgConfig(window=0)


def test_embedding_round_trip(tmp_path, toy):
    corpus = generate_corpus(toy, [parse_metapath("G-D-G", toy)], 2, 4, seed=0)
    t = train_skipgram(corpus, 0, SgConfig(dim=3, epochs=1), g=toy)
    t.b[:] = [0.1, -0.2, 1 / 3]
    save_embedding(t, tmp_path / "t.sgemb")
    back = load_embedding(tmp_path / "t.sgemb")
    assert np.array_equal(back.W, t.W) and np.array_equal(back.b, t.b)
    assert np.array_equal(back.node_ids, t.node_ids) and back.path == "G-D-G"
