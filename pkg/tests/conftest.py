import numpy as np
import pytest

from metamiml.hmin import parse_hmin
from metamiml.synth import SynthConfig, generate_synthetic

TOY = """\
HMIN v1
# three bags, two drugs, one miRNA
T G BAG
T D
T M
R GD G D
R GM G M
L 0 a
L 1 b
L 2 c
N 0 G
N 1 G
N 2 G
N 10 D
N 11 D
N 20 M
E GD 0 10
E GD 1 10
E GD 1 11
E GD 2 11
E GM 0 20
E GM 2 20
B 0 2 3
0.1 0.2 0.3
0.4 0.5 0.6
Y 0 1
B 1 1 3
1.0 0.0 -1.0
Y 2
B 2 3 3
0.0 0.0 0.0
1.5 2.5 3.5
-0.25 0.125 1e-3
Y
"""


@pytest.fixture
def toy_text():
    return TOY


@pytest.fixture
def toy():
    return parse_hmin(TOY)


@pytest.fixture(scope="session")
def synth_default():
    return generate_synthetic(SynthConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def trained_setup(synth_default):
    """Walks, embeddings, split and an untrained prior on the default synthetic graph."""
    from metamiml import pipeline as P
    from metamiml.config import RunConfig

    g, manifest = synth_default
    cfg = RunConfig()
    corpus = P.walk_stage(g, cfg)
    tables = P.embed_stage(g, corpus, cfg)
    split = P.split_stage(g, cfg)
    prior = P.init_prior(g, tables, cfg)
    return dict(g=g, manifest=manifest, cfg=cfg, corpus=corpus, tables=tables, split=split, prior=prior,
                paths=list(corpus.paths))


@pytest.fixture(scope="session")
def full_pool_tasks(trained_setup):
    """One task per bag over the whole label space (5 query labels)."""
    from metamiml.episodes import build_tasks

    s = trained_setup
    g = s["g"]
    return build_tasks(g, g.bag_nodes(), s["paths"], None, 5, seed=31, corpus=s["corpus"], pool=sorted(g.labels))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
