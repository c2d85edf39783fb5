import numpy as np
import pytest

from haam.graph import build_rescaled_laplacian, symmetrize
from haam.model import TrainConfig, init_state, one_hot
from haam.synthgen import SynthConfig, generate


def random_graph(n, p, rng, dimension_id=0):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return symmetrize(np.stack([iu[keep], ju[keep]], axis=1), n, dimension_id)


def random_laplacian(rng, n_max=30):
    n = int(rng.integers(2, n_max + 1))
    return build_rescaled_laplacian(random_graph(n, rng.uniform(0.05, 0.6), rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fd_instance():
    """A 30-node, two-dimension, K=2 model with parameters moved off their init values."""
    bundle = generate(SynthConfig(n_nodes=30, n_classes=3, rho=(0.3, 0.8), mean_degree=4,
                                  feature_dim=5, seed=3))
    cfg = TrainConfig(K=2, M=8, alpha=0.01, seed=1)
    train_idx = bundle.splits["train"]
    state = init_state(bundle.features, bundle.labels, train_idx, bundle.graph, 3, cfg)
    r = np.random.default_rng(0)
    for h in state.compat:
        h[...] = r.standard_normal(h.shape)
    for g in state.gammas:
        g.gamma[...] = r.uniform(0.1, 0.5, g.gamma.shape)
    return bundle, state, cfg, one_hot(bundle.labels, 3), train_idx


# -- acceptance summary -----------------------------------------------------------

_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}")
