import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haam.consensus import (
    ConsensusConfig,
    ConsensusResult,
    consensus_objective,
    predict_labels,
    proximal_consensus,
    soft_threshold,
)
from haam.errors import InvalidInputError
from haam.model import softmax


def random_probs(rng, n_dims, n=25, c=4):
    return [softmax(rng.standard_normal((n, c)) * 2) for _ in range(n_dims)]


def test_soft_threshold_examples():
    np.testing.assert_allclose(soft_threshold(np.array([2.5, -0.3]), 1.0), [1.5, 0.0])
    v = np.array([[1.0, -2.0], [0.25, 0.0]])
    np.testing.assert_array_equal(soft_threshold(v, 0.0), v)
    assert not soft_threshold(v, 2.0).any()
    with pytest.raises(InvalidInputError):
        soft_threshold(v, -0.1)


def test_config_validation_and_step():
    cfg = ConsensusConfig()
    assert (cfg.beta, cfg.iterations) == (1.0, 200)
    assert ConsensusConfig.step_size(3) == 1.0 / 12
    with pytest.raises(InvalidInputError):
        ConsensusConfig(beta=-1.0)
    with pytest.raises(InvalidInputError):
        ConsensusConfig(iterations=0)
    with pytest.raises(InvalidInputError):
        proximal_consensus([])
    with pytest.raises(InvalidInputError):
        proximal_consensus([np.zeros((2, 2)), np.zeros((3, 2))])


def test_unregularized_recovers_mean(rng):
    one = random_probs(rng, 1)
    res = proximal_consensus(one, ConsensusConfig(beta=0.0))
    np.testing.assert_allclose(res.y_hat, one[0], atol=1e-8)
    two = random_probs(rng, 2)
    res = proximal_consensus(two, ConsensusConfig(beta=0.0))
    np.testing.assert_allclose(res.y_hat, (two[0] + two[1]) / 2, atol=1e-8)


def test_scalar_fixed_point():
    # 4y - 2.4 + beta * sign(y) = 0 with beta = 1
    res = proximal_consensus([np.array([[0.8]]), np.array([[0.4]])], ConsensusConfig(beta=1.0))
    assert res.y_hat[0, 0] == pytest.approx(0.35, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(n_dims=st.integers(1, 4), beta=st.floats(0, 5), seed=st.integers(0, 2**31))
def test_objective_nonincreasing_and_optimal(n_dims, beta, seed):
    rng = np.random.default_rng(seed)
    y_ds = random_probs(rng, n_dims)
    res = proximal_consensus(y_ds, ConsensusConfig(beta=beta))
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9)
    assert trace[-1] == pytest.approx(consensus_objective(res.y_hat, y_ds, beta))
    # separable closed form of the minimizer
    closed = soft_threshold(res.dimension_mean, beta / (2 * n_dims))
    np.testing.assert_allclose(res.y_hat, closed, atol=1e-8)
    mean = res.dimension_mean
    assert res.y_hat.min() >= -mean.max() - 1e-12 and res.y_hat.max() <= 1.0 + 1e-12
    assert np.all(np.abs(res.y_hat) <= np.abs(mean) + 1e-12)


def test_nnz_monotone_in_beta(rng):
    for _ in range(20):
        y_ds = random_probs(rng, 3, n=40, c=5)
        counts = [proximal_consensus(y_ds, ConsensusConfig(beta=b)).nnz
                  for b in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_result_bookkeeping(rng):
    res = proximal_consensus(random_probs(rng, 2), ConsensusConfig(iterations=5, tol=0.0))
    assert res.iterations == 5 and len(res.objective_trace) == 6


def _result(y_hat, mean=None):
    y_hat = np.asarray(y_hat, dtype=float)
    return ConsensusResult(y_hat, [0.0], np.asarray(mean if mean is not None else y_hat, float))


def test_predict_label_examples():
    assert predict_labels(_result([[0.9, 0.1, 0.0]]))[0] == 0
    assert predict_labels(_result([[0.0, 0.0, 0.0]], [[0.2, 0.5, 0.3]]))[0] == 1
    assert predict_labels(_result([[0.5, 0.5]]))[0] == 0
    pred = predict_labels(_result([[0.0, 0.7], [0.0, 0.0]], [[0.9, 0.1], [0.1, 0.9]]))
    np.testing.assert_array_equal(pred, [1, 1])
