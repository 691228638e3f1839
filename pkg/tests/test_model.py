import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgreed.errors import ConfigError, InvalidInputError
from fedgreed.model import Dataset, LossOracle, OptimizerState, gradient, loss, optimizer_step, predict_accuracy

from oracles import central_differences, per_sample_loss, reference_adam


def random_problem(rng, kind="softmax_regression", n=32, f=4, c=3, hidden=5, l2=0.0):
    oracle = LossOracle(f, c, kind, hidden if kind == "mlp_1hidden" else 0, l2)
    data = Dataset(rng.normal(size=(n, f)), rng.integers(0, c, size=n), c)
    return oracle, rng.normal(size=oracle.dim), data


def test_dim_softmax_and_mlp():
    assert LossOracle(784, 10).dim == 7850
    assert LossOracle(4, 3, "mlp_1hidden", hidden=5).dim == 5 * 4 + 5 + 3 * 5 + 3


@pytest.mark.parametrize("c", [2, 3, 10])
def test_zero_params_loss_is_log_c(c):
    rng = np.random.default_rng(c)
    oracle = LossOracle(6, c)
    data = Dataset(rng.normal(size=(20, 6)), rng.integers(0, c, 20), c)
    assert loss(oracle, np.zeros(oracle.dim), data) == pytest.approx(math.log(c), abs=1e-15)


def test_zero_params_ten_classes():
    oracle = LossOracle(3, 10)
    data = Dataset(np.ones((5, 3)), np.arange(5), 10)
    assert loss(oracle, np.zeros(oracle.dim), data) == pytest.approx(2.302585, abs=1e-6)


@pytest.mark.parametrize("kind", ["softmax_regression", "mlp_1hidden"])
@pytest.mark.parametrize("l2", [0.0, 0.3])
def test_loss_matches_per_sample_loop(kind, l2):
    rng = np.random.default_rng(11)
    for _ in range(5):
        oracle, params, data = random_problem(rng, kind, l2=l2)
        expected = per_sample_loss(oracle, params, data)
        assert loss(oracle, params, data) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("kind", ["softmax_regression", "mlp_1hidden"])
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(5)
    oracle, params, data = random_problem(rng, kind, l2=0.1)
    g = gradient(oracle, params, data)
    fd = central_differences(lambda p: loss(oracle, p, data), params)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_duplicated_sample_same_gradient():
    rng = np.random.default_rng(2)
    oracle = LossOracle(4, 3)
    x, y = rng.normal(size=(1, 4)), np.array([2])
    params = rng.normal(size=oracle.dim)
    once = gradient(oracle, params, Dataset(x, y, 3))
    twice = gradient(oracle, params, Dataset(np.vstack([x, x]), np.concatenate([y, y]), 3))
    np.testing.assert_array_equal(once, twice)


def test_gradient_vanishes_on_separable_toy_after_training():
    oracle = LossOracle(1, 2)
    data = Dataset(np.array([[-1.0], [1.0]]), np.array([0, 1]), 2)
    params = np.zeros(oracle.dim)
    # short second-moment memory so steps stay large as the gradient decays
    opt = OptimizerState("adam", learning_rate=0.1, beta2=0.9)
    for _ in range(2000):
        params = opt.step(params, gradient(oracle, params, data))
    assert np.linalg.norm(gradient(oracle, params, data)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4))
def test_loss_is_mean_permutation_and_duplication_invariant(seed, k):
    rng = np.random.default_rng(seed)
    oracle, params, data = random_problem(rng, n=9)
    base = loss(oracle, params, data)
    perm = rng.permutation(len(data))
    assert loss(oracle, params, data.subset(perm)) == pytest.approx(base, rel=1e-12)
    dup = data.subset(np.tile(np.arange(len(data)), k))
    assert loss(oracle, params, dup) == pytest.approx(base, rel=1e-12)


def test_loss_errors():
    oracle = LossOracle(3, 2)
    data = Dataset(np.zeros((2, 3)), np.array([0, 1]), 2)
    with pytest.raises(ConfigError):
        loss(oracle, np.zeros(oracle.dim + 1), data)
    with pytest.raises(InvalidInputError):
        loss(oracle, np.zeros(oracle.dim), Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2))


def test_dataset_rejects_bad_labels():
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((2, 1)), np.array([0, 2]), 2)
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((3, 1)), np.array([0, 1]), 2)


def test_loss_is_deterministic():
    rng = np.random.default_rng(0)
    oracle, params, data = random_problem(rng, "mlp_1hidden")
    assert loss(oracle, params, data) == loss(oracle, params.copy(), data)
    np.testing.assert_array_equal(gradient(oracle, params, data), gradient(oracle, params, data))


def test_sgd_step():
    state = OptimizerState("sgd", learning_rate=0.1)
    out = optimizer_step(state, np.array([1.0, 1.0]), np.array([2.0, -2.0]))
    np.testing.assert_allclose(out, [0.8, 1.2], rtol=0, atol=1e-15)
    assert state.step_count == 1


@pytest.mark.parametrize("betas", [(0.9, 0.999), (0.0, 0.0)])
def test_adam_first_step_is_sign_step(betas):
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    state = OptimizerState("adam", 0.01, *betas, eps=0.0)
    out = state.step(np.zeros(4), g)
    np.testing.assert_allclose(out, -0.01 * np.sign(g), rtol=1e-12)


def test_adam_matches_reference_on_quadratic():
    state = OptimizerState("adam", learning_rate=0.001)
    x = np.array([1.0])
    for _ in range(10):
        x = state.step(x, 2 * x)
    expected = reference_adam(lambda v: 2 * v, 1.0, 10, 0.001)
    assert x[0] == pytest.approx(expected, abs=1e-12)
    assert state.step_count == 10


def test_adam_fresh_resets_moments():
    state = OptimizerState("adam")
    state.step(np.zeros(2), np.ones(2))
    fresh = state.fresh()
    assert fresh.step_count == 0 and fresh.m is None
    assert state.step_count == 1


def test_optimizer_propagates_non_finite_gradient():
    state = OptimizerState("sgd", learning_rate=1.0)
    out = state.step(np.zeros(2), np.array([np.inf, 1.0]))
    assert np.isneginf(out[0]) and out[1] == -1.0


def test_optimizer_shape_mismatch():
    with pytest.raises(ConfigError):
        OptimizerState("sgd").step(np.zeros(2), np.zeros(3))


def test_accuracy_zero_params_tie_break():
    labels = np.repeat(np.arange(10), 3)
    data = Dataset(np.random.default_rng(0).normal(size=(30, 4)), labels, 10)
    oracle = LossOracle(4, 10)
    assert predict_accuracy(oracle, np.zeros(oracle.dim), data) == pytest.approx(0.1)
    assert np.all(oracle.predict(np.zeros(oracle.dim), data) == 0)


def test_accuracy_single_correct_sample():
    oracle = LossOracle(1, 2)
    params = np.array([-1.0, 1.0, 0.0, 0.0])
    assert predict_accuracy(oracle, params, Dataset(np.array([[2.0]]), np.array([1]), 2)) == 1.0


def test_accuracy_after_convergence_on_blobs():
    from fedgreed.data import synthetic_blobs

    data = synthetic_blobs(200, 3, 3, 10.0, seed=4)
    oracle = LossOracle(3, 3)
    params = np.zeros(oracle.dim)
    opt = OptimizerState("adam", learning_rate=0.05)
    for _ in range(500):
        params = opt.step(params, gradient(oracle, params, data))
    assert predict_accuracy(oracle, params, data) == 1.0


def test_accuracy_empty_dataset():
    oracle = LossOracle(2, 2)
    with pytest.raises(InvalidInputError):
        predict_accuracy(oracle, np.zeros(oracle.dim), Dataset(np.zeros((0, 2)), np.zeros(0, int), 2))
