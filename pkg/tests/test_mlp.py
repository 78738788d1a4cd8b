import numpy as np
import pytest

from softprbm.core import ValidationError
from softprbm.mlp import (
    DimensionMismatch,
    MlpSpec,
    MlpSurrogate,
    Normalizer,
    TrainConfig,
    gradient_check,
    init_params,
    r_squared,
    train,
)


def test_r_squared_hand_values():
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    assert r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(0.0)
    assert r_squared([0.0, 0.5], [0.0, 1.0]) == pytest.approx(0.5)


def test_r_squared_zero_variance():
    with pytest.raises(ValidationError):
        r_squared([1.0, 1.0], [2.0, 2.0])


def test_linear_target_reaches_threshold():
    x = np.linspace(-1, 1, 100)[:, None]
    model, hist = train(MlpSpec(1, (8,), 1, seed=0), x, 2 * x, TrainConfig(max_iterations=2000, learning_rate=1e-2))
    assert hist.holdout_r2 >= 0.999
    out = model.predict(np.array([[0.0]]))
    assert abs(out[0, 0]) < 0.05


def test_loss_does_not_diverge_on_convex_task():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]])
    _, hist = train(MlpSpec(3, (16,), 1, seed=1), x, y, TrainConfig(max_iterations=500, learning_rate=3e-3))
    windows = hist.loss[: 500 // 50 * 50].reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(windows) <= 1e-12)


def test_zero_iterations_keeps_initial_weights():
    spec = MlpSpec(2, (4,), 1, seed=5)
    x = np.random.default_rng(1).normal(size=(20, 2))
    model, hist = train(spec, x, x[:, :1], TrainConfig(max_iterations=0))
    for (w, b), (w0, b0) in zip(model.params, init_params(spec)):
        np.testing.assert_array_equal(w, w0)
        np.testing.assert_array_equal(b, b0)
    assert hist.iterations == 0


def test_gradient_check_small_network():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(16, 3))
    y = rng.normal(size=(16, 2))
    model, _ = train(MlpSpec(3, (5, 4), 2, seed=3), x, y, TrainConfig(max_iterations=20))
    dev = gradient_check(model, x, y)
    assert dev <= 1e-4
    assert gradient_check(model, x, y) == dev


def test_gradient_check_zero_network():
    spec = MlpSpec(2, (3,), 1, seed=0)
    params = [(np.zeros_like(w), np.zeros_like(b)) for w, b in init_params(spec)]
    model = MlpSurrogate(spec, params, Normalizer.zscore(np.array([[0.0, 0.0], [1.0, 1.0]])), Normalizer(np.zeros(1), np.ones(1)))
    x = np.array([[0.2, 0.4], [0.6, 0.1]])
    assert gradient_check(model, x, np.zeros((2, 1))) < 1e-12


def test_predict_order_and_shape():
    x = np.linspace(0, 1, 50)[:, None]
    model, _ = train(MlpSpec(1, (8,), 1, seed=0), x, x**2, TrainConfig(max_iterations=50))
    full = model.predict(x)
    assert full.shape == (50, 1)
    np.testing.assert_array_equal(full[[3, 7]], model.predict(x[[3, 7]]))


def test_dimension_mismatch():
    model, _ = train(MlpSpec(2, (4,), 1), np.zeros((10, 2)) + np.arange(10)[:, None], np.arange(10.0), TrainConfig(max_iterations=1))
    with pytest.raises(DimensionMismatch):
        model.predict(np.zeros((3, 3)))


def test_training_is_deterministic_and_serializable(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(64, 2))
    y = np.sin(x[:, :1]) + x[:, 1:] ** 2
    cfg = TrainConfig(max_iterations=100, batch_size=16, seed=9)
    a, _ = train(MlpSpec(2, (8, 8), 1, seed=1), x, y, cfg)
    b, _ = train(MlpSpec(2, (8, 8), 1, seed=1), x, y, cfg)
    np.testing.assert_array_equal(a.predict(x), b.predict(x))
    back = MlpSurrogate.load(a.save(tmp_path / "m.json"))
    np.testing.assert_array_equal(back.predict(x), a.predict(x))


def test_predict_training_point_within_residual():
    x = np.linspace(-2, 2, 80)[:, None]
    y = np.tanh(x)
    model, hist = train(MlpSpec(1, (16, 16), 1, seed=0), x, y, TrainConfig(max_iterations=1500, learning_rate=3e-3, holdout_fraction=0.0))
    err = np.abs(model.predict(x) - y)
    assert np.median(err) <= 3 * hist.train_rmse
