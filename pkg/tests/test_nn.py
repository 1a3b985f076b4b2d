import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opesel import nn
from opesel.nn import MLP, Adam, NetConfig, PatternSet

SMALL = NetConfig(hidden_units=32, max_epochs=60, patience=8, learning_rate=3e-3)


def test_adam_two_steps_by_hand():
    p = [np.array([1.0])]
    opt = Adam(lr=0.1)
    expected, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate([0.5, -0.25], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.1 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        opt.step(p, [np.array([g])])
        assert p[0][0] == pytest.approx(expected, abs=1e-15)
    # the first step has magnitude lr regardless of the gradient scale
    assert 1.0 - 0.0999999 > p[0][0] > 0.87


def test_constant_target():
    rng = np.random.default_rng(0)
    X = (rng.random((1000, 4)) < 0.5).astype(float)  # binary inputs, as with one-hot state features
    model = nn.fit_regressor(PatternSet(X, np.full(1000, 0.7)), NetConfig(hidden_units=100))
    assert np.abs(nn.predict(model, X) - 0.7).max() < 1e-2


def test_linear_target_fits():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(1000, 5))
    y = X @ np.array([0.5, -1.0, 0.25, 0.0, 2.0])
    model = nn.fit_regressor(PatternSet(X, y), NetConfig(hidden_units=64, learning_rate=3e-3))
    assert model.history["best_val_loss"] < 1e-3 * y.var()


def test_same_seed_same_weights():
    rng = np.random.default_rng(2)
    pats = PatternSet(rng.normal(size=(200, 3)), rng.normal(size=200))
    a = nn.fit_regressor(pats, SMALL.with_seed(5))
    b = nn.fit_regressor(pats, SMALL.with_seed(5))
    c = nn.fit_regressor(pats, SMALL.with_seed(6))
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_early_stopping_restores_best_epoch():
    rng = np.random.default_rng(3)
    pats = PatternSet(rng.normal(size=(100, 2)), rng.normal(size=100))
    model = nn.fit_regressor(pats, NetConfig(hidden_units=64, learning_rate=1e-2, patience=3, max_epochs=100))
    h = model.history
    assert h["epochs_run"] <= 100
    assert h["best_val_loss"] == pytest.approx(min([h["best_val_loss"], *h["val_loss"]]))


def test_masked_loss_ignores_unmasked_outputs():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 3))
    Y = rng.normal(size=(50, 2))
    M = np.zeros((50, 2))
    M[:, 0] = 1
    model = MLP.init("regression", 3, 2, SMALL)
    base = model.loss(PatternSet(X, Y, M))
    Y2 = Y.copy()
    Y2[:, 1] += 100
    assert model.loss(PatternSet(X, Y2, M)) == base


def test_nan_targets_abort():
    X = np.ones((20, 2))
    y = np.full(20, np.nan)
    with pytest.raises(nn.TrainingError):
        nn.fit_regressor(PatternSet(X, y), SMALL)


def test_single_class_classifier():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(1000, 3))
    model = nn.fit_classifier(PatternSet(X, np.full(1000, 2)), NetConfig(hidden_units=32, learning_rate=3e-3), n_classes=4)
    assert nn.predict(model, X)[:, 2].min() >= 0.99


def test_classifier_on_random_labels_is_near_uniform():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(4000, 3))
    labels = rng.integers(8, size=4000)
    model = nn.fit_classifier(PatternSet(X, labels), NetConfig(hidden_units=16, learning_rate=1e-3))
    probs = nn.predict(model, rng.normal(size=(2000, 3)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.abs(probs.mean(axis=0) - 1 / 8).max() < 0.05


def test_predict_dimension_and_batch_consistency():
    model = MLP.init("regression", 3, 2, SMALL)
    X = np.random.default_rng(7).normal(size=(5, 3))
    batch = nn.predict(model, X)
    np.testing.assert_allclose(np.stack([nn.predict(model, x) for x in X]), batch, atol=1e-12)
    with pytest.raises(ValueError):
        nn.predict(model, np.ones((2, 4)))


def test_gradient_check_tiny_net():
    cfg = NetConfig(hidden_units=1)
    model = MLP.init("regression", 1, 1, cfg, seed=1)
    rep = nn.gradient_check(model, PatternSet(np.array([[0.3]]), np.array([0.9])), tolerance=1e-6)
    assert rep.passed and rep.n_checked == 4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2), st.sampled_from(["regression", "classification"]))
def test_gradient_check_random_nets(seed, layers, task):
    rng = np.random.default_rng(seed)
    cfg = NetConfig(hidden_layers=layers, hidden_units=6)
    model = MLP.init(task, 4, 3, cfg, seed=seed)
    X = rng.normal(size=(7, 4))
    if task == "regression":
        pats = PatternSet(X, rng.normal(size=(7, 3)), (rng.random((7, 3)) < 0.6).astype(float) + 0.0)
        pats.mask[0, 0] = 1.0
    else:
        pats = PatternSet(X, rng.integers(3, size=7))
    rep = nn.gradient_check(model, pats)
    assert rep.passed, rep


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model = nn.fit_regressor(PatternSet(rng.normal(size=(80, 3)), rng.normal(size=80)), SMALL)
    nn.save_model(model, tmp_path / "m.npz")
    back = nn.load_model(tmp_path / "m.npz")
    X = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(nn.predict(back, X), nn.predict(model, X))
