import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from nashlearn.games import PreferenceSample
from nashlearn.preferences import (
    AdamState,
    PreferenceModel,
    ThetaVector,
    TrainConfig,
    adam_step,
    cross_entropy,
    dissimilarity,
    pinned_curvature_template,
    pref_probability,
    train,
    training_gradient,
    training_loss,
)
from nashlearn.solvers import QuadraticAgentObjective


def _random_objective(rng, n_own=2, n_others=3):
    L = np.tril(rng.standard_normal((n_own, n_own)) * 0.4, -1)
    L += np.diag(rng.uniform(0.5, 1.5, n_own))
    q = rng.standard_normal(n_own)
    A = 0.3 * rng.standard_normal((n_others, n_own))
    return QuadraticAgentObjective(L, q, A)


def _random_dataset(rng, obj, m=25):
    ds = []
    for _ in range(m):
        x1 = rng.uniform(-2, 2, obj.dim)
        x2 = rng.uniform(-2, 2, obj.dim)
        xo = rng.uniform(-2, 2, obj.n_others)
        label = 1 if obj.value(x1, xo) <= obj.value(x2, xo) else 0
        ds.append(PreferenceSample(x1, x2, xo, label))
    return ds


# --- probability identities ------------------------------------------------


def test_equal_candidates_give_exactly_half():
    obj = _random_objective(np.random.default_rng(0))
    x = np.array([0.3, -0.8])
    xo = np.zeros(3)
    assert pref_probability(obj, x, x, xo) == 0.5


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_swap_complement_identity(seed):
    rng = np.random.default_rng(seed)
    obj = _random_objective(rng)
    x1 = rng.uniform(-3, 3, 2)
    x2 = rng.uniform(-3, 3, 2)
    xo = rng.uniform(-3, 3, 3)
    p12 = pref_probability(obj, x1, x2, xo)
    p21 = pref_probability(obj, x2, x1, xo)
    assert abs(p12 + p21 - 1.0) <= 1e-15


def test_dissimilarity_zero_distance_floor():
    x = np.array([1.0, 2.0])
    assert dissimilarity(x, x, eps_d=1e-6) == math.log(1.0 + 1e-6)
    assert dissimilarity(x, x, eps_d=0.5) == math.log(1.5)


def test_dissimilarity_grows_with_linf_gap():
    a = dissimilarity([0.0], [0.1])
    b = dissimilarity([0.0], [3.0])
    assert 0 < a < b
    assert b == pytest.approx(math.log(4.0 + 1e-6))


def test_dissimilarity_kinds_positive():
    x1, x2 = np.array([0.2, 0.2]), np.array([0.2, 0.2])
    for kind in ("log-linf", "l2", "sqrt-l2"):
        assert dissimilarity(x1, x2, kind=kind) > 0


def test_preference_prefers_lower_objective():
    # minimizer at the origin; the closer candidate should get p > 1/2,
    # approaching 1 as the objective gap dominates the dissimilarity scale
    obj = QuadraticAgentObjective(np.eye(1), np.zeros(1), np.zeros((1, 1)))
    assert pref_probability(obj, [0.1], [2.0], [0.0]) > 0.85
    assert pref_probability(obj, [0.0], [5.0], [0.0]) > 0.99


def test_cross_entropy_matches_definition_and_clamps():
    assert cross_entropy(1, 0.7) == pytest.approx(-math.log(0.7))
    assert cross_entropy(0, 0.7) == pytest.approx(-math.log(0.3))
    assert np.isfinite(cross_entropy(1, 0.0))  # clamp keeps the loss finite
    assert cross_entropy(1, 0.0) == pytest.approx(-math.log(1e-12))


# --- training loss / gradient ----------------------------------------------


def test_training_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    cfg = TrainConfig()
    worst = 0.0
    for _ in range(10):
        obj = _random_objective(rng)
        ds = _random_dataset(rng, obj, m=20)
        theta = ThetaVector.initial(2, 3).with_values(
            ThetaVector.initial(2, 3).values + 0.1 * rng.standard_normal(ThetaVector.expected_length(2, 3))
        )
        g = training_gradient(theta, ds, cfg)
        h = 1e-6
        for j in range(theta.size):
            e = np.zeros(theta.size)
            e[j] = h
            fp = training_loss(theta.with_values(theta.values + e), ds, cfg)
            fm = training_loss(theta.with_values(theta.values - e), ds, cfg)
            fd = (fp - fm) / (2 * h)
            scale = max(1.0, abs(fd), abs(g[j]))
            worst = max(worst, abs(g[j] - fd) / scale)
    assert worst <= 1e-5


def test_doubling_dataset_leaves_gradient_unchanged():
    # mean-normalized loss: duplicating every sample must not change anything
    rng = np.random.default_rng(11)
    obj = _random_objective(rng)
    ds = _random_dataset(rng, obj, m=15)
    theta = ThetaVector.initial(2, 3)
    cfg = TrainConfig(reg_weight=0.01)
    g1 = training_gradient(theta, ds, cfg)
    g2 = training_gradient(theta, ds + ds, cfg)
    np.testing.assert_allclose(g1, g2, rtol=0, atol=1e-14)
    assert training_loss(theta, ds, cfg) == pytest.approx(training_loss(theta, ds + ds, cfg))


def test_training_loss_zero_reg_is_mean_cross_entropy():
    rng = np.random.default_rng(3)
    obj = _random_objective(rng)
    ds = _random_dataset(rng, obj, m=8)
    theta = ThetaVector.initial(2, 3)
    cfg = TrainConfig(reg_weight=0.0)
    ces = []
    for s in ds:
        p_hat = pref_probability(theta.to_objective(), s.x1, s.x2, s.x_others, cfg.eps_d)
        ces.append(cross_entropy(s.label, p_hat, cfg.p_clamp))
    assert training_loss(theta, ds, cfg) == pytest.approx(np.mean(ces))


def test_empty_dataset_raises():
    from nashlearn.exceptions import EmptyDatasetError

    theta = ThetaVector.initial(1, 1)
    with pytest.raises(EmptyDatasetError):
        training_loss(theta, [], TrainConfig())


# --- theta packing ----------------------------------------------------------


def test_theta_roundtrip_through_objective():
    rng = np.random.default_rng(5)
    obj = _random_objective(rng)
    th = ThetaVector.from_objective(obj)
    back = th.to_objective()
    np.testing.assert_allclose(back.chol, np.tril(obj.chol))
    np.testing.assert_allclose(back.q, obj.q)
    np.testing.assert_allclose(back.A, obj.A)


def test_theta_default_bounds_keep_diagonal_positive():
    th = ThetaVector.initial(3, 2)
    diag_idx = ThetaVector._diag_positions(3)
    assert np.all(th.lower[diag_idx] > 0)
    # push the diagonal negative; the projection must clip it back
    vals = th.values.copy()
    vals[diag_idx] = -5.0
    clipped = th.project(vals)
    assert np.all(clipped[diag_idx] >= th.lower[diag_idx])


def test_theta_constructor_clips_into_bounds():
    th0 = pinned_curvature_template(2, 2, p_diag=2.0, coupling_bound=0.1)
    shifted = th0.with_values(th0.values + 10.0)
    assert np.all(shifted.values <= th0.upper + 1e-15)


def test_pinned_template_objective_and_bounds():
    th = pinned_curvature_template(2, 4, p_diag=2.0, coupling_bound=0.1)
    obj = th.to_objective()
    np.testing.assert_allclose(obj.P, 2.0 * np.eye(2), atol=1e-12)
    k = 2 * 3 // 2
    assert np.all(th.lower[:k] == th.upper[:k])  # curvature locked
    assert np.all(th.lower[k + 2:] == -0.1) and np.all(th.upper[k + 2:] == 0.1)
    assert np.all(np.isinf(th.lower[k:k + 2])) and np.all(np.isinf(th.upper[k:k + 2]))


def test_pinned_template_zero_coupling_pins_A():
    th = pinned_curvature_template(1, 2, p_diag=1.0, coupling_bound=0.0)
    assert np.all(th.lower[-2:] == 0.0) and np.all(th.upper[-2:] == 0.0)


def test_pinned_template_rejects_bad_args():
    with pytest.raises(ValueError):
        pinned_curvature_template(1, 1, p_diag=0.0)
    with pytest.raises(ValueError):
        pinned_curvature_template(1, 1, coupling_bound=-1.0)


# --- optimizers --------------------------------------------------------------


def test_adam_first_step_magnitude():
    # constant unit gradient: bias correction makes the first step exactly lr
    theta = ThetaVector(np.array([1.0, 1.0, 0.0]), 1, 1)
    state = AdamState.init(theta)
    cfg = TrainConfig()
    new = adam_step(state, np.array([1.0, 0.0, 0.0]), cfg)
    assert new.theta.values[0] == pytest.approx(1.0 - cfg.adam_lr, abs=1e-9)
    assert new.step == 1


def test_train_reduces_loss_and_respects_pins():
    rng = np.random.default_rng(21)
    hidden = QuadraticAgentObjective(np.sqrt(2.0) * np.eye(1), np.array([-0.8]), np.zeros((1, 1)))
    ds = []
    for _ in range(80):
        x1 = rng.uniform(-2, 2, 1)
        x2 = rng.uniform(-2, 2, 1)
        xo = rng.uniform(-2, 2, 1)
        ds.append(PreferenceSample(x1, x2, xo, 1 if hidden.value(x1, xo) <= hidden.value(x2, xo) else 0))
    th0 = pinned_curvature_template(1, 1, p_diag=2.0, coupling_bound=0.0)
    cfg = TrainConfig()
    fitted = train(th0, ds, cfg)
    assert training_loss(fitted, ds, cfg) < training_loss(th0, ds, cfg)
    # pins survive training
    assert fitted.values[0] == pytest.approx(math.sqrt(2.0))
    assert fitted.values[-1] == 0.0
    # the implied minimizer moves toward the hidden one (q*/p = 0.4)
    assert abs(-fitted.values[1] / 2.0 - 0.4) < 0.15


def test_train_warm_start_is_noop_on_converged_theta():
    rng = np.random.default_rng(2)
    obj = _random_objective(rng, n_own=1, n_others=1)
    ds = _random_dataset(rng, obj, m=30)
    cfg = TrainConfig()
    th1 = train(ThetaVector.initial(1, 1), ds, cfg)
    th2 = train(th1, ds, cfg)
    assert training_loss(th2, ds, cfg) <= training_loss(th1, ds, cfg) + 1e-12


# --- estimator wrapper -------------------------------------------------------


def _pairs_matrix(rng, obj, m):
    rows, labels = [], []
    for _ in range(m):
        x1 = rng.uniform(-2, 2, obj.dim)
        x2 = rng.uniform(-2, 2, obj.dim)
        xo = rng.uniform(-2, 2, obj.n_others)
        rows.append(np.concatenate([x1, x2, xo]))
        labels.append(1 if obj.value(x1, xo) <= obj.value(x2, xo) else 0)
    return np.asarray(rows), np.asarray(labels)


def test_preference_model_fits_and_scores():
    rng = np.random.default_rng(13)
    obj = _random_objective(rng, n_own=2, n_others=2)
    X, y = _pairs_matrix(rng, obj, 120)
    model = PreferenceModel(n_own=2).fit(X, y)
    assert model.score(X, y) >= 0.85
    proba = model.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert set(np.unique(model.predict(X))) <= {0, 1}


def test_preference_model_sklearn_contract():
    model = PreferenceModel(n_own=3, reg_weight=0.01)
    cloned = clone(model)
    assert cloned.get_params() == model.get_params()
    model.set_params(adam_iters=10)
    assert model.adam_iters == 10


def test_preference_model_rejects_narrow_X():
    model = PreferenceModel(n_own=2)
    with pytest.raises(ValueError):
        model.fit(np.zeros((4, 3)), np.zeros(4))
