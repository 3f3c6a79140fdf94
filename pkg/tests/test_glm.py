import numpy as np
import pytest
from scipy.special import expit, logit

from flam.errors import InvalidArgumentError
from flam.models import Dataset, FitConfig, GlmConfig, PenaltySpec
from flam.services.fit import flam_bcd, objective
from flam.services.glm import (
    EXPIT_CAP,
    feature_proxes,
    ggd_solve,
    logistic_flam,
    logistic_loss,
    logistic_path,
    predict_response,
    squared_loss,
)
from flam.services.modelsel import additive_model, lambda_sparse_threshold


def binary_data(n: int, p: int, seed: int) -> Dataset:
    gen = np.random.default_rng(seed)
    X = gen.uniform(-2.5, 2.5, size=(n, p))
    eta = np.where(X[:, 0] > 0, 1.5, -1.5)
    y = (gen.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset.from_arrays(y, X)


def test_squared_ggd_matches_bcd(make_data):
    data = make_data(n=14, p=2, seed=11)
    penalty = PenaltySpec(lam=0.6, alpha=0.7)
    bcd = flam_bcd(data, penalty, FitConfig(tol=1e-14, max_sweeps=20_000))
    ggd = ggd_solve(
        squared_loss(data.y, data.p), feature_proxes(data, penalty.alpha), penalty.lam, tol=1e-14, max_iter=200_000
    )
    assert bcd.objective <= ggd.objective + 1e-9
    assert abs(ggd.objective - bcd.objective) <= 1e-5 * max(1.0, bcd.objective)


def test_logistic_gradient_matches_finite_differences(rng):
    n, p = 12, 3
    y = (rng.uniform(size=n) < 0.5).astype(float)
    loss = logistic_loss(y, p)
    h = 1e-6
    for _ in range(100):
        stacked = rng.normal(scale=1.0, size=(n, p + 1))
        grad = loss.gradient(stacked)
        i, c = int(rng.integers(n)), int(rng.integers(p + 1))
        bump = np.zeros_like(stacked)
        bump[i, c] = h
        numeric = (loss.evaluate(stacked + bump) - loss.evaluate(stacked - bump)) / (2 * h)
        assert abs(numeric - grad[i, c]) <= 1e-4 * max(1.0, abs(grad[i, c]))


def test_logistic_loss_needs_binary_response():
    with pytest.raises(InvalidArgumentError):
        logistic_loss(np.array([0.0, 2.0]), 1)


def test_derivative_is_finite_beyond_the_cap():
    loss = logistic_loss(np.array([0.0, 1.0]), 1)
    d = loss.derivative(np.array([10 * EXPIT_CAP, -10 * EXPIT_CAP]))
    assert np.all(np.isfinite(d))
    assert np.allclose(d, [1.0, -1.0], atol=1e-12)


def test_logistic_objective_never_increases():
    data = binary_data(60, 2, seed=5)
    fit = logistic_flam(data, PenaltySpec(lam=1.0, alpha=0.8), GlmConfig(tol=1e-10))
    trace = np.array(fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1.0, np.abs(trace[:-1])))
    assert fit.loss == "logistic"


def test_logistic_above_threshold_is_intercept_only():
    data = binary_data(50, 2, seed=9)
    lam = lambda_sparse_threshold(data, 1.0) * (1 + 1e-6)
    fit = logistic_flam(data, PenaltySpec(lam=lam, alpha=1.0), GlmConfig(tol=1e-14, max_iter=50_000))
    assert fit.active_features == frozenset()
    assert abs(fit.theta0 - logit(data.y.mean())) < 1e-4


def test_logistic_path_and_probabilities():
    data = binary_data(60, 2, seed=3)
    path = logistic_path(data, alpha=1.0, n_lambda=5, lambda_min_ratio=0.05)
    assert len(path) == 5
    assert path.fits[0].active_features == frozenset()
    prob = predict_response(additive_model(path.fits[-1], data), data.X)
    assert np.all((prob > 0) & (prob < 1))
    assert 0 in path.fits[-1].active_features


def test_threaded_prox_steps_are_identical():
    data = binary_data(40, 3, seed=2)
    penalty = PenaltySpec(lam=0.5, alpha=0.5)
    serial = logistic_flam(data, penalty, GlmConfig(threads=1))
    threaded = logistic_flam(data, penalty, GlmConfig(threads=3))
    assert np.array_equal(serial.thetas, threaded.thetas)
    assert serial.theta0 == threaded.theta0


def test_predict_response_rejects_unknown_loss(small_data):
    model = additive_model(flam_bcd(small_data, PenaltySpec(lam=1.0)), small_data)
    with pytest.raises(InvalidArgumentError):
        predict_response(model, small_data.X, "poisson")


def test_logistic_hessian_is_bounded_by_the_lipschitz_constant(rng):
    for _ in range(50):
        n, p = int(rng.integers(2, 21)), int(rng.integers(1, 4))
        loss = logistic_loss((rng.uniform(size=n) < 0.5).astype(float), p)
        eta = rng.normal(scale=3.0, size=n)
        w = expit(eta) * (1 - expit(eta))
        # Stacked Θ is (n, p+1); the Hessian is diag(w) ⊗ 𝟙𝟙ᵀ.
        hessian = np.kron(np.diag(w), np.ones((p + 1, p + 1)))
        assert np.linalg.eigvalsh(hessian).max() <= loss.lipschitz + 1e-10
        assert loss.curvature == pytest.approx(0.25)


def test_squared_ggd_reaches_the_mean_intercept_in_one_step(make_data):
    data = make_data(n=20, p=3, seed=4)
    lam = lambda_sparse_threshold(data, 1.0) * 2.0
    fit = ggd_solve(squared_loss(data.y, data.p), feature_proxes(data, 1.0), lam, max_iter=1)
    assert fit.theta0 == pytest.approx(data.y.mean(), abs=1e-12)
    assert fit.active_features == frozenset()


def test_ggd_blocks_stay_centered():
    data = binary_data(50, 3, seed=6)
    fit = logistic_flam(data, PenaltySpec(lam=0.8, alpha=0.6), GlmConfig(tol=1e-10))
    assert np.allclose(fit.thetas.sum(axis=0), 0.0, atol=1e-8)


@pytest.mark.parametrize("epsilon", [0.0, 0.3])
def test_ggd_reports_the_ridge_objective(epsilon):
    data = binary_data(40, 2, seed=8)
    fit = logistic_flam(data, PenaltySpec(lam=0.6, alpha=1.0, epsilon=epsilon), GlmConfig(tol=1e-10))
    assert abs(objective(data, fit.penalty, fit) - fit.objective) <= 1e-10 * max(1.0, fit.objective)


def test_logistic_fit_holds_tied_covariates_equal():
    gen = np.random.default_rng(12)
    x = gen.integers(0, 6, size=60).astype(float)
    y = (gen.uniform(size=60) < expit(x - 2.5)).astype(float)
    data = Dataset.from_arrays(y, x[:, None])
    fit = logistic_flam(data, PenaltySpec(lam=0.5, alpha=1.0), GlmConfig(tol=1e-10))
    for value in np.unique(x):
        assert np.ptp(fit.thetas[x == value, 0]) < 1e-12
