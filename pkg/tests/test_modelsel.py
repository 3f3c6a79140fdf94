import numpy as np
import pytest

from flam.errors import InvalidArgumentError
from flam.models import Dataset, FlamFit, PenaltySpec, StepFunction
from flam.services.fit import flam_bcd
from flam.services.modelsel import (
    additive_model,
    cross_validate,
    lambda_sparse_threshold,
    max_partial_sum,
    mean_deviance,
    misclassification_rate,
    mse,
    parameter_fit,
    proportion_nonzero,
    step_functions,
)


def three_points() -> Dataset:
    return Dataset.from_arrays(np.array([1.0, 2.0, 3.0]), np.array([[0.0], [1.0], [2.0]]))


def test_threshold_closed_forms():
    data = three_points()
    assert np.isclose(lambda_sparse_threshold(data, 0.0), np.sqrt(2.0))
    assert np.isclose(lambda_sparse_threshold(data, 1.0), 1.0)
    assert np.isclose(lambda_sparse_threshold(data, 0.5), 2.0)


def test_threshold_rejects_bad_alpha():
    with pytest.raises(InvalidArgumentError):
        lambda_sparse_threshold(three_points(), 1.5)


def test_max_partial_sum():
    assert max_partial_sum(np.array([1.0, -3.0, 2.0])) == 2.0
    assert max_partial_sum(np.array([4.0])) == 0.0


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_threshold_is_sharp(make_data, alpha):
    data = make_data(n=30, p=3, seed=21)
    threshold = lambda_sparse_threshold(data, alpha)
    above = flam_bcd(data, PenaltySpec(lam=threshold * (1 + 1e-6), alpha=alpha))
    below = flam_bcd(data, PenaltySpec(lam=threshold * (1 - 1e-2), alpha=alpha))
    assert above.active_features == frozenset()
    assert len(below.active_features) >= 1


def test_step_functions_reproduce_training_fit(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=0.8, alpha=0.9))
    model = additive_model(fit, small_data)
    assert np.allclose(model.linear_predictor(small_data.X), fit.fitted_values, atol=1e-10)
    for sf, knots in zip(model.step_functions, fit.knots_per_feature()):
        assert sf.n_knots == knots


def test_tied_values_take_the_group_mean():
    data = Dataset.from_arrays(np.zeros(3), np.array([[0.0], [0.0], [1.0]]))
    fit = FlamFit.build(
        theta0=0.0,
        thetas=np.array([[1.0], [0.0], [-1.0]]),
        orderings=data.orderings,
        penalty=PenaltySpec(lam=1.0),
        objective=0.0,
        iterations=0,
    )
    (sf,) = step_functions(fit, data)
    assert np.allclose(sf.knots, [0.5])
    assert np.allclose(sf.levels, [0.5, -1.0])
    assert sf.domain_lo == 0.0 and sf.domain_hi == 1.0


def test_step_function_evaluation_is_right_continuous():
    sf = StepFunction(knots=np.array([0.5]), levels=np.array([1.0, 2.0]), domain_lo=0.0, domain_hi=1.0)
    assert sf(np.array([-100.0, 0.4, 0.5, 100.0])).tolist() == [1.0, 1.0, 2.0, 2.0]


def test_step_function_validation():
    with pytest.raises(InvalidArgumentError):
        StepFunction(knots=np.array([0.5]), levels=np.array([1.0]), domain_lo=0.0, domain_hi=1.0)
    with pytest.raises(InvalidArgumentError):
        StepFunction(knots=np.array([0.5, 0.2]), levels=np.zeros(3), domain_lo=0.0, domain_hi=1.0)


def test_metrics():
    assert mse(np.array([1.0, 3.0]), np.array([1.0, 1.0])) == 2.0
    assert np.isclose(mean_deviance(np.array([1.0, 0.0]), np.array([0.5, 0.5])), 2 * np.log(2))
    assert misclassification_rate(np.array([1.0, 0.0, 1.0]), np.array([0.9, 0.6, 0.2])) == pytest.approx(2 / 3)
    with pytest.raises(InvalidArgumentError):
        mse(np.zeros(2), np.zeros(3))


def test_parameter_fit_and_sparsity(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=1.5, alpha=1.0))
    assert parameter_fit(fit.thetas, fit) == 0.0
    assert proportion_nonzero(fit) == len(fit.active_features) / small_data.p


def test_cross_validation_is_deterministic(small_data):
    first = cross_validate(small_data, 1.0, k_folds=4, n_lambda=6, seed=3)
    second = cross_validate(small_data, 1.0, k_folds=4, n_lambda=6, seed=3)
    assert np.array_equal(first.mean_loss, second.mean_loss)
    assert first.chosen_index == second.chosen_index
    assert len(first.rows()) == 6
    assert first.chosen_index == int(np.argmin(first.mean_loss))
    assert sum(row["chosen"] for row in first.rows()) == 1


def test_cross_validation_threads_do_not_change_results(small_data):
    serial = cross_validate(small_data, 0.5, k_folds=3, lambda_grid=[2.0, 1.0, 0.5], seed=0)
    threaded = cross_validate(small_data, 0.5, k_folds=3, lambda_grid=[2.0, 1.0, 0.5], seed=0, threads=3)
    assert np.array_equal(serial.fold_losses, threaded.fold_losses)
    assert serial.chosen_lambda in (2.0, 1.0, 0.5)


def test_logistic_cross_validation_reports_misclassification():
    gen = np.random.default_rng(0)
    X = gen.uniform(-1, 1, size=(40, 2))
    y = (X[:, 0] > 0).astype(float)
    result = cross_validate(
        Dataset.from_arrays(y, X), 1.0, k_folds=4, lambda_grid=[5.0, 1.0], loss_kind="logistic", seed=1
    )
    assert result.misclassification is not None
    assert all("misclassification" in row for row in result.rows())


def test_cross_validation_argument_checks(small_data):
    with pytest.raises(InvalidArgumentError):
        cross_validate(small_data, 1.0, k_folds=1)
    with pytest.raises(InvalidArgumentError):
        cross_validate(small_data.subset(np.arange(3)), 1.0, k_folds=5)


def test_max_partial_sum_skips_splits_inside_ties():
    assert max_partial_sum(np.array([1.0, -3.0, 2.0]), np.array([0, 0, 1])) == 2.0
    assert max_partial_sum(np.array([5.0, -1.0, -4.0]), np.array([0, 0, 0])) == 0.0


def test_constant_feature_has_zero_fusion_threshold():
    data = Dataset.from_arrays(np.array([1.0, 4.0, 2.0, 0.0]), np.ones((4, 1)))
    assert lambda_sparse_threshold(data, 1.0) == 0.0


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_threshold_is_sharp_with_tied_covariates(alpha):
    gen = np.random.default_rng(8)
    x = gen.integers(0, 5, size=40).astype(float)
    data = Dataset.from_arrays(x + gen.standard_normal(40), np.column_stack([x, gen.uniform(size=40)]))
    threshold = lambda_sparse_threshold(data, alpha)
    above = flam_bcd(data, PenaltySpec(lam=threshold * (1 + 1e-6), alpha=alpha))
    below = flam_bcd(data, PenaltySpec(lam=threshold * (1 - 1e-2), alpha=alpha))
    assert above.active_features == frozenset()
    assert len(below.active_features) >= 1


def test_cross_validation_prefers_large_lambdas_on_null_data():
    chosen = []
    for seed in range(20):
        gen = np.random.default_rng(100 + seed)
        data = Dataset.from_arrays(gen.standard_normal(60), gen.uniform(size=(60, 3)))
        result = cross_validate(data, 1.0, k_folds=5, n_lambda=20, lambda_min_ratio=1e-2, seed=seed)
        chosen.append(result.chosen_index)
    assert sum(index <= 9 for index in chosen) >= 16
