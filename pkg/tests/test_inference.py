import numpy as np
import pytest
from scipy.linalg import LinAlgError, cho_factor

from flam.core import build_U
from flam.errors import InvalidArgumentError, PreconditionError
from flam.models import RIDGE_RETRY, Dataset, PenaltySpec
from flam.services import inference
from flam.services.fit import flam_bcd, null_fit
from flam.services.inference import (
    FALLBACK_EPSILON,
    ActiveSetDecomposition,
    NoiseDesign,
    active_columns_full_rank,
    df_flam,
    df_flam_detail,
    df_knots,
    df_monte_carlo,
    gram_block,
    knot_count,
    s2_blocks,
)


def one_feature_data(n: int, seed: int) -> Dataset:
    gen = np.random.default_rng(seed)
    x = gen.uniform(size=n)
    y = np.where(x > 0.5, 1.0, 0.0) + 0.3 * gen.standard_normal(n)
    return Dataset.from_arrays(y, x[:, None])


def test_gram_block_closed_form():
    n = 8
    U = build_U(n)
    idx = np.array([0, 2, 5, 6])
    assert np.allclose(gram_block(idx, n), U[:, idx].T @ U[:, idx])


def test_fully_sparse_fit_has_one_df(small_data):
    assert df_flam(null_fit(small_data, PenaltySpec(lam=10.0))) == 1.0


def test_knot_identity_for_pure_fusion():
    data = one_feature_data(30, seed=4)
    penalty = PenaltySpec(lam=0.5, alpha=1.0, epsilon=0.0)
    fit = flam_bcd(data, penalty)
    assert knot_count(fit) > 0
    assert active_columns_full_rank(fit)
    estimate = df_flam_detail(fit, penalty)
    assert not estimate.retried
    assert abs(estimate.value - (knot_count(fit) + 1)) <= 1e-6
    assert df_knots(fit) == knot_count(fit) + 1


def test_knot_shortcut_needs_pure_fusion(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=0.5, alpha=0.5))
    with pytest.raises(PreconditionError):
        df_knots(fit)


def test_group_term_shrinks_df(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=0.5, alpha=0.6))
    size = ActiveSetDecomposition.from_fit(fit).size
    value = df_flam(fit)
    assert 1.0 - 1e-9 <= value <= size + 1 + 1e-6


def test_s2_blocks_are_psd_and_annihilate_beta(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=0.5, alpha=0.6))
    decomposition = ActiveSetDecomposition.from_fit(fit)
    assert decomposition.features
    for j, idx, block in zip(decomposition.features, decomposition.indices, s2_blocks(fit)):
        eigenvalues = np.linalg.eigvalsh(block)
        assert eigenvalues.min() >= -1e-9 * max(1.0, eigenvalues.max())
        b = fit.betas[j][idx]
        assert np.allclose(block @ b, 0.0, atol=1e-8 * max(1.0, np.abs(block).max()))


def test_decomposition_matches_fit(small_data):
    fit = flam_bcd(small_data, PenaltySpec(lam=0.5, alpha=1.0))
    decomposition = ActiveSetDecomposition.from_fit(fit)
    assert decomposition.size == knot_count(fit)
    assert decomposition.V.shape == (small_data.n, knot_count(fit))
    beta = np.concatenate([fit.betas[j][idx] for j, idx in zip(decomposition.features, decomposition.indices)])
    assert np.allclose(decomposition.V @ beta, fit.thetas.sum(axis=1), atol=1e-8)


def test_noise_design_streams_are_reproducible():
    design = NoiseDesign(mu=np.zeros(5), sigma=2.0, seed=3)
    assert np.array_equal(design.draw(4), design.draw(4))
    assert not np.array_equal(design.draw(4), design.draw(5))


def test_noise_design_needs_positive_sigma():
    with pytest.raises(InvalidArgumentError):
        NoiseDesign(mu=np.zeros(3), sigma=0.0, seed=0)


def test_monte_carlo_is_thread_independent():
    design = NoiseDesign(mu=np.linspace(0, 1, 10), sigma=1.0, seed=8)
    serial = df_monte_carlo(design, lambda y: y, n_reps=20)
    threaded = df_monte_carlo(design, lambda y: y, n_reps=20, threads=4)
    assert np.array_equal(serial.samples, threaded.samples)
    assert serial.mean == threaded.mean


def test_monte_carlo_identity_fit_has_n_df():
    design = NoiseDesign(mu=np.zeros(10), sigma=1.0, seed=1)
    estimate = df_monte_carlo(design, lambda y: y, n_reps=400)
    assert abs(estimate.mean - 10.0) <= 4 * estimate.standard_error


def test_monte_carlo_needs_two_replicates():
    design = NoiseDesign(mu=np.zeros(3), sigma=1.0, seed=0)
    with pytest.raises(InvalidArgumentError):
        df_monte_carlo(design, lambda y: y, n_reps=1)


def test_monte_carlo_constant_fit_has_one_df():
    design = NoiseDesign(mu=np.zeros(10), sigma=1.0, seed=2)
    estimate = df_monte_carlo(design, lambda y: np.full_like(y, y.mean()), n_reps=400)
    assert abs(estimate.mean - 1.0) <= 4 * estimate.standard_error


def test_singular_system_is_retried_and_flagged(monkeypatch):
    data = one_feature_data(30, seed=4)
    penalty = PenaltySpec(lam=0.5, alpha=1.0, epsilon=0.0)
    fit = flam_bcd(data, penalty)
    calls = []

    def failing_once(matrix, *args, **kwargs):
        calls.append(matrix)
        if len(calls) == 1:
            raise LinAlgError("singular")
        return cho_factor(matrix, *args, **kwargs)

    monkeypatch.setattr(inference, "cho_factor", failing_once)
    estimate = df_flam_detail(fit, penalty)
    assert estimate.retried
    assert estimate.ridge == FALLBACK_EPSILON
    assert estimate.flags == {RIDGE_RETRY}
    assert RIDGE_RETRY in estimate.flag(fit).flags
    assert abs(estimate.value - (knot_count(fit) + 1)) <= 1e-4


def test_flag_leaves_a_clean_estimate_alone():
    data = one_feature_data(30, seed=4)
    fit = flam_bcd(data, PenaltySpec(lam=0.5, alpha=1.0, epsilon=0.0))
    estimate = df_flam_detail(fit)
    assert not estimate.retried
    assert estimate.flag(fit) is fit
