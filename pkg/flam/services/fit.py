"""Block coordinate descent for the fused lasso additive model and lambda paths.

Each block update (for feature j):
    1. r = y - θ₀ - Σ_{k≠j} θ_k                     (partial residual)
    2. θ̂_j = fused lasso of r in x_j order, weight αλ
    3. θ₀ += mean(θ̂_j); θ̂_j -= mean(θ̂_j)            (centering)
    4. θ_j = soft_scale(θ̂_j, (1-α)λ)
A running residual y - θ₀ - Σθ_j keeps every update O(n).
"""

import logging
import math
from typing import Callable, List, Optional, Sequence

import numpy as np

from flam.core import ZERO_TOL
from flam.errors import InvalidArgumentError, NumericFailureError, PreconditionError
from flam.models import (
    NOT_CONVERGED,
    RANK_DEFICIENT,
    Dataset,
    FitConfig,
    FitPath,
    FlamFit,
    LossKind,
    PenaltySpec,
)
from flam.services.prox import block_prox

logger = logging.getLogger(__name__)

# Called after every block update with (sweep, feature, objective).
BlockCallback = Callable[[int, int, float], None]


def loss_value(y: np.ndarray, eta: np.ndarray, kind: LossKind = "squared") -> float:
    """½||y - η||² for squared loss, Σ log(1 + e^η) - yη for logistic loss."""
    if kind == "squared":
        r = y - eta
        return 0.5 * float(r @ r)
    if kind == "logistic":
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    raise InvalidArgumentError(f"unknown loss kind {kind!r}")


def block_penalty(theta_j: np.ndarray, ordering: np.ndarray, penalty: PenaltySpec) -> float:
    """αλ||D P_j θ_j||₁ + (1-α)λ||θ_j||₂ (+ ε/2 ||D P_j θ_j||² when ε > 0)."""
    diffs = np.diff(theta_j[ordering])
    value = penalty.fuse_weight * float(np.abs(diffs).sum())
    value += penalty.group_weight * float(np.linalg.norm(theta_j))
    if penalty.epsilon > 0:
        value += 0.5 * penalty.epsilon * float(diffs @ diffs)
    return value


def penalty_value(thetas: np.ndarray, orderings: np.ndarray, penalty: PenaltySpec) -> float:
    return sum(block_penalty(thetas[:, j], orderings[j], penalty) for j in range(thetas.shape[1]))


def evaluate(
    data: Dataset,
    theta0: float,
    thetas: np.ndarray,
    penalty: PenaltySpec,
    kind: LossKind = "squared",
) -> float:
    """Objective at raw parameters (θ₀, (n, p) thetas)."""
    eta = theta0 + thetas.sum(axis=1)
    return loss_value(data.y, eta, kind) + penalty_value(thetas, data.orderings, penalty)


def objective(data: Dataset, penalty: PenaltySpec, fit: FlamFit) -> float:
    """FLAM objective of ``fit`` on ``data`` under ``penalty`` and the fit's loss."""
    if fit.thetas.shape != (data.n, data.p):
        raise InvalidArgumentError(
            f"fit has shape {fit.thetas.shape} but data is {(data.n, data.p)}"
        )
    return evaluate(data, fit.theta0, fit.thetas, penalty, fit.loss)


def rss(data: Dataset, fit: FlamFit) -> float:
    """Residual sum of squares of the fitted values."""
    r = data.y - fit.fitted_values
    return float(r @ r)


def null_fit(data: Dataset, penalty: PenaltySpec) -> FlamFit:
    """Intercept-only fit θ₀ = ȳ, all blocks zero."""
    theta0 = float(data.y.mean())
    y_c = data.y - theta0
    obj = 0.5 * float(y_c @ y_c)
    return FlamFit.build(
        theta0=theta0,
        thetas=np.zeros((data.n, data.p)),
        orderings=data.orderings,
        penalty=penalty,
        objective=obj,
        iterations=0,
        objective_trace=(obj,),
    )


def flam_bcd(
    data: Dataset,
    penalty: PenaltySpec,
    config: Optional[FitConfig] = None,
    warm_start: Optional[FlamFit] = None,
    block_callback: Optional[BlockCallback] = None,
) -> FlamFit:
    """Fit FLAM at one penalty by block coordinate descent.

    Args:
        data: Training data.
        penalty: λ and α; ε does not enter the fit but is included in the
            reported ``objective``, which equals ``objective(data, penalty, fit)``.
        config: Stopping rule and active-set schedule.
        warm_start: Fit to start from (same n and p).
        block_callback: Optional hook called after every block update.

    Returns:
        The fit, flagged ``not_converged`` if ``max_sweeps`` was reached.
    """
    config = config or FitConfig()
    n, p = data.n, data.p
    fuse, group = penalty.fuse_weight, penalty.group_weight
    fitting = penalty.without_ridge()

    if warm_start is not None:
        if warm_start.thetas.shape != (n, p):
            raise InvalidArgumentError(
                f"warm start has shape {warm_start.thetas.shape}, expected {(n, p)}"
            )
        thetas = np.array(warm_start.thetas, dtype=float, copy=True)
        theta0 = float(warm_start.theta0)
    else:
        thetas = np.zeros((n, p))
        theta0 = 0.0

    resid = data.y - theta0 - thetas.sum(axis=1)
    pens = np.array([block_penalty(thetas[:, j], data.orderings[j], fitting) for j in range(p)])
    obj = 0.5 * float(resid @ resid) + float(pens.sum())
    trace: List[float] = [obj]
    active = {j for j in range(p) if np.any(thetas[:, j] != 0)}

    converged = False
    full_pass = True
    active_sweeps = 0
    sweeps = 0
    while sweeps < config.max_sweeps:
        if full_pass or not config.use_active_sets:
            features: Sequence[int] = range(p)
        else:
            features = sorted(active)
            if not features:
                full_pass = True
                continue
        before = set(active)

        for j in features:
            partial = resid + thetas[:, j]
            theta_j, mean = block_prox(partial, data.orderings[j], fuse, group, data.tie_group(j))
            theta0 += mean
            thetas[:, j] = theta_j
            resid = partial - mean - theta_j
            pens[j] = block_penalty(theta_j, data.orderings[j], fitting)
            if np.any(theta_j != 0):
                active.add(j)
            else:
                active.discard(j)
            if block_callback is not None:
                block_callback(sweeps, j, 0.5 * float(resid @ resid) + float(pens.sum()))
        sweeps += 1

        new_obj = 0.5 * float(resid @ resid) + float(pens.sum())
        if not math.isfinite(new_obj):
            raise NumericFailureError(f"[flam_bcd] objective became non-finite at sweep {sweeps}")
        decrease = (obj - new_obj) / max(1.0, obj)
        obj = new_obj
        trace.append(obj)
        logger.debug(f"[flam_bcd] sweep {sweeps}: objective {obj:.12g} ({len(active)} active)")

        if full_pass or not config.use_active_sets:
            if decrease < config.tol and active == before:
                converged = True
                break
            full_pass = False
            active_sweeps = 0
        else:
            active_sweeps += 1
            if decrease < config.tol or active_sweeps >= config.active_set_cycle:
                full_pass = True

    flags = []
    if not converged:
        flags.append(NOT_CONVERGED)
        logger.warning(
            f"[flam_bcd] not converged after {sweeps} sweeps (lambda={penalty.lam:.6g}, alpha={penalty.alpha})"
        )

    return FlamFit.build(
        theta0=theta0,
        thetas=thetas,
        orderings=data.orderings,
        penalty=penalty,
        objective=evaluate(data, theta0, thetas, penalty),
        iterations=sweeps,
        converged=converged,
        flags=flags,
        objective_trace=trace,
    )


def lambda_grid(top: float, n_lambda: int, lambda_min_ratio: float) -> np.ndarray:
    """Log-spaced grid from ``top`` down to ``top * lambda_min_ratio``."""
    if n_lambda < 2:
        raise InvalidArgumentError(f"n_lambda must be >= 2, got {n_lambda}")
    if not 0 < lambda_min_ratio < 1:
        raise InvalidArgumentError(f"lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}")
    if top <= 0:
        # Constant response: every lambda is completely sparse.
        top = 1.0
    return np.geomspace(top, top * lambda_min_ratio, n_lambda)


def check_lambdas(lambdas: Sequence[float]) -> np.ndarray:
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise InvalidArgumentError("lambda grid must be a non-empty vector")
    if np.any(lambdas <= 0) or not np.all(np.isfinite(lambdas)):
        raise InvalidArgumentError("lambda grid must be positive and finite")
    if np.any(np.diff(lambdas) >= 0):
        raise InvalidArgumentError("lambda grid must be strictly decreasing")
    return lambdas


def flam_path(
    data: Dataset,
    alpha: float,
    n_lambda: int = 50,
    lambda_min_ratio: float = 1e-3,
    config: Optional[FitConfig] = None,
    lambdas: Optional[Sequence[float]] = None,
    epsilon: float = 1e-8,
) -> FitPath:
    """Warm-started fits along a decreasing lambda grid.

    Without ``lambdas`` the grid starts at the complete-sparsity threshold,
    whose fit is the intercept-only solution.
    """
    from flam.services.modelsel import lambda_sparse_threshold

    config = config or FitConfig()
    if lambdas is None:
        top = lambda_sparse_threshold(data, alpha)
        grid = lambda_grid(top, n_lambda, lambda_min_ratio)
        start_sparse = True
    else:
        grid = check_lambdas(lambdas)
        start_sparse = False

    fits: List[FlamFit] = []
    previous: Optional[FlamFit] = None
    for k, lam in enumerate(grid):
        penalty = PenaltySpec(lam=float(lam), alpha=alpha, epsilon=epsilon)
        if k == 0 and start_sparse:
            fit = null_fit(data, penalty)
        else:
            fit = flam_bcd(data, penalty, config, warm_start=previous)
        fits.append(fit)
        previous = fit
    logger.info(
        f"[flam_path] alpha={alpha}: {len(grid)} fits, "
        f"lambda {grid[0]:.4g} .. {grid[-1]:.4g}, last fit {len(fits[-1].active_features)} active"
    )
    return FitPath(lambdas=grid, alpha=float(alpha), fits=tuple(fits))


def _block_ids(beta_j: np.ndarray, ordering: np.ndarray) -> np.ndarray:
    """Observation-order block index (0 = first block in x order) for one feature."""
    jumps = np.abs(beta_j) > ZERO_TOL
    sorted_ids = np.concatenate([[0], np.cumsum(jumps)])
    ids = np.empty(ordering.size, dtype=int)
    ids[ordering] = sorted_ids
    return ids


def debias_refit(data: Dataset, fit: FlamFit) -> FlamFit:
    """Least-squares refit of the levels with knots and active set held fixed."""
    active = sorted(fit.active_features)
    knots = fit.knots_per_feature()
    total = sum(knots[j] for j in active)
    if total + len(active) + 1 > data.n:
        raise PreconditionError(
            f"debiasing needs knots + active + 1 <= n, got {total} + {len(active)} + 1 > {data.n}"
        )

    columns = [np.ones(data.n)]
    owners: List[int] = []
    for j in active:
        ids = _block_ids(fit.betas[j], data.orderings[j])
        for block in range(1, knots[j] + 1):
            columns.append((ids == block).astype(float))
            owners.append(j)
    design = np.column_stack(columns)

    flags = set(fit.flags)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        flags.add(RANK_DEFICIENT)
        logger.warning("[debias_refit] indicator basis is rank deficient, using ridge 1e-10")
        gram = design.T @ design + 1e-10 * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ data.y)
    else:
        coef, *_ = np.linalg.lstsq(design, data.y, rcond=None)

    theta0 = float(coef[0])
    thetas = np.zeros((data.n, data.p))
    for col, j in enumerate(owners, start=1):
        thetas[:, j] += coef[col] * design[:, col]
    means = thetas.mean(axis=0)
    thetas -= means
    theta0 += float(means.sum())

    value = evaluate(data, theta0, thetas, fit.penalty)
    return FlamFit.build(
        theta0=theta0,
        thetas=thetas,
        orderings=data.orderings,
        penalty=fit.penalty,
        objective=value,
        iterations=0,
        converged=fit.converged,
        flags=flags,
        objective_trace=(value,),
    )
