"""Sparsity thresholds, cross-validation, step functions and metrics."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold

from flam.core import ZERO_TOL
from flam.errors import InvalidArgumentError
from flam.models import AdditiveModel, Dataset, FitConfig, FlamFit, GlmConfig, LossKind, StepFunction
from flam.services.fit import flam_path, lambda_grid as make_lambda_grid
from flam.services.glm import logistic_path, predict_response

logger = logging.getLogger(__name__)


def max_partial_sum(a: np.ndarray, ties: Optional[np.ndarray] = None) -> float:
    """g(a) = max_k |a_1 + ... + a_k| over k = 1..n-1.

    With ``ties`` only partial sums that end between two distinct covariate
    values count, since tied positions cannot be split.
    """
    if a.size < 2:
        return 0.0
    sums = np.cumsum(a)[:-1]
    if ties is not None:
        sums = sums[np.diff(ties) > 0]
    return float(np.max(np.abs(sums))) if sums.size else 0.0


def lambda_sparse_threshold(data: Dataset, alpha: float) -> float:
    """Smallest λ guaranteed to give an intercept-only fit.

    min(||Vᵀỹ||∞/α, ||ỹ||₂/(1-α)) with 1/0 = ∞; ||Vᵀỹ||∞ is the largest
    partial sum of the centered response in any feature's order. For α in
    {0, 1} the threshold is exact: any smaller λ leaves a nonzero block.
    """
    if not 0 <= alpha <= 1:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    y_c = data.y - data.y.mean()
    g_max = max(max_partial_sum(y_c[data.orderings[j]], data.tie_group(j)) for j in range(data.p))
    norm = float(np.linalg.norm(y_c))
    fuse_bound = g_max / alpha if alpha > 0 else np.inf
    group_bound = norm / (1.0 - alpha) if alpha < 1 else np.inf
    return float(min(fuse_bound, group_bound))


def mse(y: np.ndarray, y_hat: np.ndarray) -> float:
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    return float(np.mean((y - y_hat) ** 2))


def mean_deviance(y: np.ndarray, prob: np.ndarray) -> float:
    """Mean binomial deviance -2[y log p + (1-y) log(1-p)]."""
    y, prob = np.asarray(y, dtype=float), np.asarray(prob, dtype=float)
    if y.shape != prob.shape:
        raise InvalidArgumentError(f"length mismatch: {y.shape} vs {prob.shape}")
    prob = np.clip(prob, 1e-15, 1 - 1e-15)
    return float(np.mean(-2.0 * (y * np.log(prob) + (1 - y) * np.log1p(-prob))))


def misclassification_rate(y: np.ndarray, prob: np.ndarray) -> float:
    y, prob = np.asarray(y, dtype=float), np.asarray(prob, dtype=float)
    if y.shape != prob.shape:
        raise InvalidArgumentError(f"length mismatch: {y.shape} vs {prob.shape}")
    return float(np.mean((prob >= 0.5) != (y == 1)))


def parameter_fit(true_thetas: np.ndarray, fit: FlamFit) -> float:
    """Σ_j ||θ_j - θ̂_j||² at the training points."""
    return float(np.sum((np.asarray(true_thetas, dtype=float) - fit.thetas) ** 2))


def proportion_nonzero(fit: FlamFit) -> float:
    return len(fit.active_features) / fit.p


def _step_function(x: np.ndarray, theta: np.ndarray, ordering: np.ndarray) -> StepFunction:
    xs, ts = x[ordering], theta[ordering]
    distinct, inverse, counts = np.unique(xs, return_inverse=True, return_counts=True)
    levels = np.bincount(inverse, weights=ts) / counts
    changes = np.flatnonzero(np.abs(np.diff(levels)) > ZERO_TOL)
    knots = (distinct[changes] + distinct[changes + 1]) / 2.0
    kept = np.concatenate([[levels[0]], levels[changes + 1]])
    return StepFunction(
        knots=knots, levels=kept, domain_lo=float(distinct[0]), domain_hi=float(distinct[-1])
    )


def step_functions(fit: FlamFit, data: Dataset) -> Tuple[StepFunction, ...]:
    """Knots-plus-levels form of every fitted block.

    Knots sit at midpoints of adjacent distinct covariate values where the
    level changes; tied covariate values take their group's mean level.
    """
    if fit.thetas.shape != (data.n, data.p):
        raise InvalidArgumentError("fit and data dimensions differ")
    return tuple(
        _step_function(data.X[:, j], fit.thetas[:, j], data.orderings[j]) for j in range(data.p)
    )


def additive_model(fit: FlamFit, data: Dataset) -> AdditiveModel:
    """Prediction-time form of ``fit``."""
    return AdditiveModel(
        intercept=fit.theta0,
        step_functions=step_functions(fit, data),
        feature_names=data.feature_names,
        loss=fit.loss,
        penalty=fit.penalty,
        metadata={
            "objective": fit.objective,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "flags": sorted(fit.flags),
        },
    )


@dataclass(frozen=True, eq=False)
class CvResult:
    """Per-λ validation loss across folds and the selected λ."""

    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    chosen_index: int
    fold_losses: np.ndarray
    misclassification: Optional[np.ndarray] = None

    @property
    def chosen_lambda(self) -> float:
        return float(self.lambdas[self.chosen_index])

    def rows(self) -> List[dict]:
        out = []
        for k, lam in enumerate(self.lambdas):
            row = {
                "lambda": float(lam),
                "mean_loss": float(self.mean_loss[k]),
                "se_loss": float(self.se_loss[k]),
                "chosen": k == self.chosen_index,
            }
            if self.misclassification is not None:
                row["misclassification"] = float(self.misclassification[k])
            out.append(row)
        return out


def cross_validate(
    data: Dataset,
    alpha: float,
    k_folds: int = 10,
    lambda_grid: Optional[Sequence[float]] = None,
    loss_kind: LossKind = "squared",
    seed: int = 0,
    n_lambda: int = 50,
    lambda_min_ratio: float = 1e-3,
    config: Optional[FitConfig] = None,
    glm_config: Optional[GlmConfig] = None,
    threads: int = 1,
) -> CvResult:
    """K-fold cross-validation of the λ path.

    Fold assignment is a shuffled KFold seeded by ``seed``. Each fold fits
    the whole grid with warm starts on its training rows and scores the
    held-out rows by MSE (squared) or mean deviance (logistic). The chosen λ
    minimizes the mean loss, ties going to the larger λ.
    """
    if k_folds < 2:
        raise InvalidArgumentError(f"k_folds must be >= 2, got {k_folds}")
    if data.n < k_folds:
        raise InvalidArgumentError(f"n={data.n} is smaller than k_folds={k_folds}")
    if lambda_grid is None:
        grid = make_lambda_grid(lambda_sparse_threshold(data, alpha), n_lambda, lambda_min_ratio)
    else:
        grid = np.asarray(lambda_grid, dtype=float)

    folds = list(KFold(n_splits=k_folds, shuffle=True, random_state=seed).split(np.arange(data.n)))
    for train, _ in folds:
        if train.size < 2:
            raise InvalidArgumentError("every fold needs at least 2 training observations")

    def score(fold: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        train_idx, test_idx = fold
        train = data.subset(train_idx)
        X_test, y_test = data.X[test_idx], data.y[test_idx]
        if loss_kind == "squared":
            path = flam_path(train, alpha, config=config, lambdas=grid)
        else:
            path = logistic_path(train, alpha, config=glm_config, lambdas=grid)
        losses = np.empty(len(grid))
        errors = np.empty(len(grid))
        for k, fit in enumerate(path.fits):
            pred = predict_response(additive_model(fit, train), X_test)
            if loss_kind == "squared":
                losses[k] = mse(y_test, pred)
                errors[k] = np.nan
            else:
                losses[k] = mean_deviance(y_test, pred)
                errors[k] = misclassification_rate(y_test, pred)
        return losses, errors

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(score, folds))
    else:
        results = [score(fold) for fold in folds]

    fold_losses = np.vstack([r[0] for r in results])
    mean_loss = fold_losses.mean(axis=0)
    se_loss = fold_losses.std(axis=0, ddof=1) / np.sqrt(k_folds)
    chosen = int(np.argmin(mean_loss))
    misclassification = None
    if loss_kind == "logistic":
        misclassification = np.vstack([r[1] for r in results]).mean(axis=0)
    logger.info(f"[cross_validate] {k_folds} folds, chose lambda={grid[chosen]:.6g} (index {chosen})")
    return CvResult(
        lambdas=grid,
        mean_loss=mean_loss,
        se_loss=se_loss,
        chosen_index=chosen,
        fold_losses=fold_losses,
        misclassification=misclassification,
    )
