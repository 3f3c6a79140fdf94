"""Generalized FLAM by generalized gradient descent (GGD).

The parameter is stacked as Θ = [θ₀𝟙, θ₁, ..., θ_p] (n × (p+1)); the loss
depends on Θ only through η = θ₀ + Σ θ_j, so its gradient is dℓ/dη copied
into every column. Each iteration takes the proximal step of a quadratic
majorizer:

    θ_j ← soft_scale(center(fused(θ_j - (dℓ/dη)/L, αλ/L)), (1-α)λ/L)
    θ₀  ← θ₀ - mean(dℓ/dη)/L + Σ_j (mean removed from block j)

Every block input has mean -mean(dℓ/dη)/L, so the intercept moves by
-(p+1)·mean(dℓ/dη)/L = -mean(dℓ/dη)/h, where h = L/(p+1) bounds the loss
curvature per observation (1 for squared loss, 1/4 for logistic loss). The
block changes are centered and therefore orthogonal to 𝟙, which makes h the
right curvature along the intercept and L = (p+1)h a valid one for the
blocks: the step minimizes the majorizer and the objective never increases.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from flam.core import ZERO_TOL
from flam.errors import InvalidArgumentError, NumericFailureError
from flam.models import (
    EXPIT_CAPPED,
    NOT_CONVERGED,
    AdditiveModel,
    Dataset,
    FitPath,
    FlamFit,
    GlmConfig,
    LossKind,
    PenaltySpec,
)
from flam.services.fit import check_lambdas, lambda_grid, loss_value
from flam.services.prox import block_prox

logger = logging.getLogger(__name__)

# |η| beyond which expit is evaluated at the cap.
EXPIT_CAP = 30.0


@dataclass(frozen=True, eq=False)
class LossSpec:
    """A smooth loss of the stacked parameter Θ (n × (p+1))."""

    kind: LossKind
    y: np.ndarray
    p: int
    lipschitz: float

    @property
    def curvature(self) -> float:
        """Per-observation bound on d²ℓ/dη², L/(p+1)."""
        return self.lipschitz / (self.p + 1)

    def value_eta(self, eta: np.ndarray) -> float:
        return loss_value(self.y, eta, self.kind)

    def derivative(self, eta: np.ndarray) -> np.ndarray:
        """dℓ/dη."""
        if self.kind == "squared":
            return eta - self.y
        return expit(np.clip(eta, -EXPIT_CAP, EXPIT_CAP)) - self.y

    def evaluate(self, stacked: np.ndarray) -> float:
        return self.value_eta(np.asarray(stacked, dtype=float).sum(axis=1))

    def gradient(self, stacked: np.ndarray) -> np.ndarray:
        stacked = np.asarray(stacked, dtype=float)
        g = self.derivative(stacked.sum(axis=1))
        return np.repeat(g[:, None], stacked.shape[1], axis=1)


def squared_loss(y: np.ndarray, p: int) -> LossSpec:
    """½||y - η||², L = p + 1."""
    return LossSpec(kind="squared", y=np.asarray(y, dtype=float), p=p, lipschitz=float(p + 1))


def logistic_loss(y: np.ndarray, p: int) -> LossSpec:
    """Σ log(1 + e^η) - yη, L = (p + 1)/4."""
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("logistic loss needs a binary response in {0, 1}")
    return LossSpec(kind="logistic", y=y, p=p, lipschitz=(p + 1) / 4.0)


@dataclass(frozen=True, eq=False)
class FeatureProx:
    """Prox of λ[α||D P_j θ||₁ + (1-α)||θ||₂] on the mean-zero subspace."""

    ordering: np.ndarray
    alpha: float
    ties: Optional[np.ndarray] = None

    def __call__(self, v: np.ndarray, scale: float) -> Tuple[np.ndarray, float]:
        """(centered block, mean removed from the fused input)."""
        return block_prox(v, self.ordering, self.alpha * scale, (1.0 - self.alpha) * scale, self.ties)

    def value(self, theta: np.ndarray) -> float:
        diffs = np.diff(theta[self.ordering])
        return self.alpha * float(np.abs(diffs).sum()) + (1.0 - self.alpha) * float(
            np.linalg.norm(theta)
        )


def _penalty_total(penalties: Sequence[FeatureProx], thetas: np.ndarray, lam: float) -> float:
    return lam * sum(pen.value(thetas[:, j]) for j, pen in enumerate(penalties))


def ggd_solve(
    loss: LossSpec,
    penalties: Sequence[FeatureProx],
    lam: float,
    init: Optional[Tuple[float, np.ndarray]] = None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    threads: int = 1,
    epsilon: float = 1e-8,
) -> FlamFit:
    """Minimize ℓ(Θ) + λ Σ Q_j(θ_j) by generalized gradient descent.

    Args:
        loss: Loss with its Lipschitz constant.
        penalties: One FeatureProx per feature.
        lam: Penalty level.
        init: Optional (θ₀, (n, p) thetas) start; zeros otherwise.
        tol: Relative objective decrease that ends the iteration.
        max_iter: Iteration limit.
        threads: Workers for the per-feature prox steps.
        epsilon: Ridge stabilizer recorded on the returned penalty.

    Returns:
        FlamFit with ``loss`` set to the loss kind.
    """
    n, p = loss.y.size, len(penalties)
    if p != loss.p:
        raise InvalidArgumentError(f"{p} penalties for a loss over {loss.p} features")
    if lam < 0 or not math.isfinite(lam):
        raise InvalidArgumentError(f"lambda must be finite and >= 0, got {lam}")
    alpha = penalties[0].alpha if penalties else 1.0
    L = loss.lipschitz

    if init is None:
        theta0, thetas = 0.0, np.zeros((n, p))
    else:
        theta0, thetas = float(init[0]), np.array(init[1], dtype=float, copy=True)
        if thetas.shape != (n, p):
            raise InvalidArgumentError(f"init thetas have shape {thetas.shape}, expected {(n, p)}")

    eta = theta0 + thetas.sum(axis=1)
    smooth = loss.value_eta(eta)
    value = smooth + _penalty_total(penalties, thetas, lam)
    trace: List[float] = [value]
    flags = set()
    converged = False
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    it = 0
    try:
        for it in range(1, max_iter + 1):
            if loss.kind == "logistic" and np.max(np.abs(eta)) >= EXPIT_CAP:
                flags.add(EXPIT_CAPPED)
            g = loss.derivative(eta)
            gradient_step = -float(g.mean()) / L

            def step(j: int) -> Tuple[np.ndarray, float]:
                return penalties[j](thetas[:, j] - g / L, lam / L)

            if pool is not None:
                results = list(pool.map(step, range(p)))
            else:
                results = [step(j) for j in range(p)]
            new_thetas = np.column_stack([r[0] for r in results]) if results else np.zeros((n, 0))
            # Each block's removed mean is absorbed into the intercept.
            new_theta0 = theta0 + gradient_step + sum(r[1] for r in results)

            new_eta = new_theta0 + new_thetas.sum(axis=1)
            new_smooth = loss.value_eta(new_eta)
            d0 = new_theta0 - theta0
            dth = new_thetas - thetas
            bound = (
                smooth
                + float(g @ (new_eta - eta))
                + 0.5 * (loss.curvature * n * d0 * d0 + L * float(np.sum(dth * dth)))
            )
            slack = 1e-10 * max(1.0, abs(smooth))
            if new_smooth > bound + slack:
                raise NumericFailureError(
                    f"[ggd_solve] majorization violated at iteration {it}: {new_smooth:.12g} > {bound:.12g}"
                )

            new_value = new_smooth + _penalty_total(penalties, new_thetas, lam)
            if not math.isfinite(new_value):
                raise NumericFailureError(f"[ggd_solve] objective became non-finite at iteration {it}")
            if new_value > value + 1e-10 * max(1.0, abs(value)):
                raise NumericFailureError(
                    f"[ggd_solve] objective increased at iteration {it}: {value:.12g} -> {new_value:.12g}"
                )

            decrease = (value - new_value) / max(1.0, abs(value))
            theta0, thetas, eta, smooth, value = new_theta0, new_thetas, new_eta, new_smooth, new_value
            trace.append(value)
            if decrease < tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if not converged:
        flags.add(NOT_CONVERGED)
        logger.warning(f"[ggd_solve] stopped at max_iter={max_iter} (lambda={lam:.6g})")
    if EXPIT_CAPPED in flags:
        logger.warning("[ggd_solve] linear predictor reached the expit cap")
    thetas[:, np.max(np.abs(thetas), axis=0) <= ZERO_TOL] = 0.0

    orderings = np.vstack([pen.ordering for pen in penalties])
    # Reported objective: final parameters, ε/2·||D P_j θ_j||² included.
    ridge = sum(float(np.sum(np.diff(thetas[pen.ordering, j]) ** 2)) for j, pen in enumerate(penalties))
    reported = loss.value_eta(theta0 + thetas.sum(axis=1)) + _penalty_total(penalties, thetas, lam)
    reported += 0.5 * epsilon * ridge
    return FlamFit.build(
        theta0=theta0,
        thetas=thetas,
        orderings=orderings,
        penalty=PenaltySpec(lam=lam, alpha=alpha, epsilon=epsilon),
        objective=reported,
        iterations=it,
        converged=converged,
        loss=loss.kind,
        flags=flags,
        objective_trace=trace,
    )


def feature_proxes(data: Dataset, alpha: float) -> List[FeatureProx]:
    return [
        FeatureProx(ordering=data.orderings[j], alpha=alpha, ties=data.tie_group(j)) for j in range(data.p)
    ]


def logistic_flam(
    data: Dataset,
    penalty: PenaltySpec,
    config: Optional[GlmConfig] = None,
    warm_start: Optional[FlamFit] = None,
) -> FlamFit:
    """Logistic FLAM at one penalty; y must be binary."""
    config = config or GlmConfig()
    loss = logistic_loss(data.y, data.p)
    init = None if warm_start is None else (warm_start.theta0, warm_start.thetas)
    return ggd_solve(
        loss,
        feature_proxes(data, penalty.alpha),
        penalty.lam,
        init=init,
        tol=config.tol,
        max_iter=config.max_iter,
        threads=config.threads,
        epsilon=penalty.epsilon,
    )


def logistic_path(
    data: Dataset,
    alpha: float,
    n_lambda: int = 50,
    lambda_min_ratio: float = 1e-3,
    config: Optional[GlmConfig] = None,
    lambdas: Optional[Sequence[float]] = None,
    epsilon: float = 1e-8,
) -> FitPath:
    """Warm-started logistic fits along a decreasing lambda grid.

    The default grid tops out at the squared-loss sparsity threshold: at the
    intercept-only optimum the loss gradient is ȳ - y, so the conditions for
    all-zero blocks are the same.
    """
    from flam.services.modelsel import lambda_sparse_threshold

    logistic_loss(data.y, data.p)
    if lambdas is None:
        grid = lambda_grid(lambda_sparse_threshold(data, alpha), n_lambda, lambda_min_ratio)
    else:
        grid = check_lambdas(lambdas)
    fits: List[FlamFit] = []
    previous: Optional[FlamFit] = None
    for lam in grid:
        fit = logistic_flam(data, PenaltySpec(lam=float(lam), alpha=alpha, epsilon=epsilon), config, previous)
        fits.append(fit)
        previous = fit
    logger.info(f"[logistic_path] alpha={alpha}: {len(grid)} fits, last fit {len(fits[-1].active_features)} active")
    return FitPath(lambdas=grid, alpha=float(alpha), fits=tuple(fits))


def predict_response(
    model: AdditiveModel, X_new: np.ndarray, loss_kind: Optional[LossKind] = None
) -> np.ndarray:
    """Mean response: η for squared loss, expit(η) for logistic loss."""
    kind = loss_kind or model.loss
    eta = model.linear_predictor(X_new)
    if kind == "squared":
        return eta
    if kind == "logistic":
        return expit(eta)
    raise InvalidArgumentError(f"unknown loss kind {kind!r}")
