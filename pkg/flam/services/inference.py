"""Degrees of freedom for FLAM fits.

``df_flam`` is the trace estimator

    df = Tr(V_A [V_AᵀV_A + (1-α)λ S₂ + εI]⁻¹ V_Aᵀ) + 1

over the active columns A = {(j, i) : β̂_ji ≠ 0}, where S₂ is block diagonal
with, for feature j and u = U_{A_j} b (b = β̂_j restricted to A_j),

    S₂_j = G/||u|| - (G b)(G b)ᵀ/||u||³,   G = U_{A_j}ᵀ U_{A_j}.

``df_monte_carlo`` is the covariance form (1/σ²) Σ (ŷ_i - μ_i)(y_i - μ_i)
averaged over simulated replicates.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import logging
from typing import Callable, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, svdvals

from flam.core import ZERO_TOL, build_V_columns
from flam.errors import InvalidArgumentError, NumericFailureError, PreconditionError
from flam.models import RIDGE_RETRY, FlamFit, PenaltySpec

logger = logging.getLogger(__name__)

# Ridge used when the unregularized system is singular.
FALLBACK_EPSILON = 1e-8
# V_A is full rank when its smallest singular value exceeds this times the largest.
RANK_RTOL = 1e-8


def knot_count(fit: FlamFit) -> int:
    """Total number of nonzero ordered differences across features."""
    return int(np.count_nonzero(np.abs(fit.betas) > ZERO_TOL))


def gram_block(idx: np.ndarray, n: int) -> np.ndarray:
    """U_Aᵀ U_A for 0-based U column indices ``idx``: min(k, l) - kl/n (1-based k, l)."""
    k = np.asarray(idx, dtype=float) + 1.0
    return np.minimum.outer(k, k) - np.outer(k, k) / n


@dataclass(frozen=True, eq=False)
class ActiveSetDecomposition:
    """Active difference indices, the dense V_A and the S₂ blocks of a fit."""

    features: Tuple[int, ...]
    indices: Tuple[np.ndarray, ...]
    V: np.ndarray
    s2: Tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return int(sum(idx.size for idx in self.indices))

    def s2_matrix(self) -> np.ndarray:
        m = self.size
        out = np.zeros((m, m))
        start = 0
        for block in self.s2:
            k = block.shape[0]
            out[start:start + k, start:start + k] = block
            start += k
        return out

    @classmethod
    def from_fit(cls, fit: FlamFit) -> "ActiveSetDecomposition":
        n = fit.n
        features: List[int] = []
        indices: List[np.ndarray] = []
        blocks: List[np.ndarray] = []
        for j in range(fit.p):
            idx = np.flatnonzero(np.abs(fit.betas[j]) > ZERO_TOL)
            if idx.size == 0:
                continue
            b = fit.betas[j][idx]
            G = gram_block(idx, n)
            Gb = G @ b
            norm = float(np.sqrt(b @ Gb))
            features.append(j)
            indices.append(idx)
            blocks.append(G / norm - np.outer(Gb, Gb) / norm**3)
        V = build_V_columns(fit.orderings, list(zip(features, indices)))
        return cls(features=tuple(features), indices=tuple(indices), V=V, s2=tuple(blocks))


def s2_blocks(fit: FlamFit) -> Tuple[np.ndarray, ...]:
    return ActiveSetDecomposition.from_fit(fit).s2


@dataclass(frozen=True)
class DfEstimate:
    value: float
    ridge: float
    retried: bool

    @property
    def flags(self) -> FrozenSet[str]:
        """``ridge_retry`` when the fallback ε was needed."""
        return frozenset({RIDGE_RETRY}) if self.retried else frozenset()

    def flag(self, fit: FlamFit) -> FlamFit:
        """``fit`` with this estimate's flags added."""
        return fit if not self.retried else replace(fit, flags=fit.flags | self.flags)


def df_flam_detail(fit: FlamFit, penalty: Optional[PenaltySpec] = None) -> DfEstimate:
    """The trace estimator together with the ridge actually used."""
    penalty = penalty or fit.penalty
    if not fit.converged:
        logger.warning("[df_flam] fit is flagged not converged; the estimate may be off")
    decomposition = ActiveSetDecomposition.from_fit(fit)
    if decomposition.size == 0:
        return DfEstimate(value=1.0, ridge=penalty.epsilon, retried=False)

    V = decomposition.V
    gram = V.T @ V
    M = gram + penalty.group_weight * decomposition.s2_matrix()
    ridge = penalty.epsilon
    retried = False
    while True:
        try:
            factor = cho_factor(M + ridge * np.eye(M.shape[0]))
            break
        except LinAlgError:
            if ridge >= FALLBACK_EPSILON:
                raise NumericFailureError(
                    f"[df_flam] regularized Gram matrix is singular (|A|={decomposition.size}, epsilon={ridge})"
                )
            logger.warning(f"[df_flam] singular system with epsilon={ridge}, retrying with {FALLBACK_EPSILON}")
            ridge = FALLBACK_EPSILON
            retried = True
    value = float(np.trace(cho_solve(factor, gram))) + 1.0
    return DfEstimate(value=value, ridge=ridge, retried=retried)


def df_flam(fit: FlamFit, penalty: Optional[PenaltySpec] = None) -> float:
    """Unbiased degrees-of-freedom estimate of a FLAM fit (1 when fully sparse)."""
    return df_flam_detail(fit, penalty).value


def active_columns_full_rank(fit: FlamFit) -> bool:
    V = ActiveSetDecomposition.from_fit(fit).V
    if V.shape[1] == 0:
        return True
    if V.shape[1] > V.shape[0]:
        return False
    s = svdvals(V)
    return bool(s[-1] > RANK_RTOL * s[0])


def df_knots(fit: FlamFit) -> int:
    """Knot count + 1, the closed form for α = 1 with full-rank V_A."""
    if fit.penalty.alpha != 1.0:
        raise PreconditionError("the knot-count shortcut applies only to alpha = 1")
    if not active_columns_full_rank(fit):
        raise PreconditionError("the knot-count shortcut needs full-rank active columns")
    return knot_count(fit) + 1


@dataclass(frozen=True, eq=False)
class NoiseDesign:
    """y = mu + sigma·z with one seeded stream per replicate."""

    mu: np.ndarray
    sigma: float
    seed: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")

    def draw(self, replicate: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(replicate,)))
        return self.mu + self.sigma * rng.standard_normal(self.mu.size)

    def covariance_term(self, y: np.ndarray, y_hat: np.ndarray) -> float:
        """(1/σ²) Σ (ŷ_i - μ_i)(y_i - μ_i)."""
        return float((y_hat - self.mu) @ (y - self.mu)) / self.sigma**2


@dataclass(frozen=True, eq=False)
class MonteCarloEstimate:
    mean: float
    standard_error: float
    samples: np.ndarray


def df_monte_carlo(
    design: NoiseDesign,
    fitter: Callable[[np.ndarray], np.ndarray],
    n_reps: int,
    threads: int = 1,
) -> MonteCarloEstimate:
    """Covariance-form degrees of freedom averaged over ``n_reps`` replicates.

    Replicate r always uses stream r, so the result does not depend on
    ``threads``.
    """
    if n_reps < 2:
        raise InvalidArgumentError(f"n_reps must be >= 2, got {n_reps}")

    def one(rep: int) -> float:
        y = design.draw(rep)
        return design.covariance_term(y, np.asarray(fitter(y), dtype=float))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = np.array(list(pool.map(one, range(n_reps))))
    else:
        samples = np.array([one(rep) for rep in range(n_reps)])
    se = float(samples.std(ddof=1) / np.sqrt(n_reps))
    logger.info(f"[df_monte_carlo] {n_reps} replicates: {samples.mean():.4f} (SE {se:.4f})")
    return MonteCarloEstimate(mean=float(samples.mean()), standard_error=se, samples=samples)
