"""Domain types for FLAM: data, penalties, configs, fits, paths and step functions."""

from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from flam.core import ZERO_TOL, apply_D, order_feature, tie_groups
from flam.errors import InvalidArgumentError

LossKind = Literal["squared", "logistic"]

# Flags attached to fits for non-fatal outcomes.
NOT_CONVERGED = "not_converged"
RANK_DEFICIENT = "rank_deficient"
EXPIT_CAPPED = "expit_capped"
RIDGE_RETRY = "ridge_retry"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class ValidatedModel(BaseModel):
    """Immutable pydantic model whose validation failures are InvalidArgumentError."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            details = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
            )
            raise InvalidArgumentError(f"{type(self).__name__}: {details}") from exc


class PenaltySpec(ValidatedModel):
    """lambda, alpha and the ridge stabilizer epsilon of the FLAM penalty."""

    lam: float = Field(ge=0, alias="lambda", allow_inf_nan=False)
    alpha: float = Field(default=1.0, ge=0, le=1)
    epsilon: float = Field(default=1e-8, ge=0, allow_inf_nan=False)

    @property
    def fuse_weight(self) -> float:
        """alpha * lambda, the weight on ||D P_j theta_j||_1."""
        return self.alpha * self.lam

    @property
    def group_weight(self) -> float:
        """(1 - alpha) * lambda, the weight on ||theta_j||_2."""
        return (1.0 - self.alpha) * self.lam

    def without_ridge(self) -> "PenaltySpec":
        """The same penalty with epsilon = 0 (the fitting objective)."""
        return PenaltySpec(lam=self.lam, alpha=self.alpha, epsilon=0.0)

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(lam=lam, alpha=self.alpha, epsilon=self.epsilon)


class FitConfig(ValidatedModel):
    """Stopping rule and active-set schedule for block coordinate descent."""

    tol: float = Field(default=1e-8, gt=0)
    max_sweeps: int = Field(default=1000, ge=1)
    use_active_sets: bool = True
    active_set_cycle: int = Field(default=10, ge=1)

    @classmethod
    def from_settings(cls, settings) -> "FitConfig":
        return cls(
            tol=settings.tol,
            max_sweeps=settings.max_sweeps,
            active_set_cycle=settings.active_set_cycle,
        )


class GlmConfig(ValidatedModel):
    """Stopping rule for generalized gradient descent."""

    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=5000, ge=1)
    threads: int = Field(default=1, ge=1)

    @classmethod
    def from_settings(cls, settings) -> "GlmConfig":
        return cls(tol=settings.glm_tol, max_iter=settings.glm_max_iter)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response, covariates and the per-feature sorting permutations.

    ``orderings[j]`` sorts column j ascending (stable), see ``order_feature``.
    ``ties[j]`` is the tie-group index of each sorted position of column j, or
    None when the column has no repeated values; fits hold tied observations
    at one common level.
    """

    y: np.ndarray
    X: np.ndarray
    orderings: np.ndarray
    feature_names: Tuple[str, ...]
    ties: Tuple[Optional[np.ndarray], ...] = ()

    @classmethod
    def from_arrays(
        cls,
        y: np.ndarray,
        X: np.ndarray,
        feature_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2:
            raise InvalidArgumentError("y must be a vector and X a matrix")
        n, p = X.shape
        if y.size != n:
            raise InvalidArgumentError(f"y has length {y.size} but X has {n} rows")
        if n < 2 or p < 1:
            raise InvalidArgumentError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InvalidArgumentError("y and X must be finite")
        if feature_names is None:
            feature_names = [f"x{j + 1}" for j in range(p)]
        feature_names = tuple(str(name) for name in feature_names)
        if len(feature_names) != p:
            raise InvalidArgumentError(
                f"{len(feature_names)} feature names given for {p} features"
            )
        orderings = np.vstack([order_feature(X[:, j]) for j in range(p)])
        orderings.setflags(write=False)
        ties = tuple(tie_groups(X[:, j], orderings[j]) for j in range(p))
        return cls(y=_frozen(y), X=_frozen(X), orderings=orderings, feature_names=feature_names, ties=ties)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def tie_group(self, j: int) -> Optional[np.ndarray]:
        return self.ties[j] if self.ties else None

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Rows ``rows`` as a new Dataset with recomputed orderings."""
        rows = np.asarray(rows, dtype=int)
        return Dataset.from_arrays(self.y[rows], self.X[rows], self.feature_names)

    def with_response(self, y: np.ndarray) -> "Dataset":
        """Same covariates and orderings with a new response vector."""
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape or not np.all(np.isfinite(y)):
            raise InvalidArgumentError("replacement response must be finite with length n")
        return Dataset(
            y=_frozen(y), X=self.X, orderings=self.orderings, feature_names=self.feature_names, ties=self.ties
        )


@dataclass(frozen=True, eq=False)
class FlamFit:
    """A FLAM solution at one penalty.

    ``thetas`` is (n, p) in observation order, ``betas`` is (p, n-1) with
    ``betas[j] = D P_j thetas[:, j]``.
    """

    theta0: float
    thetas: np.ndarray
    betas: np.ndarray
    orderings: np.ndarray
    penalty: PenaltySpec
    objective: float
    iterations: int
    converged: bool = True
    loss: LossKind = "squared"
    flags: FrozenSet[str] = frozenset()
    objective_trace: Tuple[float, ...] = ()

    @classmethod
    def build(
        cls,
        theta0: float,
        thetas: np.ndarray,
        orderings: np.ndarray,
        penalty: PenaltySpec,
        objective: float,
        iterations: int,
        converged: bool = True,
        loss: LossKind = "squared",
        flags: Sequence[str] = (),
        objective_trace: Sequence[float] = (),
    ) -> "FlamFit":
        thetas = np.array(thetas, dtype=float, copy=True)
        if thetas.ndim != 2 or thetas.shape[1] != orderings.shape[0]:
            raise InvalidArgumentError("thetas must be (n, p) matching the orderings")
        betas = np.vstack([apply_D(thetas[orderings[j], j]) for j in range(thetas.shape[1])])
        return cls(
            theta0=float(theta0),
            thetas=_frozen(thetas),
            betas=_frozen(betas),
            orderings=orderings,
            penalty=penalty,
            objective=float(objective),
            iterations=int(iterations),
            converged=bool(converged),
            loss=loss,
            flags=frozenset(flags),
            objective_trace=tuple(float(v) for v in objective_trace),
        )

    @property
    def n(self) -> int:
        return self.thetas.shape[0]

    @property
    def p(self) -> int:
        return self.thetas.shape[1]

    @property
    def active_features(self) -> FrozenSet[int]:
        """Features whose block is not identically zero."""
        nonzero = np.max(np.abs(self.thetas), axis=0) > ZERO_TOL
        return frozenset(int(j) for j in np.flatnonzero(nonzero))

    @property
    def fitted_values(self) -> np.ndarray:
        """Linear predictor theta0 + sum_j theta_j."""
        return self.theta0 + self.thetas.sum(axis=1)

    def knots_per_feature(self) -> List[int]:
        return [int(np.count_nonzero(np.abs(b) > ZERO_TOL)) for b in self.betas]

    def to_dict(self) -> Dict[str, Any]:
        """Summary for logs and reports."""
        return {
            "lambda": self.penalty.lam,
            "alpha": self.penalty.alpha,
            "loss": self.loss,
            "theta0": self.theta0,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "active_features": sorted(self.active_features),
            "knots": self.knots_per_feature(),
            "flags": sorted(self.flags),
        }


@dataclass(frozen=True, eq=False)
class FitPath:
    """Fits along a strictly decreasing lambda grid, warm-started in order."""

    lambdas: np.ndarray
    alpha: float
    fits: Tuple[FlamFit, ...]

    def __post_init__(self):
        if len(self.fits) != len(self.lambdas):
            raise InvalidArgumentError("one fit per lambda is required")

    def __len__(self) -> int:
        return len(self.fits)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant f_j: ``levels[k]`` holds on [knots[k-1], knots[k]).

    Evaluation is right-continuous at knots and constant outside
    [domain_lo, domain_hi].
    """

    knots: np.ndarray
    levels: np.ndarray
    domain_lo: float
    domain_hi: float

    def __post_init__(self):
        knots = _frozen(self.knots)
        levels = _frozen(self.levels)
        if levels.size != knots.size + 1:
            raise InvalidArgumentError(
                f"a step function with {knots.size} knots needs {knots.size + 1} levels"
            )
        if knots.size > 1 and np.any(np.diff(knots) <= 0):
            raise InvalidArgumentError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "levels", levels)

    @property
    def n_knots(self) -> int:
        return self.knots.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.levels[np.searchsorted(self.knots, x, side="right")]


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """Prediction-time model: intercept plus one StepFunction per feature."""

    intercept: float
    step_functions: Tuple[StepFunction, ...]
    feature_names: Tuple[str, ...]
    loss: LossKind = "squared"
    penalty: Optional[PenaltySpec] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.step_functions)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.p:
            raise InvalidArgumentError(
                f"model has {self.p} features but the input has shape {X.shape}"
            )
        eta = np.full(X.shape[0], self.intercept)
        for j, f in enumerate(self.step_functions):
            eta += f(X[:, j])
        return eta

    def component(self, X: np.ndarray, j: int) -> np.ndarray:
        return self.step_functions[j](np.asarray(X, dtype=float)[:, j])
