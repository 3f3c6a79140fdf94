"""Simulation scenarios: signal functions and seeded data generators.

Covariates are Uniform[-2.5, 2.5]. Every signal function is shifted and
scaled so that over [-2.5, 2.5] it integrates to 0 and its square integrates
to 1 (normalization constants come from adaptive quadrature).
``ScenarioSpec.signal_scale`` multiplies every normalized signal.

Scenarios:
    1. piecewise constant, 1 to 4 jumps
    2. smooth sinusoids
    3. two piecewise-constant and two smooth functions
    4. constant on one half of the domain, oscillating on the other
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator
from scipy.integrate import quad
from scipy.special import expit

from flam.errors import InvalidArgumentError
from flam.models import Dataset, ValidatedModel

DOMAIN = (-2.5, 2.5)


@dataclass(frozen=True, eq=False)
class SignalFunction:
    """A raw shape plus its normalization to ∫f = 0, ∫f² = 1 on the domain."""

    name: str
    raw: Callable[[np.ndarray], np.ndarray]
    breakpoints: Tuple[float, ...] = ()

    @cached_property
    def normalization(self) -> Tuple[float, float]:
        lo, hi = DOMAIN
        width = hi - lo
        points = list(self.breakpoints) or None

        def scalar(x: float) -> float:
            return float(self.raw(np.array([x]))[0])

        mean = quad(scalar, lo, hi, points=points, limit=400)[0] / width
        second = quad(lambda x: (scalar(x) - mean) ** 2, lo, hi, points=points, limit=400)[0]
        return mean, float(np.sqrt(second))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        mean, scale = self.normalization
        return (self.raw(np.asarray(x, dtype=float)) - mean) / scale


def _piecewise(breaks: Tuple[float, ...], levels: Tuple[float, ...]) -> Callable[[np.ndarray], np.ndarray]:
    breaks_arr = np.asarray(breaks)
    levels_arr = np.asarray(levels, dtype=float)

    def raw(x: np.ndarray) -> np.ndarray:
        return levels_arr[np.searchsorted(breaks_arr, x, side="right")]

    return raw


def _half_oscillating(freq: float, oscillate_right: bool) -> Callable[[np.ndarray], np.ndarray]:
    def raw(x: np.ndarray) -> np.ndarray:
        wave = np.sin(freq * np.pi * x)
        side = x >= 0 if oscillate_right else x < 0
        return np.where(side, wave, 0.0)

    return raw


STEP_SIGNALS = (
    SignalFunction("step1", _piecewise((0.0,), (0.0, 1.0)), (0.0,)),
    SignalFunction("step2", _piecewise((-1.0, 1.2), (0.0, 2.0, -1.0)), (-1.0, 1.2)),
    SignalFunction("step3", _piecewise((-1.5, 0.3, 1.6), (1.0, -1.0, 2.0, 0.0)), (-1.5, 0.3, 1.6)),
    SignalFunction(
        "step4", _piecewise((-2.0, -0.8, 0.7, 1.8), (0.0, 3.0, 1.0, -1.0, 2.0)), (-2.0, -0.8, 0.7, 1.8)
    ),
)

SMOOTH_SIGNALS = (
    SignalFunction("sin1", lambda x: np.sin(1.3 * x)),
    SignalFunction("cos1", lambda x: np.cos(1.7 * x)),
    SignalFunction("sin2", lambda x: np.sin(2.4 * x + 1.0)),
    SignalFunction("cos2", lambda x: np.cos(0.9 * x)),
)

ADAPTIVE_SIGNALS = (
    SignalFunction("wave_right", _half_oscillating(3.0, True), (0.0,)),
    SignalFunction("wave_left", _half_oscillating(4.0, False), (0.0,)),
    SignalFunction("wave_right_fast", _half_oscillating(5.0, True), (0.0,)),
    SignalFunction("wave_left_slow", _half_oscillating(2.5, False), (0.0,)),
)

SCENARIOS: Dict[int, Tuple[SignalFunction, ...]] = {
    1: STEP_SIGNALS,
    2: SMOOTH_SIGNALS,
    3: STEP_SIGNALS[:2] + SMOOTH_SIGNALS[:2],
    4: ADAPTIVE_SIGNALS,
}


class ScenarioSpec(ValidatedModel):
    """Scenario id, sizes, noise level and seed of one simulated dataset."""

    scenario: int = Field(default=1, ge=1, le=4)
    n: int = Field(default=100, ge=2)
    p_total: int = Field(default=4, ge=1)
    n_signal: int = Field(default=4, ge=0, le=4)
    noise_sd: float = Field(default=1.0, ge=0)
    signal_scale: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    seed: int = 0

    @model_validator(mode="after")
    def _signals_fit(self) -> "ScenarioSpec":
        if self.n_signal > self.p_total:
            raise ValueError(f"n_signal={self.n_signal} exceeds p_total={self.p_total}")
        return self

    def signals(self) -> Tuple[SignalFunction, ...]:
        return SCENARIOS[self.scenario][: self.n_signal]

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return self.model_copy(update={"seed": int(seed)})


@dataclass(frozen=True, eq=False)
class SimulatedData:
    """A generated dataset with its noiseless truth.

    ``true_thetas`` holds the empirically centered f_j(x_j) per feature (zero
    columns for null features); ``mu`` is the noiseless mean (or the success
    probability for logistic data).
    """

    data: Dataset
    mu: np.ndarray
    true_thetas: np.ndarray
    spec: ScenarioSpec


def derived_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def draw_design(spec: ScenarioSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Covariates and the (n, p) matrix of signal values s·f_j(x_j)."""
    lo, hi = DOMAIN
    X = rng.uniform(lo, hi, size=(spec.n, spec.p_total))
    return X, signal_matrix(spec, X)


def signal_matrix(spec: ScenarioSpec, X: np.ndarray) -> np.ndarray:
    F = np.zeros(X.shape)
    for j, f in enumerate(spec.signals()):
        F[:, j] = spec.signal_scale * f(X[:, j])
    return F


def generate(spec: ScenarioSpec, design: Optional[np.ndarray] = None) -> SimulatedData:
    """y = Σ f_j(x_j) + σε, a pure function of ``spec`` (and ``design``, if given)."""
    rng = np.random.default_rng(spec.seed)
    if design is None:
        X, F = draw_design(spec, rng)
    else:
        X = np.asarray(design, dtype=float)
        if X.shape != (spec.n, spec.p_total):
            raise InvalidArgumentError(f"design has shape {X.shape}, expected {(spec.n, spec.p_total)}")
        F = signal_matrix(spec, X)
    mu = F.sum(axis=1)
    y = mu + spec.noise_sd * rng.standard_normal(spec.n)
    return SimulatedData(
        data=Dataset.from_arrays(y, X),
        mu=mu,
        true_thetas=F - F.mean(axis=0),
        spec=spec,
    )


def generate_logistic(spec: ScenarioSpec) -> SimulatedData:
    """y ~ Bernoulli(expit(s·(f₁(x₁) + f₂(x₂)))) with two signal features."""
    if spec.n_signal != 2:
        raise InvalidArgumentError(f"logistic scenarios use 2 signal features, got {spec.n_signal}")
    rng = np.random.default_rng(spec.seed)
    X, F = draw_design(spec, rng)
    prob = expit(F.sum(axis=1))
    y = (rng.uniform(size=spec.n) < prob).astype(float)
    return SimulatedData(
        data=Dataset.from_arrays(y, X),
        mu=prob,
        true_thetas=F - F.mean(axis=0),
        spec=spec,
    )
