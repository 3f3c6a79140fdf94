"""1D fused lasso solver and reference oracles.

``fused_lasso_1d`` solves min ½Σ wᵢ(yᵢ - θᵢ)² + w||Dθ||₁ exactly in O(n) with the
dynamic-programming recursion over piecewise-quadratic messages (a forward
pass that records clipping thresholds and a backward pass that recovers θ).
The kernel is compiled with numba and releases the GIL, so block updates on
different threads run concurrently.

The oracles are deliberately independent of the DP kernel:
    - ``oracle_prox_gradient`` runs proximal gradient (optionally FISTA with
      adaptive restart) on a ``CompositeProblem``. For the denoising problems
      the composite problem is the box/ball constrained dual, so no fused
      lasso solve is involved.
    - ``oracle_grid_qp`` minimizes the objective exactly over a level grid by
      a min-convolution sweep, for tiny n.
"""

from dataclasses import dataclass
import logging
import math
from typing import Callable, Optional

import numpy as np
from numba import njit

from flam.core import apply_D, apply_Dt
from flam.errors import InvalidArgumentError, NumericFailureError

logger = logging.getLogger(__name__)

# Consecutive objective increases tolerated before the oracle declares divergence.
DIVERGENCE_WINDOW = 100


@dataclass(frozen=True, eq=False)
class FLProblem:
    """The inner problem ½Σ wᵢ(targetᵢ - θᵢ)² + fuse_weight·||Dθ||₁ (target in sorted order).

    ``weights`` defaults to all ones; tied covariate values enter as one
    position weighted by the size of the tie group.
    """

    target: np.ndarray
    fuse_weight: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        if target.ndim != 1 or target.size < 1:
            raise InvalidArgumentError("fused lasso target must be a non-empty vector")
        if not np.all(np.isfinite(target)):
            raise InvalidArgumentError("fused lasso target contains NaN or Inf")
        if not math.isfinite(self.fuse_weight) or self.fuse_weight < 0:
            raise InvalidArgumentError(f"fuse_weight must be finite and >= 0, got {self.fuse_weight}")
        object.__setattr__(self, "target", target)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float)
            if weights.shape != target.shape or not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise InvalidArgumentError("fused lasso weights must be positive, finite and match the target")
            object.__setattr__(self, "weights", weights)

    def objective(self, theta: np.ndarray) -> float:
        r = self.target - theta
        fit = 0.5 * float(r @ r) if self.weights is None else 0.5 * float(self.weights @ (r * r))
        return fit + self.fuse_weight * float(np.abs(apply_D(theta)).sum())


@njit(cache=True, nogil=True)
def _fused_lasso_dp(y, w, lam, beta):
    n = y.shape[0]
    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    # Message derivative after the first observation.
    tm[0] = -lam / w[0] + y[0]
    tp[0] = lam / w[0] + y[0]
    l = n - 1
    r = n
    x[l] = tm[0]
    x[r] = tp[0]
    a[l] = w[0]
    b[l] = -w[0] * y[0] + lam
    a[r] = -w[0]
    b[r] = w[0] * y[0] + lam
    afirst = w[1]
    bfirst = -lam - w[1] * y[1]
    alast = -w[1]
    blast = -lam + w[1] * y[1]

    for k in range(1, n - 1):
        # Lower clipping threshold.
        alo = afirst
        blo = bfirst
        lo = l
        while lo <= r:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1

        # Upper clipping threshold.
        ahi = alast
        bhi = blast
        hi = r
        while hi >= lo:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1

        tm[k] = (-lam - blo) / alo
        l = lo - 1
        x[l] = tm[k]

        tp[k] = (lam + bhi) / (-ahi)
        r = hi + 1
        x[r] = tp[k]

        a[l] = alo
        b[l] = blo + lam
        a[r] = ahi
        b[r] = bhi + lam

        afirst = w[k + 1]
        bfirst = -lam - w[k + 1] * y[k + 1]
        alast = -w[k + 1]
        blast = -lam + w[k + 1] * y[k + 1]

    # Minimizer of the final message.
    alo = afirst
    blo = bfirst
    lo = l
    while lo <= r:
        if alo * x[lo] + blo > 0.0:
            break
        alo += a[lo]
        blo += b[lo]
        lo += 1
    beta[n - 1] = -blo / alo

    for k in range(n - 2, -1, -1):
        if beta[k + 1] > tp[k]:
            beta[k] = tp[k]
        elif beta[k + 1] < tm[k]:
            beta[k] = tm[k]
        else:
            beta[k] = beta[k + 1]


def fused_lasso_1d(problem: FLProblem) -> np.ndarray:
    """Exact minimizer of ½Σ wᵢ(yᵢ - θᵢ)² + w||Dθ||₁ in O(n)."""
    y = problem.target
    lam = float(problem.fuse_weight)
    if y.size == 1 or lam == 0.0:
        return y.copy()
    weights = np.ones_like(y) if problem.weights is None else problem.weights
    out = np.empty_like(y)
    _fused_lasso_dp(np.ascontiguousarray(y), np.ascontiguousarray(weights), lam, out)
    return out


def fused_lasso(y: np.ndarray, fuse_weight: float, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Shorthand for ``fused_lasso_1d(FLProblem(y, fuse_weight, weights))``."""
    return fused_lasso_1d(FLProblem(target=y, fuse_weight=fuse_weight, weights=weights))


def _identity(x: np.ndarray) -> np.ndarray:
    return x


@dataclass(frozen=True)
class CompositeProblem:
    """min_z smooth(z) + nonsmooth(z) with an exact prox for the nonsmooth part.

    Attributes:
        smooth: Value of the differentiable part.
        gradient: Its gradient.
        lipschitz: Lipschitz constant of ``gradient``.
        prox: ``prox(v, step)`` = argmin_z ½||z - v||² + step·nonsmooth(z).
        nonsmooth: Value of the nonsmooth part (0 for an indicator at feasible z).
        recover: Maps the optimization variable to the returned vector.
        name: Label for logs.
    """

    smooth: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    prox: Callable[[np.ndarray, float], np.ndarray]
    nonsmooth: Callable[[np.ndarray], float]
    init: np.ndarray
    recover: Callable[[np.ndarray], np.ndarray] = _identity
    name: str = "composite"

    def value(self, z: np.ndarray) -> float:
        return self.smooth(z) + self.nonsmooth(z)


def denoising_dual_problem(
    y: np.ndarray, fuse_weight: float, group_weight: float = 0.0
) -> CompositeProblem:
    """Dual of min ½||y - θ||² + w₁||Dθ||₁ + w₂||θ||₂.

    The dual variable z = (u, v) lives in {||u||∞ <= w₁} × {||v||₂ <= w₂};
    the primal solution is θ = y - Dᵀu - v. ||[Dᵀ I]||² <= 4 + 1.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise InvalidArgumentError("the dual oracle needs a vector of length >= 2")
    if fuse_weight < 0 or group_weight < 0:
        raise InvalidArgumentError("penalty weights must be >= 0")
    m = y.size - 1

    def split(z):
        return z[:m], z[m:]

    def primal(z):
        u, v = split(z)
        return y - apply_Dt(u) - v

    def smooth(z):
        r = primal(z)
        return 0.5 * float(r @ r)

    def gradient(z):
        r = primal(z)
        return np.concatenate([-apply_D(r), -r])

    def prox(z, step):
        u, v = split(z)
        u = np.clip(u, -fuse_weight, fuse_weight)
        norm = float(np.linalg.norm(v))
        if norm > group_weight:
            v = v * (group_weight / norm) if norm > 0 else v
        return np.concatenate([u, v])

    return CompositeProblem(
        smooth=smooth,
        gradient=gradient,
        lipschitz=5.0 if group_weight > 0 else 4.0,
        prox=prox,
        nonsmooth=lambda z: 0.0,
        init=np.zeros(2 * y.size - 1),
        recover=primal,
        name="denoising-dual",
    )


def flam_primal_problem(data, penalty) -> CompositeProblem:
    """Proximal-gradient form of the full FLAM problem.

    The intercept is eliminated (θ₀ = ȳ); the variable is the (n, p) stack of
    centered blocks, the smooth part ½||ỹ - Σθ_j||² has Lipschitz constant p,
    and the block prox is fuse-then-center-then-soft-scale.
    """
    from flam.services.prox import block_prox

    y_c = data.y - data.y.mean()
    n, p = data.n, data.p
    fuse, group = penalty.fuse_weight, penalty.group_weight
    orderings = data.orderings

    def smooth(z):
        r = y_c - z.reshape(n, p).sum(axis=1)
        return 0.5 * float(r @ r)

    def gradient(z):
        r = y_c - z.reshape(n, p).sum(axis=1)
        return np.repeat(-r[:, None], p, axis=1).ravel()

    def prox(z, step):
        blocks = z.reshape(n, p).copy()
        for j in range(p):
            blocks[:, j], _ = block_prox(
                blocks[:, j], orderings[j], step * fuse, step * group, data.tie_group(j)
            )
        return blocks.ravel()

    def nonsmooth(z):
        blocks = z.reshape(n, p)
        total = 0.0
        for j in range(p):
            total += fuse * float(np.abs(apply_D(blocks[orderings[j], j])).sum())
            total += group * float(np.linalg.norm(blocks[:, j]))
        return total

    return CompositeProblem(
        smooth=smooth,
        gradient=gradient,
        lipschitz=float(p),
        prox=prox,
        nonsmooth=nonsmooth,
        init=np.zeros(n * p),
        recover=lambda z: z.reshape(n, p).copy(),
        name="flam-primal",
    )


def oracle_prox_gradient(
    problem: CompositeProblem,
    init: Optional[np.ndarray] = None,
    step: Optional[float] = None,
    max_iter: int = 200_000,
    tol: float = 1e-10,
    accelerate: bool = True,
) -> np.ndarray:
    """Reference solver for composite problems; returns ``problem.recover(z)``.

    A step from the extrapolated point that raises the objective is replaced
    by a plain proximal step from the last iterate (adaptive restart), so the
    accepted objective sequence is non-increasing for step <= 1/L. Stops once
    both the relative objective change and the relative iterate change fall
    below ``tol``.
    """
    z = np.array(problem.init if init is None else init, dtype=float, copy=True)
    if step is None:
        step = 1.0 / problem.lipschitz
    if step <= 0:
        raise InvalidArgumentError(f"step must be positive, got {step}")

    value = problem.value(z)
    extrapolated = z
    t = 1.0
    increases = 0
    for it in range(max_iter):
        candidate = problem.prox(extrapolated - step * problem.gradient(extrapolated), step)
        cand_value = problem.value(candidate)
        if accelerate and cand_value > value:
            candidate = problem.prox(z - step * problem.gradient(z), step)
            cand_value = problem.value(candidate)
            t = 1.0
            extrapolated = candidate
        elif accelerate:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            extrapolated = candidate + ((t - 1.0) / t_next) * (candidate - z)
            t = t_next
        else:
            extrapolated = candidate

        if not math.isfinite(cand_value):
            raise NumericFailureError(f"[{problem.name}] objective became non-finite at iteration {it}")
        if cand_value > value + tol * max(1.0, abs(value)):
            increases += 1
            if increases >= DIVERGENCE_WINDOW:
                raise NumericFailureError(
                    f"[{problem.name}] objective increased over {DIVERGENCE_WINDOW} consecutive steps"
                )
        else:
            increases = 0

        change = float(np.max(np.abs(candidate - z))) if z.size else 0.0
        scale = max(1.0, float(np.max(np.abs(candidate))) if z.size else 1.0)
        value_change = abs(value - cand_value)
        z, value = candidate, cand_value
        if value_change <= tol * max(1.0, abs(value)) and change <= tol * scale:
            logger.debug(f"[{problem.name}] converged after {it + 1} iterations")
            break
    else:
        logger.warning(f"[{problem.name}] stopped at max_iter={max_iter}")
    return problem.recover(z)


# Largest input accepted by the grid oracle.
GRID_MAX_N = 6


def grid_resolution_bound(y: np.ndarray, fuse_weight: float, grid_step: float) -> float:
    """Upper bound on the objective gap between the grid minimizer and the optimum.

    Rounding the exact solution to the grid moves each coordinate by at most
    h/2, which changes the objective by at most Σ|y_i - θ_i|·h/2 + n·h²/8 +
    2w(n-1)·h/2; the range of y bounds |y_i - θ_i|.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    h = float(grid_step)
    spread = float(np.ptp(y)) if n else 0.0
    return n * spread * h / 2 + n * h * h / 8 + fuse_weight * (n - 1) * h


def _min_convolve_l1(cost: np.ndarray, slope: float):
    """m[k] = min_j cost[j] + slope·|k - j| with argmins, by two running-min passes."""
    K = cost.size
    idx = np.arange(K)
    # Forward: min over j <= k of cost[j] - slope*j, plus slope*k.
    shifted = cost - slope * idx
    running = np.minimum.accumulate(shifted)
    arg_fwd = np.maximum.accumulate(np.where(shifted <= running, idx, 0))
    fwd = running + slope * idx
    # Backward: min over j >= k of cost[j] + slope*j, minus slope*k.
    shifted_b = (cost + slope * idx)[::-1]
    running_b = np.minimum.accumulate(shifted_b)
    rev_idx = idx[::-1]
    arg_bwd = np.minimum.accumulate(np.where(shifted_b <= running_b, rev_idx, K - 1))[::-1]
    bwd = running_b[::-1] - slope * idx
    take_fwd = fwd <= bwd
    return np.where(take_fwd, fwd, bwd), np.where(take_fwd, arg_fwd, arg_bwd)


def oracle_grid_qp(y: np.ndarray, fuse_weight: float, grid_step: float = 1e-3) -> np.ndarray:
    """Exact minimizer of the 1D fused lasso objective over a level grid (n <= 6).

    The grid starts at min(y) with spacing ``grid_step`` and covers max(y),
    which contains every exact solution. The chain structure lets the search
    over all grid^n configurations run as a Viterbi sweep.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0 or n > GRID_MAX_N:
        raise InvalidArgumentError(f"grid oracle handles 1 <= n <= {GRID_MAX_N}, got n={n}")
    if grid_step <= 0 or fuse_weight < 0:
        raise InvalidArgumentError("grid_step must be positive and fuse_weight >= 0")
    lo = float(y.min())
    K = int(math.ceil((float(y.max()) - lo) / grid_step)) + 1
    levels = lo + grid_step * np.arange(K)
    slope = fuse_weight * grid_step

    cost = 0.5 * (y[0] - levels) ** 2
    back = np.zeros((n, K), dtype=int)
    for i in range(1, n):
        conv, arg = _min_convolve_l1(cost, slope)
        back[i] = arg
        cost = conv + 0.5 * (y[i] - levels) ** 2

    path = np.empty(n, dtype=int)
    path[-1] = int(np.argmin(cost))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return levels[path]
