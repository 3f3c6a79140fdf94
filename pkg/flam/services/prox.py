"""Proximal compositions for the FLAM penalty."""

from typing import Callable, Optional, Tuple

import numpy as np

from flam.core import ZERO_TOL
from flam.services.solvers import fused_lasso


def soft_scale(theta_hat: np.ndarray, group_weight: float) -> np.ndarray:
    """(1 - group_weight/||θ̂||₂)₊ · θ̂; zero when ||θ̂||₂ <= group_weight."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    if group_weight == 0:
        return theta_hat.copy()
    norm = float(np.linalg.norm(theta_hat))
    if norm <= group_weight:
        return np.zeros_like(theta_hat)
    return (1.0 - group_weight / norm) * theta_hat


def generic_sparse_prox(
    y: np.ndarray,
    base_solver: Callable[[np.ndarray], np.ndarray],
    group_weight: float,
) -> np.ndarray:
    """Minimizer of ½||y - θ||² + w₁||Bθ|| + group_weight·||θ||₂.

    ``base_solver`` must return the exact minimizer without the ℓ2 term; the
    full solution is its soft-scaled output.
    """
    return soft_scale(base_solver(np.asarray(y, dtype=float)), group_weight)


def fuse_sorted(v_sorted: np.ndarray, fuse_weight: float, ties: Optional[np.ndarray] = None) -> np.ndarray:
    """Fused lasso of a sorted-order vector with tied positions held equal.

    With ``ties`` the problem collapses onto tie-group means weighted by group
    size; the solution is expanded back to every position.
    """
    if ties is None:
        return fused_lasso(v_sorted, fuse_weight)
    counts = np.bincount(ties).astype(float)
    means = np.bincount(ties, weights=v_sorted) / counts
    return fused_lasso(means, fuse_weight, weights=counts)[ties]


def block_prox(
    v: np.ndarray,
    ordering: np.ndarray,
    fuse_weight: float,
    group_weight: float,
    ties: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """One FLAM block update on an observation-order vector.

    Fuses ``v`` in the feature's sorted order (tied covariate values share a
    level, see ``fuse_sorted``), removes the mean and soft-scales the centered
    result. Blocks whose largest entry is at most ZERO_TOL are returned as
    exact zeros.

    Returns:
        (centered, scaled block in observation order, removed mean)
    """
    fused = np.empty_like(v, dtype=float)
    fused[ordering] = fuse_sorted(np.asarray(v, dtype=float)[ordering], fuse_weight, ties)
    mean = float(fused.mean())
    theta = soft_scale(fused - mean, group_weight)
    if float(np.max(np.abs(theta))) <= ZERO_TOL:
        theta = np.zeros_like(theta)
    return theta, mean
