"""Feature orderings, the difference operators D, U, V and the theta/beta maps.

Conventions:
    - Orderings are 0-based index arrays: ``x[order]`` is sorted ascending and
      ``order[k]`` is the observation holding the k-th smallest value.
    - D has row pattern (1, -1), so ``beta[i] = theta_(i) - theta_(i+1)`` in
      sorted order.
    - U is the column-centered upper-triangular matrix of ones with its last
      column removed; it satisfies ``U @ D + ones/n = I`` and ``1^T U = 0``.

All hot-path products with D, D^T, U, U^T are O(n) cumulative sums. Dense
matrices are only built by ``build_U`` (tests, small n) and
``build_V_columns`` (degrees of freedom on active columns).
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from flam.errors import InvalidArgumentError, PreconditionError

# Entries of beta (and whole theta blocks) at or below this are treated as zero.
ZERO_TOL = 1e-10


def order_feature(x: np.ndarray) -> np.ndarray:
    """Stable ascending ordering of one covariate column.

    Args:
        x: Covariate values, length n.

    Returns:
        Integer permutation ``order`` with ``x[order]`` non-decreasing; ties keep
        their original relative order.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("order_feature needs a non-empty 1-d vector")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("order_feature got non-finite covariate values")
    return np.argsort(x, kind="stable")


def tie_groups(x: np.ndarray, ordering: np.ndarray) -> Optional[np.ndarray]:
    """Tie-group index of every sorted position, or None when x has no ties.

    ``groups[k]`` numbers the distinct values of ``x[ordering]`` from 0 upward,
    so positions holding equal covariate values share one index.
    """
    xs = np.asarray(x, dtype=float)[ordering]
    new_value = np.diff(xs) > 0
    if np.all(new_value):
        return None
    groups = np.concatenate([[0], np.cumsum(new_value)])
    groups.setflags(write=False)
    return groups


def apply_D(v: np.ndarray) -> np.ndarray:
    """First differences ``v[i] - v[i+1]`` (length n-1)."""
    v = np.asarray(v, dtype=float)
    return v[:-1] - v[1:]


def apply_Dt(s: np.ndarray) -> np.ndarray:
    """Transpose of D applied to an (n-1)-vector (length n)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.size + 1)
    out[:-1] += s
    out[1:] -= s
    return out


def apply_U(b: np.ndarray) -> np.ndarray:
    """U @ b for b of length n-1 (sorted-order result, length n)."""
    b = np.asarray(b, dtype=float)
    n = b.size + 1
    out = np.zeros(n)
    out[:-1] = np.cumsum(b[::-1])[::-1]
    out -= np.dot(b, np.arange(1, n)) / n
    return out


def apply_Ut(a: np.ndarray) -> np.ndarray:
    """U^T @ a for a of length n (length n-1)."""
    a = np.asarray(a, dtype=float)
    n = a.size
    return np.cumsum(a)[:-1] - np.arange(1, n) / n * a.sum()


def build_U(n: int) -> np.ndarray:
    """Dense U (n x (n-1)).

    Column k (0-based) is the indicator of the first k+1 sorted positions,
    centered: ``U[i, k] = 1[i <= k] - (k+1)/n``.
    """
    if n < 2:
        raise InvalidArgumentError(f"build_U needs n >= 2, got {n}")
    rows = np.arange(n)[:, None]
    cols = np.arange(n - 1)[None, :]
    return (rows <= cols).astype(float) - (cols + 1) / n


def build_D(n: int) -> np.ndarray:
    """Dense first-difference matrix ((n-1) x n), rows (1, -1)."""
    if n < 2:
        raise InvalidArgumentError(f"build_D needs n >= 2, got {n}")
    return np.eye(n - 1, n) - np.eye(n - 1, n, k=1)


def theta_from_beta(beta_j: np.ndarray, ordering: np.ndarray) -> np.ndarray:
    """theta_j = P_j^T U beta_j, returned in observation order."""
    beta_j = np.asarray(beta_j, dtype=float)
    ordering = np.asarray(ordering)
    if beta_j.ndim != 1 or beta_j.size + 1 != ordering.size:
        raise InvalidArgumentError(
            f"beta has length {beta_j.size} but the ordering has length {ordering.size}"
        )
    theta = np.empty(ordering.size)
    theta[ordering] = apply_U(beta_j)
    return theta


def centering_tolerance(n: int, scale: float) -> float:
    """Tolerance on |sum(theta_j)| for a centered block."""
    return 1e-8 * n * max(1.0, scale)


def beta_from_theta(theta_j: np.ndarray, ordering: np.ndarray) -> np.ndarray:
    """beta_j = D P_j theta_j for a centered theta_j."""
    theta_j = np.asarray(theta_j, dtype=float)
    ordering = np.asarray(ordering)
    if theta_j.shape != ordering.shape:
        raise InvalidArgumentError(
            f"theta has shape {theta_j.shape} but the ordering has shape {ordering.shape}"
        )
    scale = float(np.max(np.abs(theta_j))) if theta_j.size else 0.0
    total = float(theta_j.sum())
    if abs(total) > centering_tolerance(theta_j.size, scale):
        raise PreconditionError(f"theta_j must sum to zero, got sum {total:.3e}")
    return apply_D(theta_j[ordering])


def build_V_columns(
    orderings: np.ndarray, active: Sequence[tuple[int, np.ndarray]]
) -> np.ndarray:
    """Dense V restricted to active columns.

    Args:
        orderings: (p, n) array of feature orderings.
        active: Pairs ``(j, idx)`` with ``idx`` the 0-based active positions of
            beta_j, in the column order wanted.

    Returns:
        n x sum(len(idx)) matrix whose columns are ``P_j^T U[:, k]``.
    """
    n = orderings.shape[1]
    blocks = []
    for j, idx in active:
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            continue
        rank = np.empty(n, dtype=int)
        rank[orderings[j]] = np.arange(n)
        blocks.append((rank[:, None] <= idx[None, :]).astype(float) - (idx + 1) / n)
    if not blocks:
        return np.zeros((n, 0))
    return np.hstack(blocks)


@dataclass(frozen=True)
class DiffMaps:
    """Implicit D, U and V_j = P_j^T U for a fixed n."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise InvalidArgumentError(f"DiffMaps needs n >= 2, got {self.n}")

    def d(self, v: np.ndarray) -> np.ndarray:
        return apply_D(v)

    def dt(self, s: np.ndarray) -> np.ndarray:
        return apply_Dt(s)

    def u(self, b: np.ndarray) -> np.ndarray:
        return apply_U(b)

    def ut(self, a: np.ndarray) -> np.ndarray:
        return apply_Ut(a)

    def v(self, beta_j: np.ndarray, ordering: np.ndarray) -> np.ndarray:
        return theta_from_beta(beta_j, ordering)

    def vt(self, a: np.ndarray, ordering: np.ndarray) -> np.ndarray:
        """V_j^T a = U^T P_j a."""
        return apply_Ut(np.asarray(a, dtype=float)[ordering])

    def dense_u(self) -> np.ndarray:
        return build_U(self.n)
