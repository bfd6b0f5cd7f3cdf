"""Dense symmetric positive-definite algebra on ridge-regularised Gram matrices.

Every Gram matrix in the package is stored as a :class:`PsdAccumulator`: the
raw sum of outer products ``W`` plus the ridge ``lam``.  The regularised
matrix ``lam * I + W`` is what gets factored.  Factors are recomputed from the
stored matrix on demand; nothing is updated incrementally, so results do not
depend on the order in which agents are processed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from distctx.errors import ContractError, DegenerateMatrixError


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle onto the lower one (bit-exact symmetry)."""
    upper = np.triu(m)
    return upper + np.triu(m, 1).T


def as_feature(v, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"feature vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("feature vector has non-finite entries")
    return arr


@dataclass(frozen=True)
class PsdAccumulator:
    """Sum of outer products ``W`` together with its ridge ``lam``."""

    matrix: np.ndarray
    ridge: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ContractError(f"accumulator must be square, got shape {m.shape}")
        if not self.ridge > 0:
            raise ContractError(f"ridge must be positive, got {self.ridge}")
        object.__setattr__(self, "matrix", symmetrize(m))

    @classmethod
    def zeros(cls, dim: int, ridge: float = 1.0) -> "PsdAccumulator":
        return cls(np.zeros((dim, dim)), ridge)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def regularized(self) -> np.ndarray:
        """``lam * I + W``."""
        return self.ridge * np.eye(self.dim) + self.matrix

    def __add__(self, other: "PsdAccumulator") -> "PsdAccumulator":
        _check_pair(self, other)
        return PsdAccumulator(self.matrix + other.matrix, self.ridge)

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of ``lam * I + W``."""
        return cholesky_lower(self.regularized())

    def log_det(self) -> float:
        return log_det_from_factor(self.cholesky())


@dataclass(frozen=True)
class LinearStatistics:
    """Running sum of feature-weighted rewards."""

    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", as_feature(self.vector))

    @classmethod
    def zeros(cls, dim: int) -> "LinearStatistics":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def __add__(self, other: "LinearStatistics") -> "LinearStatistics":
        if other.dim != self.dim:
            raise ContractError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return LinearStatistics(self.vector + other.vector)

    def add_scaled(self, v, y: float) -> "LinearStatistics":
        return LinearStatistics(self.vector + as_feature(v, self.dim) * float(y))


def _check_pair(a: PsdAccumulator, b: PsdAccumulator) -> None:
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.ridge != b.ridge:
        raise ContractError(f"ridge mismatch: {a.ridge} vs {b.ridge}")


def cholesky_lower(m: np.ndarray) -> np.ndarray:
    try:
        factor = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMatrixError(f"matrix is not positive definite: {exc}") from None
    if not np.all(np.diag(factor) > 0):
        raise DegenerateMatrixError("Cholesky factor has a non-positive pivot")
    return factor


def log_det_from_factor(factor: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


def rank_one_update(acc: PsdAccumulator, v) -> PsdAccumulator:
    """Return ``acc`` with ``v v^T`` added to its raw matrix."""
    v = as_feature(v, acc.dim)
    return PsdAccumulator(acc.matrix + np.outer(v, v), acc.ridge)


def log_det_ratio(acc_now: PsdAccumulator, acc_then: PsdAccumulator) -> float:
    """``log det(lam I + W_now) - log det(lam I + W_then)`` via two factorizations."""
    if acc_now.dim != acc_then.dim:
        raise ContractError(f"dimension mismatch: {acc_now.dim} vs {acc_then.dim}")
    return acc_now.log_det() - acc_then.log_det()


def ridge_solve(acc: PsdAccumulator, stats: LinearStatistics, factor: np.ndarray | None = None) -> np.ndarray:
    """Solve ``(lam I + W) theta = U``.

    ``factor`` may be passed when the caller already holds the Cholesky factor
    of ``acc``.
    """
    if stats.dim != acc.dim:
        raise ContractError(f"dimension mismatch: {acc.dim} vs {stats.dim}")
    if factor is None:
        factor = acc.cholesky()
    z = solve_triangular(factor, stats.vector, lower=True, check_finite=False)
    return solve_triangular(factor, z, lower=True, trans="T", check_finite=False)


def weighted_norm(acc: PsdAccumulator, v, factor: np.ndarray | None = None) -> float:
    """``sqrt(v^T (lam I + W)^{-1} v)``."""
    v = as_feature(v, acc.dim)
    if factor is None:
        factor = acc.cholesky()
    z = solve_triangular(factor, v, lower=True, check_finite=False)
    return float(np.sqrt(z @ z))


def weighted_norms(factor: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Row-wise inverse-metric norms for a ``(K, d)`` stack, one triangular solve."""
    z = solve_triangular(factor, rows.T, lower=True, check_finite=False)
    return np.sqrt(np.einsum("ij,ij->j", z, z))


def mahalanobis(acc: PsdAccumulator, v) -> float:
    """``sqrt(v^T (lam I + W) v)``; the norm the confidence ellipsoid is defined in."""
    v = as_feature(v, acc.dim)
    return float(np.sqrt(max(v @ acc.regularized() @ v, 0.0)))


def potential_bound(dim: int, ridge: float, n: int, bound: float) -> float:
    """Upper bound on ``log det(V_n) - log det(lam I)`` after ``n`` updates of norm <= ``bound``."""
    return dim * np.log((ridge * dim + n * bound**2) / (ridge * dim))
