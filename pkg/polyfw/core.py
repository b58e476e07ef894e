"""Problem representation and the linear-algebra kernels shared by every solver.

All objective values use the half-scaled LASSO functional

    L(x) = 1/2 ||y - A x||_2^2 + lam ||x||_1

under which the lift bound M = ||y||^2 / (2 lam) equals L(0) / lam and the
dual certificate eta = A^T (y - A x) / lam satisfies ||eta||_inf <= 1 at the
optimum.
"""
import logging
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from ._typing import FloatArray, IndexArray
from .exceptions import ContractViolation

__all__ = [
    "DesignMatrix",
    "LassoProblem",
    "SparseIterate",
    "Certificate",
    "objective",
    "dual_certificate",
    "lift_bound",
    "lambda_max",
    "spectral_norm_sq",
    "gram_spectral_norm_sq",
    "step_inflation",
    "soft_threshold",
    "residual",
]

logger = logging.getLogger(__name__)

# Safety factor applied to spectral norm estimates before they become step sizes.
STEP_INFLATION = 1.01


def _readonly(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


class DesignMatrix:
    """Dense ``L x N`` sensing operator."""

    def __init__(self, entries, copy: bool = True) -> None:
        if copy:
            values = np.array(entries, dtype=np.float64, order="C")
        else:
            values = np.asarray(entries, dtype=np.float64, order="C")
        if values.ndim != 2:
            raise ContractViolation(
                f"design matrix must be 2-d, got {values.ndim} dimensions"
            )
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ContractViolation(f"design matrix has empty shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("design matrix has non-finite entries")
        self.entries = _readonly(values)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def apply(self, x) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.cols,):
            raise ContractViolation(
                f"apply expects a vector of length {self.cols}, got shape {x.shape}"
            )
        return self.entries @ x

    def adjoint(self, r) -> FloatArray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.rows,):
            raise ContractViolation(
                f"adjoint expects a vector of length {self.rows}, got shape {r.shape}"
            )
        return self.entries.T @ r

    def apply_sparse(self, x: "SparseIterate") -> FloatArray:
        """``A x`` touching only the active columns of ``x``."""
        if x.dimension != self.cols:
            raise ContractViolation(
                f"iterate has dimension {x.dimension}, matrix has {self.cols} columns"
            )
        if x.nnz == 0:
            return np.zeros(self.rows)
        if 4 * x.nnz > self.cols:
            return self.entries @ x.to_dense()
        return self.entries[:, x.support] @ x.weights

    def restrict(self, indices) -> "DesignMatrix":
        indices = np.asarray(indices, dtype=np.intp)
        if indices.size == 0:
            raise ContractViolation("cannot restrict a matrix to an empty column set")
        if indices.min() < 0 or indices.max() >= self.cols:
            raise ContractViolation("column indices out of bounds")
        return DesignMatrix(self.entries[:, indices], copy=False)

    def __repr__(self):
        return f"DesignMatrix(rows={self.rows}, cols={self.cols})"


class SparseIterate:
    """
    Sparse vector of dimension ``N`` stored as increasing indices plus weights.

    Exact zeros are never stored: they are dropped on construction.
    """

    def __init__(self, support, weights, dimension: int) -> None:
        support = np.asarray(support, dtype=np.intp).reshape(-1)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        dimension = int(dimension)
        if dimension < 1:
            raise ContractViolation(f"dimension must be positive, got {dimension}")
        if support.shape != weights.shape:
            raise ContractViolation(
                f"support has {support.size} indices but {weights.size} weights"
            )
        if support.size:
            if support[0] < 0 or support[-1] >= dimension:
                raise ContractViolation(
                    f"support indices must lie in [0, {dimension})"
                )
            if np.any(np.diff(support) <= 0):
                raise ContractViolation("support indices must be strictly increasing")
            if not np.all(np.isfinite(weights)):
                raise ContractViolation("weights must be finite")
        keep = weights != 0.0
        if not np.all(keep):
            support = support[keep]
            weights = weights[keep]
        self.support: IndexArray = _readonly(support.copy())
        self.weights: FloatArray = _readonly(weights.copy())
        self.dimension = dimension

    @classmethod
    def zero(cls, dimension: int) -> "SparseIterate":
        return cls(np.empty(0, dtype=np.intp), np.empty(0), dimension)

    @classmethod
    def from_dense(cls, x) -> "SparseIterate":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        support = np.flatnonzero(x)
        return cls(support, x[support], x.size)

    @property
    def nnz(self) -> int:
        return int(self.support.size)

    @property
    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    def to_dense(self) -> FloatArray:
        x = np.zeros(self.dimension)
        x[self.support] = self.weights
        return x

    def values_at(self, indices) -> FloatArray:
        """Weights of this iterate read at the increasing ``indices`` (zero elsewhere)."""
        indices = np.asarray(indices, dtype=np.intp)
        out = np.zeros(indices.size)
        if self.nnz == 0 or indices.size == 0:
            return out
        pos = np.searchsorted(indices, self.support)
        pos_clipped = np.minimum(pos, indices.size - 1)
        found = indices[pos_clipped] == self.support
        out[pos_clipped[found]] = self.weights[found]
        return out

    def is_within(self, indices) -> bool:
        return bool(np.all(np.isin(self.support, indices)))

    def blend(self, other: "SparseIterate", gamma: float) -> "SparseIterate":
        """Convex combination ``(1 - gamma) * self + gamma * other``."""
        if other.dimension != self.dimension:
            raise ContractViolation("cannot blend iterates of different dimensions")
        support = np.union1d(self.support, other.support)
        weights = (1.0 - gamma) * self.values_at(support) + gamma * other.values_at(
            support
        )
        return SparseIterate(support, weights, self.dimension)

    def __eq__(self, other):
        if not isinstance(other, SparseIterate):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        return f"SparseIterate(nnz={self.nnz}, dimension={self.dimension})"


class Certificate:
    """Empirical dual certificate ``eta = A^T (y - A x) / lam``."""

    def __init__(self, values) -> None:
        self.values: FloatArray = _readonly(np.array(values, dtype=np.float64))
        self.linf = float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"Certificate(linf={self.linf:.6g}, length={self.values.size})"


class LassoProblem:
    """The triple ``(A, y, lam)`` with its derived constants."""

    def __init__(self, matrix: DesignMatrix, y, lam: float) -> None:
        if not isinstance(matrix, DesignMatrix):
            matrix = DesignMatrix(matrix)
        y = np.array(y, dtype=np.float64).reshape(-1)
        if y.shape != (matrix.rows,):
            raise ContractViolation(
                f"observations have length {y.size}, matrix has {matrix.rows} rows"
            )
        if not np.all(np.isfinite(y)):
            raise ContractViolation("observations must be finite")
        lam = float(lam)
        if not (lam > 0 and np.isfinite(lam)):
            raise ContractViolation(f"lambda must be positive and finite, got {lam}")
        self.matrix = matrix
        self.y: FloatArray = _readonly(y)
        self.lam = lam

    @property
    def rows(self) -> int:
        return self.matrix.rows

    @property
    def cols(self) -> int:
        return self.matrix.cols

    @cached_property
    def lift_bound(self) -> float:
        return float(self.y @ self.y) / (2.0 * self.lam)

    @cached_property
    def lambda_max(self) -> float:
        return float(np.max(np.abs(self.matrix.adjoint(self.y))))

    @cached_property
    def spectral_norm_sq(self) -> float:
        return spectral_norm_sq(self.matrix)

    def with_lambda(self, lam: float) -> "LassoProblem":
        return LassoProblem(self.matrix, self.y, lam)

    def __repr__(self):
        return f"LassoProblem(rows={self.rows}, cols={self.cols}, lam={self.lam:.6g})"


def _check_dimension(problem: LassoProblem, x: SparseIterate) -> None:
    if x.dimension != problem.cols:
        raise ContractViolation(
            f"iterate has dimension {x.dimension}, problem has {problem.cols} features"
        )


def residual(problem: LassoProblem, x: SparseIterate) -> FloatArray:
    _check_dimension(problem, x)
    return problem.y - problem.matrix.apply_sparse(x)


def objective(problem: LassoProblem, x: SparseIterate) -> float:
    """``1/2 ||y - A x||^2 + lam ||x||_1``, computed from the active columns only."""
    r = residual(problem, x)
    return 0.5 * float(r @ r) + problem.lam * x.l1


def dual_certificate(problem: LassoProblem, x: SparseIterate) -> Certificate:
    r = residual(problem, x)
    return Certificate(problem.matrix.adjoint(r) / problem.lam)


def lift_bound(problem: LassoProblem) -> float:
    """Radius ``M = ||y||^2 / (2 lam)`` of the lifted cone."""
    return problem.lift_bound


def lambda_max(problem: LassoProblem) -> float:
    """Smallest penalty for which the zero vector solves the problem."""
    return problem.lambda_max


def _power_iteration(normal, n: int, tol: float, max_iter: int, seed: int) -> float:
    """Largest eigenvalue of the PSD map ``normal`` (``v -> A^T A v``)."""
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    last_change = None
    it = 0
    for it in range(1, max_iter + 1):
        w = normal(v)
        rayleigh = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        change = abs(rayleigh - estimate)
        estimate = rayleigh
        if change == 0.0 and it > 1:
            break
        if last_change:
            rho = min(change / last_change, 0.999)
            tail = change * rho / (1.0 - rho)
            if change <= tol * estimate and tail <= tol * estimate:
                break
        last_change = change
    logger.debug("spectral norm estimate %.6g after %d power iterations", estimate, it)
    return estimate


def spectral_norm_sq(
    matrix: DesignMatrix,
    tol: float = 1e-4,
    max_iter: int = 1000,
    seed: int = 0,
) -> float:
    """
    Estimate ``sigma_max(A)^2`` by power iteration on ``A^T A``.

    Iteration stops once both the last change of the Rayleigh quotient and the
    geometric extrapolation of the remaining changes fall below ``tol``
    relative to the estimate. The start vector is drawn from a fixed seed so
    the estimate is deterministic. The Rayleigh quotient never exceeds the
    true value; callers turning the estimate into a step size inflate it with
    :func:`step_inflation`.

    :return: the estimate, or 0 for the zero matrix
    """
    if tol <= 0:
        raise ContractViolation(f"tol must be positive, got {tol}")
    entries = matrix.entries
    if not np.any(entries):
        return 0.0
    return _power_iteration(
        lambda v: entries.T @ (entries @ v), entries.shape[1], tol, max_iter, seed
    )


def gram_spectral_norm_sq(
    gram, tol: float = 1e-4, max_iter: int = 1000, seed: int = 0
) -> float:
    """Same estimate as :func:`spectral_norm_sq` from a precomputed ``A^T A``."""
    gram = np.asarray(gram, dtype=np.float64)
    if not np.any(gram):
        return 0.0
    return _power_iteration(lambda v: gram @ v, gram.shape[0], tol, max_iter, seed)


def step_inflation(sigma_sq: float) -> float:
    """Inverse of the step size used by proximal steps for a given ``sigma^2``."""
    return STEP_INFLATION * sigma_sq


def soft_threshold(v, threshold: float) -> FloatArray:
    """Componentwise ``sgn(v_i) * max(0, |v_i| - threshold)``."""
    if threshold < 0:
        raise ContractViolation(f"threshold must be nonnegative, got {threshold}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def as_index_set(indices: Optional[Iterable[int]], dimension: int) -> IndexArray:
    """Sorted unique index array within ``[0, dimension)``."""
    if indices is None:
        return np.empty(0, dtype=np.intp)
    if not isinstance(indices, np.ndarray):
        indices = np.fromiter(indices, dtype=np.intp)
    out = np.unique(indices.astype(np.intp))
    if out.size and (out[0] < 0 or out[-1] >= dimension):
        raise ContractViolation(f"indices must lie in [0, {dimension})")
    return out
