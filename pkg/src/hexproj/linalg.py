"""Dense float64 matrix helpers and the small solvers used by the heads.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
function here is pure: inputs are never modified.
"""
import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DimensionError, SingularMatrixError

PIVOT_THRESHOLD = 1e-12


def as_matrix(a, name="array"):
    """Return ``a`` as a 2-D float64 array, raising DimensionError otherwise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(lhs, rhs):
    lhs = as_matrix(lhs, "lhs")
    rhs = as_matrix(rhs, "rhs")
    if lhs.shape[1] != rhs.shape[0]:
        raise DimensionError(f"cannot multiply {lhs.shape} by {rhs.shape}")
    return lhs @ rhs


def transpose(m):
    return as_matrix(m).T.copy()


def _same_shape(a, b, op):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} != {b.shape}")
    return a, b


def add(a, b):
    a, b = _same_shape(a, b, "add")
    return a + b


def hadamard(a, b):
    a, b = _same_shape(a, b, "hadamard")
    return a * b


def scale(m, factor):
    return as_matrix(m) * float(factor)


def column_l2_norms(m):
    """Euclidean norm of every column, returned as a 1 x cols matrix."""
    m = as_matrix(m)
    return np.sqrt(np.sum(m * m, axis=0, keepdims=True))


def concat_cols(lhs, rhs):
    lhs = as_matrix(lhs, "lhs")
    rhs = as_matrix(rhs, "rhs")
    if lhs.shape[0] != rhs.shape[0]:
        raise DimensionError(
            f"concat_cols needs equal row counts, got {lhs.shape[0]} and {rhs.shape[0]}"
        )
    return np.concatenate([lhs, rhs], axis=1)


def cholesky(a):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises SingularMatrixError when a pivot falls to or below
    ``PIVOT_THRESHOLD`` times the largest diagonal entry.
    """
    a = as_matrix(a, "A")
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"A must be square, got {a.shape}")
    diag_scale = max(float(np.max(np.abs(np.diag(a)))) if n else 0.0, np.finfo(float).tiny)
    floor = PIVOT_THRESHOLD * diag_scale
    low = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if not pivot > floor:
            raise SingularMatrixError(
                f"non-positive pivot {pivot:.3e} at index {j} (threshold {floor:.3e})"
            )
        low[j, j] = np.sqrt(pivot)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_spd(a, b):
    """Solve ``A X = B`` for symmetric positive definite ``A`` via Cholesky."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"A has {a.shape[0]} rows but B has {b.shape[0]}")
    low = cholesky(a)
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.T, y, lower=False)


def spd_inverse(a):
    a = as_matrix(a, "A")
    return solve_spd(a, np.eye(a.shape[0]))


def inverse_backward(ainv, grad_out):
    """Gradient with respect to ``A`` given the gradient with respect to ``A^-1``.

    Uses d(A^-1) = -A^-1 dA A^-1, so grad_A = -A^-T grad_out A^-T.
    """
    ainv = as_matrix(ainv, "Ainv")
    grad_out = as_matrix(grad_out, "grad_out")
    if ainv.shape[0] != ainv.shape[1]:
        raise DimensionError(f"Ainv must be square, got {ainv.shape}")
    if grad_out.shape != ainv.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != {ainv.shape}")
    return -ainv.T @ grad_out @ ainv.T
