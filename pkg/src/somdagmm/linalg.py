"""Small dense-linear-algebra helpers: stable softmax and regularized Cholesky.

All public functions work on float64 numpy arrays and promise finite
outputs for finite inputs (softmax) or raise explicitly (Cholesky).
"""

import numpy as np

from .errors import SingularMatrixError

SYMMETRY_TOL = 1e-9


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax of a 1-D vector, computed with max-subtraction for stability.

    Output entries are positive and sum to 1 (within 1e-12) even for large
    input magnitudes. Raises ValueError on empty or non-finite input.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2-D array."""
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def regularized_cholesky(
    s: np.ndarray, eps: float, component: int | None = None
) -> np.ndarray:
    """Lower-triangular L with L @ L.T == S + eps*I.

    S must be symmetric within 1e-9 and eps >= 0. Non-finite entries and
    factorization failures raise SingularMatrixError, which carries
    ``component`` for diagnostics (callers evaluating per-mixture-component
    factorizations set it); shape or symmetry misuse raises ValueError.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if not np.all(np.isfinite(s)):
        raise SingularMatrixError(
            "matrix has non-finite entries", component=component
        )
    if np.abs(s - s.T).max(initial=0.0) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric within 1e-9")
    try:
        return np.linalg.cholesky(s + eps * np.eye(s.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"Cholesky factorization failed (eps={eps!r}): {exc}", component=component
        ) from exc


def chol_logdet(l_factor: np.ndarray) -> float:
    """log-determinant of L @ L.T from its Cholesky factor: 2 * sum(log diag L)."""
    return 2.0 * float(np.sum(np.log(np.diagonal(l_factor))))
