"""Chebyshev series of the first kind on an arbitrary interval."""
from __future__ import annotations

import numpy as np

__all__ = ["clenshaw", "vandermonde", "fit_coefficients", "RankDeficient"]


class RankDeficient(np.linalg.LinAlgError):
    pass


def clenshaw(c, x):
    """Evaluate ``sum_n c[n] T_n(x)`` by Clenshaw's recurrence.

    Works on numpy and jax arrays alike (only arithmetic is used).  ``c`` may
    carry extra leading axes; they broadcast against ``x``.
    """
    n = c.shape[-1]
    if n == 1:
        return c[..., 0] + 0 * x
    b1 = 0 * x
    b2 = 0 * x
    two_x = 2 * x
    for k in range(n - 1, 0, -1):
        b1, b2 = c[..., k] + two_x * b1 - b2, b1
    return c[..., 0] + x * b1 - b2


def vandermonde(x, n_terms: int) -> np.ndarray:
    """Matrix ``V[i, k] = T_k(x_i)`` from the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    V = np.empty((x.size, n_terms))
    V[:, 0] = 1.0
    if n_terms > 1:
        V[:, 1] = x
    for k in range(2, n_terms):
        V[:, k] = 2 * x * V[:, k - 1] - V[:, k - 2]
    return V


def fit_coefficients(x, y, n_terms: int, rcond: float = 1e-13):
    """Least-squares Chebyshev coefficients for samples on ``[-1, 1]``.

    Returns ``(coefficients, max_abs_residual)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_terms < 1 or n_terms > x.size:
        raise RankDeficient(f"need at least {n_terms} samples, got {x.size}")
    V = vandermonde(x, n_terms)
    c, _, rank, _ = np.linalg.lstsq(V, y, rcond=rcond)
    if rank < n_terms:
        raise RankDeficient(f"design matrix has rank {rank} < {n_terms}")
    return c, float(np.max(np.abs(V @ c - y)))
