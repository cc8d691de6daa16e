"""Squared-exponential covariance with per-dimension lengthscales.

k(x, x') = signal_variance * exp(-0.5 * sum_h (x_h - x'_h)^2 / l_h^2)
"""

from __future__ import annotations

import numpy as np


def _as_matrix(X, d=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if d is not None and X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {X.shape[1]}")
    return X


def scaled_sqdist(X1, X2, lengthscales):
    """Pairwise sum_h (x_h - x'_h)^2 / l_h^2 between rows of X1 and X2."""
    ls = np.asarray(lengthscales, dtype=float).ravel()
    if np.any(ls <= 0):
        raise ValueError("lengthscales must be positive")
    X1 = _as_matrix(X1, ls.size)
    X2 = _as_matrix(X2, ls.size)
    A = X1 / ls
    B = X2 / ls
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.maximum(sq, 0.0)


def se_kernel(x, x2, lengthscales, signal_variance=1.0):
    """Kernel value between two points (scalar)."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    ls = np.asarray(lengthscales, dtype=float).ravel()
    if x.size != x2.size or x.size != ls.size:
        raise ValueError(
            f"dimension mismatch: x has {x.size}, x2 has {x2.size}, "
            f"lengthscales has {ls.size}"
        )
    if np.any(ls <= 0) or signal_variance <= 0:
        raise ValueError("lengthscales and signal_variance must be positive")
    r2 = np.sum(((x - x2) / ls) ** 2)
    return float(signal_variance * np.exp(-0.5 * r2))


def se_cross(X1, X2, lengthscales, signal_variance=1.0):
    """Cross-covariance matrix between two point sets, shape (n1, n2)."""
    return signal_variance * np.exp(-0.5 * scaled_sqdist(X1, X2, lengthscales))


def se_gram(X, lengthscales, signal_variance=1.0):
    """Covariance matrix of a point set with itself; exactly symmetric.

    Each pair is evaluated once and mirrored, so K[i, j] == K[j, i] bit for
    bit and the diagonal is exactly ``signal_variance``.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    K = np.empty((n, n))
    np.fill_diagonal(K, signal_variance)
    if n > 1:
        ls = np.asarray(lengthscales, dtype=float).ravel()
        iu = np.triu_indices(n, k=1)
        diff = (X[iu[0]] - X[iu[1]]) / ls
        vals = signal_variance * np.exp(-0.5 * np.sum(diff**2, axis=1))
        K[iu] = vals
        K[(iu[1], iu[0])] = vals
    return K


def per_dimension_sqdist(X1, X2):
    """Stack of per-dimension squared differences, shape (d, n1, n2).

    Feeds the lengthscale gradient of the marginal likelihood.
    """
    X1 = _as_matrix(X1)
    X2 = _as_matrix(X2, X1.shape[1])
    diff = X1[:, None, :] - X2[None, :, :]
    return np.moveaxis(diff**2, -1, 0)
