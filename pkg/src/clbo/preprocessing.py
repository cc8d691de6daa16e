"""Input/output scaling utilities shared by the surrogates and the optimizers.

All surrogate fitting happens on the unit hypercube with standardized
outputs; these transformers carry the affine maps between raw problem
coordinates and that internal representation.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class BoxTransform(BaseEstimator, TransformerMixin):
    """Affine map between a raw bound box and the unit hypercube.

    Parameters
    ----------
    bounds : array-like of shape (d, 2)
        Per-dimension (lower, upper) raw bounds. Lower must be strictly
        below upper in every dimension.
    """

    def __init__(self, bounds):
        self.bounds = bounds

    def fit(self, X=None, y=None):
        bounds = check_array(np.asarray(self.bounds, dtype=float), ensure_2d=True)
        if bounds.shape[1] != 2:
            raise ValueError(f"bounds must have shape (d, 2), got {bounds.shape}")
        if np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ValueError("every upper bound must exceed its lower bound")
        self.lower_ = bounds[:, 0]
        self.width_ = bounds[:, 1] - bounds[:, 0]
        self.n_features_in_ = bounds.shape[0]
        return self

    def transform(self, X):
        """Raw coordinates -> unit hypercube."""
        check_is_fitted(self)
        X = np.asarray(X, dtype=float)
        return (X - self.lower_) / self.width_

    def inverse_transform(self, U):
        """Unit hypercube -> raw coordinates."""
        check_is_fitted(self)
        U = np.asarray(U, dtype=float)
        return self.lower_ + U * self.width_


class OutputScaler(BaseEstimator, TransformerMixin):
    """Standardize a scalar output vector to zero mean and unit variance.

    Constant outputs keep a unit scale so that the transform stays
    invertible; the round trip raw -> standardized -> raw is exact to
    floating-point precision either way.
    """

    #: standard deviations below this are treated as a constant signal
    _MIN_SCALE = 1e-12

    def fit(self, y):
        y = np.asarray(y, dtype=float).ravel()
        if y.size == 0:
            raise ValueError("cannot standardize an empty output vector")
        self.mean_ = float(np.mean(y))
        scale = float(np.std(y))
        self.scale_ = scale if scale > self._MIN_SCALE else 1.0
        return self

    def transform(self, y):
        check_is_fitted(self)
        return (np.asarray(y, dtype=float) - self.mean_) / self.scale_

    def inverse_transform(self, z):
        check_is_fitted(self)
        return np.asarray(z, dtype=float) * self.scale_ + self.mean_

    def inverse_transform_variance(self, var):
        """Map a predictive variance back to raw output units."""
        check_is_fitted(self)
        return np.asarray(var, dtype=float) * self.scale_**2


def validate_unit_cube(X, *, name="X", atol=1e-9):
    """Check that ``X`` is a 2-D float array with coordinates in [0, 1].

    Returns the validated array. A small tolerance absorbs round-off from
    the box transform.
    """
    X = check_array(np.asarray(X, dtype=float), ensure_2d=True)
    if np.any(X < -atol) or np.any(X > 1.0 + atol):
        raise ValueError(f"{name} must lie inside the unit hypercube")
    return np.clip(X, 0.0, 1.0)


def check_lengths_match(X, y):
    """Validate a (inputs, outputs) pair and return them as float arrays."""
    X = check_array(np.asarray(X, dtype=float), ensure_2d=True)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"inputs and outputs disagree on sample count: {X.shape[0]} vs {y.shape[0]}"
        )
    return X, y


def dedupe_rows(X, y):
    """Drop duplicate input rows, keeping the first occurrence of each.

    Duplicate inputs make the Gram matrix singular and add no information
    for deterministic objectives.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    _, first = np.unique(X, axis=0, return_index=True)
    keep = np.sort(first)
    return X[keep], y[keep]


def latin_hypercube(n, d, rng):
    """Draw ``n`` Latin-hypercube points in [0, 1]^d from ``rng``."""
    if n < 1:
        raise ValueError("need at least one sample")
    sampler = qmc.LatinHypercube(d=d, seed=rng)
    return sampler.random(n)
