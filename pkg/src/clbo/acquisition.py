"""Expected improvement, its pseudo-EI variant, and their maximization.

All searches run on the unit hypercube. The maximizer is a multi-start
scheme: Latin-hypercube starts (plus any caller-supplied ones) are scored
in one vectorized pass and the best few are polished by bounded
Nelder-Mead, so the returned value can never fall below any start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .kernels import scaled_sqdist
from .preprocessing import latin_hypercube

#: below this standard deviation EI degenerates to the deterministic limit
_STD_EPS = 1e-12

_SQRT_2PI = np.sqrt(2.0 * np.pi)

#: |z| beyond this marks the over-exploitation / over-exploration regimes
Z_REGIME_THRESHOLD = 3.0


def expected_improvement(mean, variance, f_min):
    """Closed-form EI for minimization: E[max(f_min - Y, 0)].

    (f_min - mean) * Phi(z) + sigma * phi(z) with z = (f_min - mean)/sigma;
    collapses to max(f_min - mean, 0) as sigma vanishes. Vectorized over
    ``mean``/``variance``. Always non-negative.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    improve = f_min - mean

    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > _STD_EPS, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
    phi = np.exp(-0.5 * z**2) / _SQRT_2PI
    ei = improve * ndtr(z) + sigma * phi
    ei = np.where(sigma > _STD_EPS, ei, np.maximum(improve, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def ei_z(mean, variance, f_min):
    """The standardized improvement z = (f_min - mean) / sigma.

    Large positive z marks over-exploitation territory, large negative z
    over-exploration; see :func:`z_regime`.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("z is undefined at zero predictive variance")
    z = (f_min - mean) / np.sqrt(variance)
    return float(z) if z.ndim == 0 else z


def z_regime(z):
    """Label the EI regime at a given z value."""
    if z > Z_REGIME_THRESHOLD:
        return "over-exploitation"
    if z < -Z_REGIME_THRESHOLD:
        return "over-exploration"
    return "balanced"


def influence_function(x, x_star, lengthscales):
    """1 - exp(-sum_h (x_h - x*_h)^2 / (2 l_h^2)); zero only at the anchor.

    Vectorized over rows of ``x``. Values lie in [0, 1) and saturate to 1
    away from ``x_star``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    x_star = np.asarray(x_star, dtype=float).ravel()
    if x.shape[1] != x_star.size:
        raise ValueError("x and x_star disagree on dimension")
    r2 = scaled_sqdist(x, x_star[None, :], lengthscales)[:, 0]
    out = -np.expm1(-0.5 * r2)
    return float(out[0]) if single else out


def pseudo_ei(mean, variance, f_min, x, x_star, lengthscales):
    """EI damped by the influence function anchored at ``x_star``.

    Zero at the anchor, indistinguishable from EI far away; used to push a
    replacement query off a near-duplicate candidate.
    """
    ei = expected_improvement(mean, variance, f_min)
    return ei * influence_function(x, x_star, lengthscales)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Knobs of the multi-start acquisition maximizer.

    ``n_starts`` defaults to 20 per dimension, capped at 200. The best
    ``refine_top`` starts are polished with bounded Nelder-Mead for at most
    ``refine_maxiter`` iterations (default 40 per dimension); starts whose
    acquisition is negligible against the best start are not worth
    polishing and are skipped.
    """

    n_starts: int | None = None
    refine_top: int = 5
    refine_maxiter: int | None = None

    def resolved_starts(self, dim):
        if self.n_starts is not None:
            if self.n_starts < 1:
                raise ValueError("n_starts must be at least 1")
            return self.n_starts
        return min(20 * dim, 200)


def maximize_acquisition(evaluator, dim, rng, config=None, extra_starts=None, bounds=None):
    """Maximize a vectorized acquisition over a box, default [0, 1]^d.

    ``evaluator`` maps an (n, d) array to n acquisition values. Returns
    ``(x_best, value)`` with the guarantee that ``value`` is at least the
    acquisition of every start point; ties resolve to the earliest
    candidate.
    """
    if bounds is None:
        bounds = np.column_stack([np.zeros(dim), np.ones(dim)])
    else:
        bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (dim, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError("bounds must be a (d, 2) box with positive widths")
    config = config or AcquisitionConfig()

    n_starts = config.resolved_starts(dim)
    lo, hi = bounds[:, 0], bounds[:, 1]
    starts = lo + latin_hypercube(n_starts, dim, rng) * (hi - lo)
    if extra_starts is not None and len(extra_starts) > 0:
        extra = np.clip(np.atleast_2d(np.asarray(extra_starts, dtype=float)), lo, hi)
        starts = np.vstack([starts, extra])

    values = np.asarray(evaluator(starts), dtype=float)
    order = np.argsort(-values, kind="stable")

    best_idx = order[0]
    best_x, best_value = starts[best_idx].copy(), float(values[best_idx])

    maxiter = config.refine_maxiter or 40 * dim
    scipy_bounds = [tuple(b) for b in bounds]

    def negated(x):
        return -float(evaluator(np.atleast_2d(x))[0])

    floor = abs(best_value) * 1e-9
    for rank, idx in enumerate(order[: config.refine_top]):
        if rank > 0 and values[idx] <= floor:
            break
        res = minimize(
            negated,
            starts[idx],
            method="Nelder-Mead",
            bounds=scipy_bounds,
            # termination on simplex size alone: x precision is what matters
            options={"maxiter": maxiter, "xatol": 1e-6, "fatol": np.inf},
        )
        x_ref = np.clip(res.x, lo, hi)
        val_ref = float(evaluator(np.atleast_2d(x_ref))[0])
        if val_ref > best_value:
            best_x, best_value = x_ref.copy(), val_ref
    return best_x, best_value
