"""Coregionalized multi-output GP over bootstrap subsets of one dataset.

Every output models the same objective from its own subset of samples. All
outputs share a single lengthscale vector (the agreement constraint on
curve bumpiness), and are coupled through a learned output-covariance
matrix parameterized by its Cholesky factor, which keeps the stacked
covariance positive semi-definite by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .gp import (
    LENGTHSCALE_BOUNDS,
    NOISE_FLOOR,
    NOISE_VARIANCE_BOUNDS,
    SIGNAL_VARIANCE_BOUNDS,
    _multistart_minimize,
    chol_with_jitter,
)
from .kernels import per_dimension_sqdist, se_cross, se_gram
from .preprocessing import OutputScaler, check_lengths_match, dedupe_rows


def row_in(X, x):
    """True when ``x`` matches a row of ``X`` exactly."""
    X = np.asarray(X)
    if X.size == 0:
        return False
    return bool(np.any(np.all(X == np.asarray(x).ravel(), axis=1)))


@dataclass
class SubsetCollection:
    """The per-output training subsets of a multi-output GP."""

    X_list: list = field(default_factory=list)
    y_list: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.X_list) != len(self.y_list):
            raise ValueError("X_list and y_list must have the same length")
        self.X_list = [np.atleast_2d(np.asarray(X, dtype=float)) for X in self.X_list]
        self.y_list = [np.asarray(y, dtype=float).ravel() for y in self.y_list]
        for X, y in zip(self.X_list, self.y_list):
            if X.shape[0] != y.shape[0]:
                raise ValueError("subset inputs and outputs disagree on sample count")

    @property
    def n_outputs(self):
        return len(self.X_list)

    @property
    def sizes(self):
        return [X.shape[0] for X in self.X_list]

    @property
    def total_size(self):
        return int(sum(self.sizes))

    def stacked(self):
        """All rows stacked, with the output index of each row.

        Returns ``(X, y, index)`` where ``index[a]`` is the output that row
        ``a`` belongs to.
        """
        X = np.vstack(self.X_list)
        y = np.concatenate(self.y_list)
        index = np.concatenate(
            [np.full(n, i, dtype=int) for i, n in enumerate(self.sizes)]
        )
        return X, y, index

    def add(self, output, x, y):
        """Append a row to one subset; duplicates are skipped silently.

        Returns True when the row was added.
        """
        x = np.asarray(x, dtype=float).ravel()
        if row_in(self.X_list[output], x):
            return False
        self.X_list[output] = np.vstack([self.X_list[output], x])
        self.y_list[output] = np.append(self.y_list[output], float(y))
        return True

    def copy(self):
        return SubsetCollection(
            [X.copy() for X in self.X_list], [y.copy() for y in self.y_list]
        )


def bootstrap_subsets(X, y, n_subsets, rng, min_size=2):
    """Draw ``n_subsets`` deduplicated bootstrap subsets of ``(X, y)``.

    Each subset is ``n`` draws with replacement from the master set with
    duplicate rows removed. Subsets that come out smaller than ``min_size``
    are topped up with uniformly chosen master rows they do not yet
    contain, when the master set has enough distinct rows to do so.
    """
    X, y = check_lengths_match(X, y)
    if n_subsets < 1:
        raise ValueError("need at least one subset")
    n = X.shape[0]
    distinct_X, distinct_y = dedupe_rows(X, y)
    X_list, y_list = [], []
    for _ in range(n_subsets):
        idx = rng.integers(0, n, size=n)
        Xs, ys = dedupe_rows(X[idx], y[idx])
        while Xs.shape[0] < min(min_size, distinct_X.shape[0]):
            candidates = [
                k for k in range(distinct_X.shape[0]) if not row_in(Xs, distinct_X[k])
            ]
            pick = candidates[rng.integers(0, len(candidates))]
            Xs = np.vstack([Xs, distinct_X[pick]])
            ys = np.append(ys, distinct_y[pick])
        X_list.append(Xs)
        y_list.append(ys)
    return SubsetCollection(X_list, y_list)


@dataclass(frozen=True)
class MOGPParams:
    """Hyperparameters of the coregionalized GP.

    ``output_cov_factor`` is the lower-triangular factor Psi of the output
    covariance Psi @ Psi.T, whose diagonal gives the per-output signal
    variances and whose normalization gives the inter-output correlations.
    """

    shared_lengthscales: np.ndarray
    output_cov_factor: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.shared_lengthscales, dtype=float).ravel()
        psi = np.atleast_2d(np.asarray(self.output_cov_factor, dtype=float))
        nv = np.asarray(self.noise_variances, dtype=float).ravel()
        object.__setattr__(self, "shared_lengthscales", ls)
        object.__setattr__(self, "output_cov_factor", psi)
        object.__setattr__(self, "noise_variances", nv)
        if np.any(ls <= 0):
            raise ValueError("shared_lengthscales must be positive")
        m = psi.shape[0]
        if psi.shape != (m, m) or nv.size != m:
            raise ValueError("output_cov_factor and noise_variances disagree on m")
        if not np.allclose(psi, np.tril(psi)):
            raise ValueError("output_cov_factor must be lower triangular")
        if np.any(np.diag(psi) <= 0):
            raise ValueError("output_cov_factor needs a positive diagonal")
        if np.any(nv < 0):
            raise ValueError("noise variances must be non-negative")

    @property
    def n_outputs(self):
        return self.output_cov_factor.shape[0]

    @property
    def dim(self):
        return self.shared_lengthscales.size

    @property
    def output_covariance(self):
        """The m x m signal covariance between outputs (PSD by construction)."""
        psi = self.output_cov_factor
        return psi @ psi.T

    @property
    def output_scales(self):
        """Per-output signal variances (diagonal of the output covariance)."""
        return np.diag(self.output_covariance)

    @property
    def correlation(self):
        """Unit-diagonal correlation matrix between outputs."""
        cov = self.output_covariance
        s = np.sqrt(np.diag(cov))
        return cov / np.outer(s, s)


def build_block_covariance(subsets, params):
    """Stacked N x N covariance: blocks rho_ij * K_ij plus per-output noise.

    K_ij is the unit-variance SE cross-Gram between subsets i and j under
    the shared lengthscales; the noise contributes sigma_n_i^2 to the
    diagonal of block i.
    """
    X, _, index = subsets.stacked()
    if params.n_outputs != subsets.n_outputs:
        raise ValueError("params and subsets disagree on the number of outputs")
    if params.dim != X.shape[1]:
        raise ValueError("params and subsets disagree on input dimension")
    K0 = se_gram(X, params.shared_lengthscales, 1.0)
    cov = params.output_covariance
    C = cov[np.ix_(index, index)] * K0
    C[np.diag_indices_from(C)] += params.noise_variances[index]
    return C


def mogp_nlml(subsets, params):
    """NLML of the stacked outputs under the block covariance."""
    _, y, _ = subsets.stacked()
    C = build_block_covariance(subsets, params)
    L, _ = chol_with_jitter(C, params)
    alpha = cho_solve((L, True), y, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    n = y.size
    return float(0.5 * y @ alpha + 0.5 * log_det + 0.5 * n * np.log(2.0 * np.pi))


def mogp_nlml_gradient(subsets, params):
    """Analytic NLML gradient in the packed log/raw parameter space.

    Order: ``[log l_1..log l_d, packed factor row by row (diagonal entries
    as logs, off-diagonals raw), log noise_1..log noise_m]``.
    """
    X, y, index = subsets.stacked()
    theta = _mogp_params_to_theta(params)
    _, grad = _mogp_value_and_grad(theta, X, y, index, params.dim, params.n_outputs)
    return grad


def _pack_psi(psi):
    """Lower triangle row by row; diagonal entries as log of their square.

    Log-variance units on the diagonal make the m = 1 case coordinate-wise
    identical to the single-output parameterization, so the degenerate
    model traces the same optimization path.
    """
    m = psi.shape[0]
    out = []
    for p in range(m):
        for q in range(p + 1):
            out.append(2.0 * np.log(psi[p, p]) if p == q else psi[p, q])
    return np.asarray(out)


def _unpack_psi(packed, m):
    psi = np.zeros((m, m))
    k = 0
    for p in range(m):
        for q in range(p + 1):
            psi[p, q] = np.exp(0.5 * packed[k]) if p == q else packed[k]
            k += 1
    return psi


def _mogp_params_to_theta(params):
    return np.concatenate(
        [
            np.log(params.shared_lengthscales),
            _pack_psi(params.output_cov_factor),
            np.log(params.noise_variances),
        ]
    )


def _mogp_theta_to_params(theta, d, m):
    n_psi = m * (m + 1) // 2
    return MOGPParams(
        shared_lengthscales=np.exp(theta[:d]),
        output_cov_factor=_unpack_psi(theta[d : d + n_psi], m),
        noise_variances=np.exp(theta[d + n_psi :]),
    )


class _MOGPObjective:
    """NLML value and gradient over the stacked system, with the pairwise
    distances and output bookkeeping precomputed.

    The factor gradients use the identity
    sum(A * (dcov[index, index] * K0)) = sum_ij dcov_ij * S_ij with
    S = Z^T (A * K0) Z and Z the one-hot output indicator, which shrinks
    each of the m(m+1)/2 trace terms from N^2 to m^2 work.
    """

    def __init__(self, X, y, index, d, m):
        self.y = y
        self.index = index
        self.d, self.m = d, m
        self.N = X.shape[0]
        self.D2 = per_dimension_sqdist(X, X)
        self.IJ = np.ix_(index, index)
        self.Z = np.zeros((self.N, m))
        self.Z[np.arange(self.N), index] = 1.0
        self.eye = np.eye(self.N)

    def __call__(self, theta):
        d, m, N = self.d, self.m, self.N
        n_psi = m * (m + 1) // 2
        ls2 = np.exp(2.0 * theta[:d])
        psi = _unpack_psi(theta[d : d + n_psi], m)
        noise = np.exp(theta[d + n_psi :])

        K0 = np.exp(-0.5 * np.tensordot(1.0 / ls2, self.D2, axes=1))
        cov = psi @ psi.T
        C = cov[self.IJ] * K0
        C[np.diag_indices_from(C)] += noise[self.index]

        L, _ = chol_with_jitter(C)
        alpha = cho_solve((L, True), self.y, check_finite=False)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        value = 0.5 * self.y @ alpha + 0.5 * log_det + 0.5 * N * np.log(2.0 * np.pi)

        A = cho_solve((L, True), self.eye, check_finite=False) - np.outer(alpha, alpha)

        grad = np.empty(theta.size)
        T_signal = A * (cov[self.IJ] * K0)
        grad[:d] = 0.5 * np.tensordot(self.D2, T_signal, axes=([1, 2], [0, 1])) / ls2

        S = self.Z.T @ (A * K0) @ self.Z
        k = d
        for p in range(m):
            for q in range(p + 1):
                # d(psi psi^T)/d psi_pq = e_p psi_{:,q}^T + psi_{:,q} e_p^T
                dcov = np.zeros((m, m))
                dcov[p, :] += psi[:, q]
                dcov[:, p] += psi[:, q]
                if p == q:
                    dcov *= 0.5 * psi[p, p]  # diagonal lives in log-variance space
                grad[k] = 0.5 * np.sum(dcov * S)
                k += 1

        diag_sums = self.Z.T @ np.diag(A)
        grad[k:] = 0.5 * noise * diag_sums
        return float(value), grad


def _mogp_value_and_grad(theta, X, y, index, d, m):
    return _MOGPObjective(X, y, index, d, m)(theta)


class CoregionalizedGP(BaseEstimator):
    """Multi-output GP over subsets with one shared lengthscale vector.

    Outputs are coupled through a learned PSD output covariance; fitting
    jointly optimizes the shared lengthscales, the covariance factor and
    per-output noise by multi-start bounded NLML minimization.

    Parameters mirror :class:`~clbo.gp.SingleOutputGP` where they overlap.
    """

    #: bound applied to each raw off-diagonal factor entry
    FACTOR_BOUND = 10.0

    def __init__(
        self,
        lengthscale_bounds=LENGTHSCALE_BOUNDS,
        output_scale_bounds=SIGNAL_VARIANCE_BOUNDS,
        noise_variance_bounds=NOISE_VARIANCE_BOUNDS,
        n_restarts=10,
        max_opt_iter=100,
        optimize=True,
        initial_params=None,
        fixed_noise=None,
        normalize_y=True,
        random_state=None,
    ):
        self.lengthscale_bounds = lengthscale_bounds
        self.output_scale_bounds = output_scale_bounds
        self.noise_variance_bounds = noise_variance_bounds
        self.n_restarts = n_restarts
        self.max_opt_iter = max_opt_iter
        self.optimize = optimize
        self.initial_params = initial_params
        self.fixed_noise = fixed_noise
        self.normalize_y = normalize_y
        self.random_state = random_state

    # ------------------------------------------------------------------
    # fitting
    # ------------------------------------------------------------------

    def fit(self, X_list, y_list=None):
        """Fit on per-output subsets.

        Accepts either a :class:`SubsetCollection` or parallel lists of
        input matrices and output vectors. Duplicate rows within a subset
        are dropped (they would make the covariance singular).
        """
        if isinstance(X_list, SubsetCollection):
            subsets = X_list
        else:
            subsets = SubsetCollection(list(X_list), list(y_list))
        cleaned = SubsetCollection(
            *map(list, zip(*(dedupe_rows(X, y) for X, y in zip(subsets.X_list, subsets.y_list))))
        )
        if any(n < 1 for n in cleaned.sizes):
            raise ValueError("every subset needs at least one row")

        X, y, index = cleaned.stacked()
        if self.normalize_y:
            self.scaler_ = OutputScaler().fit(y)
            z = self.scaler_.transform(y)
        else:
            self.scaler_ = None
            z = y.copy()
        z_subsets = SubsetCollection(
            cleaned.X_list,
            [
                self.scaler_.transform(ys) if self.scaler_ else ys
                for ys in cleaned.y_list
            ],
        )

        d, m = X.shape[1], cleaned.n_outputs
        if self.optimize:
            if X.shape[0] < 2:
                raise ValueError("need at least 2 stacked rows to fit hyperparameters")
            params, value = self._optimize_nlml(X, z, index, d, m)
        else:
            params = self._explicit_starts()[0] if self._explicit_starts() else None
            if params is None:
                raise ValueError("optimize=False requires initial_params")
            value = mogp_nlml(z_subsets, params)

        self.subsets_ = cleaned
        self.X_ = X
        self.z_ = z
        self.index_ = index
        self.params_ = params
        self.nlml_ = value
        C = build_block_covariance(z_subsets, params)
        self.L_, self.jitter_ = chol_with_jitter(C, params)
        self.alpha_ = cho_solve((self.L_, True), z, check_finite=False)
        self.n_features_in_ = d
        return self

    def _explicit_starts(self):
        if self.initial_params is None:
            return []
        if isinstance(self.initial_params, MOGPParams):
            return [self.initial_params]
        return list(self.initial_params)

    def _search_bounds(self, d, m):
        bounds = [np.log(np.asarray(self.lengthscale_bounds))] * d
        lo, hi = self.output_scale_bounds
        for p in range(m):
            for q in range(p + 1):
                if p == q:
                    bounds.append(np.log(np.asarray([lo, hi])))
                else:
                    bounds.append(np.asarray([-self.FACTOR_BOUND, self.FACTOR_BOUND]))
        if self.fixed_noise is None:
            noise_b = np.log(np.asarray(self.noise_variance_bounds))
        else:
            pinned = np.log(max(self.fixed_noise, NOISE_FLOOR))
            noise_b = np.asarray([pinned, pinned])
        bounds.extend([noise_b] * m)
        return np.asarray(bounds)

    def _heuristic_start(self, X, d, m):
        spread = np.std(X, axis=0)
        ls = np.clip(np.where(spread > 0, spread, 0.2), *self.lengthscale_bounds)
        # identical-task prior: unit scales, mildly positive correlation
        corr = np.full((m, m), 0.3) + 0.7 * np.eye(m)
        noise = self.fixed_noise if self.fixed_noise is not None else 1e-6
        return MOGPParams(
            shared_lengthscales=ls,
            output_cov_factor=np.linalg.cholesky(corr),
            noise_variances=np.full(m, max(noise, NOISE_FLOOR)),
        )

    def _random_theta(self, rng, log_bounds, d, m):
        theta = rng.uniform(log_bounds[:, 0], log_bounds[:, 1])
        # resample off-diagonal factor entries near zero so random starts
        # stay well conditioned instead of maximally correlated
        k = d
        for p in range(m):
            for q in range(p + 1):
                if p != q:
                    theta[k] = rng.normal(0.0, 0.3)
                k += 1
        return theta

    def _optimize_nlml(self, X, z, index, d, m):
        rng = np.random.default_rng(self.random_state)
        log_bounds = self._search_bounds(d, m)

        starts = [_mogp_params_to_theta(p) for p in self._explicit_starts()]
        if len(starts) < self.n_restarts:
            starts.append(_mogp_params_to_theta(self._heuristic_start(X, d, m)))
        while len(starts) < self.n_restarts:
            starts.append(self._random_theta(rng, log_bounds, d, m))

        best_theta, best_value = _multistart_minimize(
            _MOGPObjective(X, z, index, d, m), starts, log_bounds, self.max_opt_iter
        )
        return _mogp_theta_to_params(best_theta, d, m), float(best_value)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def predict(self, X, output=None, return_std=False, return_var=False):
        """Posterior means (and spreads) in raw units.

        With ``output=j`` returns shape (n,) arrays for that output alone;
        otherwise shape (n, m) arrays covering every output.
        """
        check_is_fitted(self, "params_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        outputs = range(self.params_.n_outputs) if output is None else [output]

        means, variances = [], []
        k0 = se_cross(X, self.X_, self.params_.shared_lengthscales, 1.0)
        cov = self.params_.output_covariance
        for j in outputs:
            k_cross = k0 * cov[j, self.index_][None, :]
            mean = k_cross @ self.alpha_
            v = solve_triangular(self.L_, k_cross.T, lower=True, check_finite=False)
            var = cov[j, j] - np.sum(v**2, axis=0)
            var = np.maximum(var, 0.0) + self.params_.noise_variances[j]
            if self.scaler_ is not None:
                mean = self.scaler_.inverse_transform(mean)
                var = self.scaler_.inverse_transform_variance(var)
            means.append(mean)
            variances.append(var)

        mean = means[0] if output is not None else np.column_stack(means)
        var = variances[0] if output is not None else np.column_stack(variances)
        if return_std:
            return mean, np.sqrt(var)
        if return_var:
            return mean, var
        return mean

    @property
    def lengthscales_(self):
        check_is_fitted(self, "params_")
        return self.params_.shared_lengthscales

    @property
    def correlation_(self):
        check_is_fitted(self, "params_")
        return self.params_.correlation

    def output_view(self, j):
        """A single-output facade over output ``j`` (predict + lengthscales)."""
        check_is_fitted(self, "params_")
        return _OutputView(self, j)


class _OutputView:
    """Forward predict calls to one output of a fitted CoregionalizedGP."""

    def __init__(self, model, output):
        self.model = model
        self.output = output

    def predict(self, X, return_std=False, return_var=False):
        return self.model.predict(
            X, output=self.output, return_std=return_std, return_var=return_var
        )

    @property
    def lengthscales_(self):
        return self.model.params_.shared_lengthscales
