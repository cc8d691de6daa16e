"""Single-output Gaussian-process regression with an SE kernel.

Hyperparameters are tuned by multi-start bounded minimization of the
negative log marginal likelihood in log space, with analytic gradients.
Predictions come from a cached Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import IllConditionedModelError
from .kernels import per_dimension_sqdist, se_cross, se_gram
from .preprocessing import OutputScaler, check_lengths_match, dedupe_rows

#: jitter escalation schedule applied when a factorization fails
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

#: smallest noise variance allowed during hyperparameter search
NOISE_FLOOR = 1e-8

LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-4, 1e2)
NOISE_VARIANCE_BOUNDS = (NOISE_FLOOR, 1.0)


@dataclass(frozen=True)
class GPParams:
    """SE-kernel hyperparameters of a single-output GP."""

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).ravel()
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self):
        return self.lengthscales.size


def chol_with_jitter(C, params=None):
    """Cholesky factor of ``C`` with escalating diagonal jitter.

    Returns ``(L, jitter)`` where ``L @ L.T == C + jitter * I``. Raises
    :class:`IllConditionedModelError` when the whole ladder fails.
    """
    n = C.shape[0]
    for jitter in JITTER_LADDER:
        try:
            L = cholesky(C + jitter * np.eye(n), lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedModelError(
        f"covariance matrix of size {n} is not positive definite even with "
        f"jitter {JITTER_LADDER[-1]:g}",
        params=params,
    )


def negative_log_marginal_likelihood(X, y, params):
    """NLML of ``y`` under a zero-mean GP with the given hyperparameters.

    0.5 * y^T (K + s_n^2 I)^-1 y + 0.5 * log det(K + s_n^2 I)
    + (n / 2) * log(2 pi), evaluated through a Cholesky factorization.
    """
    X, y = check_lengths_match(X, y)
    K = se_gram(X, params.lengthscales, params.signal_variance)
    C = K + params.noise_variance * np.eye(X.shape[0])
    L, _ = chol_with_jitter(C, params)
    alpha = cho_solve((L, True), y, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    n = y.size
    return float(0.5 * y @ alpha + 0.5 * log_det + 0.5 * n * np.log(2.0 * np.pi))


def nlml_gradient(X, y, params):
    """Analytic NLML gradient in log-hyperparameter space.

    Returns the gradient with respect to
    ``[log l_1, ..., log l_d, log signal_variance, log noise_variance]``.
    """
    X, y = check_lengths_match(X, y)
    theta = _params_to_theta(params)
    _, grad = _nlml_value_and_grad(theta, X, y)
    return grad


def _params_to_theta(params):
    return np.concatenate(
        [
            np.log(params.lengthscales),
            [np.log(params.signal_variance), np.log(params.noise_variance)],
        ]
    )


def _theta_to_params(theta, d):
    return GPParams(
        lengthscales=np.exp(theta[:d]),
        signal_variance=float(np.exp(theta[d])),
        noise_variance=float(np.exp(theta[d + 1])),
    )


class _NLMLObjective:
    """NLML value and gradient with the pairwise distances precomputed.

    The hyperparameter search evaluates this thousands of times on fixed
    data, so everything that depends only on X is built once.
    """

    def __init__(self, X, y):
        self.y = y
        self.n, self.d = X.shape
        self.D2 = per_dimension_sqdist(X, X)
        self.eye = np.eye(self.n)

    def __call__(self, theta):
        d = self.d
        ls2 = np.exp(2.0 * theta[:d])
        sf2 = np.exp(theta[d])
        sn2 = np.exp(theta[d + 1])

        K0 = np.exp(-0.5 * np.tensordot(1.0 / ls2, self.D2, axes=1))
        C = sf2 * K0 + sn2 * self.eye
        L, _ = chol_with_jitter(C)
        alpha = cho_solve((L, True), self.y, check_finite=False)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        value = (
            0.5 * self.y @ alpha
            + 0.5 * log_det
            + 0.5 * self.n * np.log(2.0 * np.pi)
        )

        # d NLML / d theta_k = 0.5 * tr((C^-1 - alpha alpha^T) dC/dtheta_k);
        # every dC/dtheta is symmetric, so each trace is an elementwise sum.
        A = cho_solve((L, True), self.eye, check_finite=False) - np.outer(alpha, alpha)
        T = A * (sf2 * K0)
        grad = np.empty(d + 2)
        grad[:d] = 0.5 * np.tensordot(self.D2, T, axes=([1, 2], [0, 1])) / ls2
        grad[d] = 0.5 * np.sum(T)
        grad[d + 1] = 0.5 * sn2 * np.trace(A)
        return float(value), grad


def _nlml_value_and_grad(theta, X, y):
    return _NLMLObjective(X, y)(theta)


def _multistart_minimize(objective, starts, log_bounds, max_iter):
    """Bounded L-BFGS-B from every start; best of all starts and polishes.

    The returned value can never exceed the objective at any start. Starts
    whose objective cannot even be evaluated are skipped; if that happens
    to all of them an :class:`IllConditionedModelError` propagates.
    """

    def guarded(theta):
        try:
            return objective(theta)
        except IllConditionedModelError:
            return 1e25, np.zeros_like(theta)

    best_theta, best_value = None, np.inf
    last_failure = None
    for theta0 in starts:
        theta0 = np.clip(theta0, log_bounds[:, 0], log_bounds[:, 1])
        try:
            start_value, _ = objective(theta0)
        except IllConditionedModelError as exc:
            last_failure = exc
            continue
        res = minimize(
            guarded,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=log_bounds,
            options={"maxiter": max_iter, "ftol": 1e-8},
        )
        value, theta = res.fun, res.x
        if not np.isfinite(value) or start_value < value:
            value, theta = start_value, theta0
        if value < best_value:
            best_value, best_theta = value, theta
    if best_theta is None:
        raise IllConditionedModelError(
            "every hyperparameter start failed to factorize",
            params=last_failure.params if last_failure else None,
        )
    return best_theta, best_value


class SingleOutputGP(BaseEstimator, RegressorMixin):
    """GP regressor over the unit hypercube with internal output scaling.

    Parameters
    ----------
    lengthscale_bounds, signal_variance_bounds, noise_variance_bounds :
        Box constraints for the hyperparameter search (raw, not log, scale).
    n_restarts : int
        Number of multi-start local searches on the NLML.
    optimize : bool
        When False, ``initial_params`` is used verbatim and no search runs.
    initial_params : GPParams or list of GPParams, optional
        Explicit start points; they replace the leading random starts.
    fixed_noise : float, optional
        Pin the noise variance to this value instead of learning it.
    normalize_y : bool
        Standardize outputs to zero mean / unit variance before fitting and
        undo the transform on prediction.
    random_state : int, Generator or None
        Source of randomness for the search starts.
    """

    def __init__(
        self,
        lengthscale_bounds=LENGTHSCALE_BOUNDS,
        signal_variance_bounds=SIGNAL_VARIANCE_BOUNDS,
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
        self.signal_variance_bounds = signal_variance_bounds
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

    def fit(self, X, y):
        X, y = check_lengths_match(X, y)
        X, y = dedupe_rows(X, y)
        n, d = X.shape

        if self.normalize_y:
            self.scaler_ = OutputScaler().fit(y)
        else:
            self.scaler_ = None
        z = self.scaler_.transform(y) if self.scaler_ else y.copy()

        if self.optimize:
            if n < 2:
                raise ValueError("need at least 2 distinct rows to fit hyperparameters")
            params, value = self._optimize_nlml(X, z, d)
        else:
            params = self._explicit_start()
            if params is None:
                raise ValueError("optimize=False requires initial_params")
            value = negative_log_marginal_likelihood(X, z, params)

        self.X_ = X
        self.z_ = z
        self.params_ = params
        self.nlml_ = value
        C = se_gram(X, params.lengthscales, params.signal_variance)
        C += params.noise_variance * np.eye(n)
        self.L_, self.jitter_ = chol_with_jitter(C, params)
        self.alpha_ = cho_solve((self.L_, True), z, check_finite=False)
        self.n_features_in_ = d
        return self

    def _explicit_start(self):
        if self.initial_params is None:
            return None
        if isinstance(self.initial_params, GPParams):
            return self.initial_params
        return self.initial_params[0]

    def _explicit_starts(self):
        if self.initial_params is None:
            return []
        if isinstance(self.initial_params, GPParams):
            return [self.initial_params]
        return list(self.initial_params)

    def _search_bounds(self, d):
        lb = [self.lengthscale_bounds] * d + [self.signal_variance_bounds]
        if self.fixed_noise is None:
            lb.append(self.noise_variance_bounds)
        else:
            pinned = max(self.fixed_noise, NOISE_FLOOR)
            lb.append((pinned, pinned))
        return np.log(np.asarray(lb, dtype=float))

    def _heuristic_start(self, X, d):
        spread = np.std(X, axis=0)
        ls = np.clip(np.where(spread > 0, spread, 0.2), *self.lengthscale_bounds)
        noise = self.fixed_noise if self.fixed_noise is not None else 1e-6
        return GPParams(ls, 1.0, max(noise, NOISE_FLOOR))

    def _optimize_nlml(self, X, z, d):
        rng = np.random.default_rng(self.random_state)
        log_bounds = self._search_bounds(d)

        starts = [_params_to_theta(p) for p in self._explicit_starts()]
        if len(starts) < self.n_restarts:
            starts.append(_params_to_theta(self._heuristic_start(X, d)))
        while len(starts) < self.n_restarts:
            starts.append(rng.uniform(log_bounds[:, 0], log_bounds[:, 1]))

        best_theta, best_value = _multistart_minimize(
            _NLMLObjective(X, z), starts, log_bounds, self.max_opt_iter
        )
        return _theta_to_params(best_theta, d), float(best_value)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def predict(self, X, return_std=False, return_var=False):
        """Posterior mean (and optionally std or variance) in raw units."""
        check_is_fitted(self, "params_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean, var = self._predict_internal(X)
        if self.scaler_ is not None:
            mean = self.scaler_.inverse_transform(mean)
            var = self.scaler_.inverse_transform_variance(var)
        if return_std:
            return mean, np.sqrt(var)
        if return_var:
            return mean, var
        return mean

    def _predict_internal(self, X):
        """Mean and variance in the standardized output space."""
        p = self.params_
        k_star = se_cross(X, self.X_, p.lengthscales, p.signal_variance)
        mean = k_star @ self.alpha_
        v = solve_triangular(self.L_, k_star.T, lower=True, check_finite=False)
        var = p.signal_variance - np.sum(v**2, axis=0)
        var = np.maximum(var, 0.0) + p.noise_variance
        return mean, var

    @property
    def lengthscales_(self):
        check_is_fitted(self, "params_")
        return self.params_.lengthscales

    def conditioned_on(self, X_extra, y_extra):
        """A new model with extra observations and unchanged hyperparameters.

        Used by batch strategies that pencil in fake observations; the
        hyperparameter search is not rerun.
        """
        check_is_fitted(self, "params_")
        X_extra, y_extra = check_lengths_match(X_extra, y_extra)
        z_extra = (
            self.scaler_.transform(y_extra) if self.scaler_ is not None else y_extra
        )
        X_all = np.vstack([self.X_, X_extra])
        z_all = np.concatenate([self.z_, z_extra])
        X_all, z_all = dedupe_rows(X_all, z_all)

        clone = SingleOutputGP(
            optimize=False,
            initial_params=self.params_,
            normalize_y=False,
        )
        clone.fit(X_all, z_all)
        clone.scaler_ = self.scaler_
        return clone
