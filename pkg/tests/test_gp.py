import math

import numpy as np
import pytest

from clbo.exceptions import IllConditionedModelError
from clbo.gp import (
    GPParams,
    SingleOutputGP,
    chol_with_jitter,
    negative_log_marginal_likelihood,
    nlml_gradient,
    _nlml_value_and_grad,
    _params_to_theta,
)
from clbo.kernels import se_cross, se_gram

from conftest import make_dataset


def dense_posterior(X, z, params, jitter, Xq):
    """Explicit-inverse posterior oracle in standardized output space."""
    n = X.shape[0]
    C = se_gram(X, params.lengthscales, params.signal_variance)
    C = C + (params.noise_variance + jitter) * np.eye(n)
    Cinv = np.linalg.inv(C)
    ks = se_cross(Xq, X, params.lengthscales, params.signal_variance)
    mean = ks @ Cinv @ z
    var = params.signal_variance - np.sum((ks @ Cinv) * ks, axis=1)
    var = np.maximum(var, 0.0) + params.noise_variance
    return mean, var


class TestGPParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            GPParams(np.array([0.0]), 1.0, 1e-8)
        with pytest.raises(ValueError):
            GPParams(np.array([1.0]), -1.0, 1e-8)
        with pytest.raises(ValueError):
            GPParams(np.array([1.0]), 1.0, -1e-8)


class TestCholWithJitter:
    def test_no_jitter_on_well_conditioned(self, rng):
        X = rng.random((6, 2))
        C = se_gram(X, [0.5, 0.5], 1.0) + 1e-4 * np.eye(6)
        L, jitter = chol_with_jitter(C)
        assert jitter == 0.0
        assert np.max(np.abs(L @ L.T - C)) < 1e-8 * np.max(np.abs(C))

    def test_escalates_on_singular(self):
        # two identical rows, no noise: exactly singular
        C = np.ones((2, 2))
        L, jitter = chol_with_jitter(C)
        assert jitter > 0.0
        target = C + jitter * np.eye(2)
        assert np.max(np.abs(L @ L.T - target)) < 1e-8

    def test_raises_on_indefinite(self):
        C = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalue -1
        with pytest.raises(IllConditionedModelError):
            chol_with_jitter(C, params="marker")
        try:
            chol_with_jitter(C, params="marker")
        except IllConditionedModelError as exc:
            assert exc.params == "marker"


class TestNlml:
    def test_scalar_closed_form_zero_observation(self):
        # total variance 1, y = 0 -> 0.5 log(2 pi)
        params = GPParams(np.array([1.0]), 0.5, 0.5)
        val = negative_log_marginal_likelihood(np.array([[0.3]]), [0.0], params)
        assert val == pytest.approx(0.5 * math.log(2 * math.pi), rel=1e-12)

    def test_scalar_closed_form_general(self):
        v = 1.7
        y1 = 0.8
        params = GPParams(np.array([1.0]), 1.2, v - 1.2)
        expected = y1**2 / (2 * v) + 0.5 * math.log(v) + 0.5 * math.log(2 * math.pi)
        val = negative_log_marginal_likelihood(np.array([[0.1]]), [y1], params)
        assert val == pytest.approx(expected, rel=1e-12)

    def test_matches_dense_oracle(self, rng):
        X, y = make_dataset(rng, 6, 2)
        params = GPParams(np.array([0.4, 0.8]), 1.5, 1e-3)
        C = se_gram(X, params.lengthscales, params.signal_variance)
        C += params.noise_variance * np.eye(6)
        sign, logdet = np.linalg.slogdet(C)
        oracle = 0.5 * y @ np.linalg.solve(C, y) + 0.5 * logdet + 3 * math.log(2 * math.pi)
        val = negative_log_marginal_likelihood(X, y, params)
        assert val == pytest.approx(oracle, rel=1e-8)

    def test_gradient_matches_central_differences(self, rng):
        for _ in range(5):
            X, y = make_dataset(rng, 7, 2, noise=0.1)
            params = GPParams(
                rng.uniform(0.2, 1.5, 2), float(rng.uniform(0.5, 2.0)), 1e-3
            )
            grad = nlml_gradient(X, y, params)
            theta = _params_to_theta(params)
            step = 1e-5
            for k in range(theta.size):
                tp, tm = theta.copy(), theta.copy()
                tp[k] += step
                tm[k] -= step
                num = (
                    _nlml_value_and_grad(tp, X, y)[0]
                    - _nlml_value_and_grad(tm, X, y)[0]
                ) / (2 * step)
                assert grad[k] == pytest.approx(num, rel=1e-4, abs=1e-8)


class TestFit:
    def test_recovers_lengthscale_on_synthetic_draws(self):
        # data drawn from a GP with l = 0.2, sf2 = 1, sn2 = 1e-4
        true = GPParams(np.array([0.2]), 1.0, 1e-4)
        hits = 0
        for seed in range(10):
            r = np.random.default_rng(seed)
            X = r.random((40, 1))
            C = se_gram(X, true.lengthscales, true.signal_variance)
            C += true.noise_variance * np.eye(40)
            y = np.linalg.cholesky(C) @ r.standard_normal(40)
            model = SingleOutputGP(n_restarts=5, random_state=seed).fit(X, y)
            err = abs(math.log(model.params_.lengthscales[0]) - math.log(0.2))
            hits += err <= 0.5
        assert hits >= 8

    def test_constant_outputs(self, rng):
        X = rng.random((10, 2))
        y = np.full(10, 4.2)
        model = SingleOutputGP(n_restarts=3, random_state=0).fit(X, y)
        mean = model.predict(rng.random((15, 2)))
        assert np.allclose(mean, 4.2, atol=1e-6)

    def test_returned_nlml_not_worse_than_any_start(self, rng):
        X, y = make_dataset(rng, 12, 2, noise=0.05)
        scaler_y = (y - y.mean()) / y.std()
        starts = [
            GPParams(np.array([0.3, 0.3]), 1.0, 1e-4),
            GPParams(np.array([2.0, 0.1]), 0.2, 1e-2),
        ]
        model = SingleOutputGP(
            initial_params=starts, n_restarts=len(starts), random_state=0
        ).fit(X, y)
        for p in starts:
            assert model.nlml_ <= negative_log_marginal_likelihood(X, scaler_y, p) + 1e-9

    def test_dedupes_before_fitting(self, rng):
        X, y = make_dataset(rng, 8, 2)
        X_dup = np.vstack([X, X[:3]])
        y_dup = np.concatenate([y, y[:3]])
        model = SingleOutputGP(n_restarts=2, random_state=0).fit(X_dup, y_dup)
        assert model.X_.shape[0] == 8

    def test_needs_two_distinct_rows(self):
        with pytest.raises(ValueError):
            SingleOutputGP().fit(np.array([[0.5], [0.5]]), [1.0, 1.0])


class TestPredict:
    def test_interpolates_training_points_at_tiny_noise(self, rng):
        X, y = make_dataset(rng, 9, 2)
        params = GPParams(np.array([0.5, 0.5]), 1.0, 1e-12)
        model = SingleOutputGP(
            optimize=False, initial_params=params, normalize_y=False
        ).fit(X, y)
        mean, var = model.predict(X, return_var=True)
        assert np.max(np.abs(mean - y)) < 1e-5
        assert np.max(np.abs(var - 1e-12)) < 1e-5

    def test_reverts_to_prior_far_away(self, rng):
        X = 0.01 * rng.random((6, 2))
        y = rng.standard_normal(6)
        params = GPParams(np.array([0.01, 0.01]), 2.0, 1e-6)
        model = SingleOutputGP(
            optimize=False, initial_params=params, normalize_y=False
        ).fit(X, y)
        far = np.array([[0.9, 0.9]])  # ~90 lengthscales away
        mean, var = model.predict(far, return_var=True)
        assert abs(mean[0]) < 1e-12
        assert var[0] == pytest.approx(2.0 + 1e-6, rel=1e-12)

    def test_matches_dense_inverse_oracle(self, rng):
        X, y = make_dataset(rng, 8, 2, noise=0.05)
        model = SingleOutputGP(n_restarts=3, random_state=1).fit(X, y)
        Xq = rng.random((20, 2))
        mean, var = model.predict(Xq, return_var=True)
        mo, vo = dense_posterior(model.X_, model.z_, model.params_, model.jitter_, Xq)
        mo = model.scaler_.inverse_transform(mo)
        vo = model.scaler_.inverse_transform_variance(vo)
        assert np.allclose(mean, mo, rtol=1e-8, atol=1e-10)
        assert np.allclose(var, vo, rtol=1e-8, atol=1e-10)

    def test_variance_bounded_by_prior(self, rng):
        X, y = make_dataset(rng, 10, 3)
        model = SingleOutputGP(n_restarts=3, random_state=2).fit(X, y)
        Xq = rng.random((50, 3))
        _, var = model._predict_internal(Xq)
        p = model.params_
        assert np.all(var >= 0.0)
        assert np.all(var <= p.signal_variance + p.noise_variance + 1e-9)

    def test_adding_data_never_increases_variance(self, rng):
        X, y = make_dataset(rng, 10, 2)
        params = GPParams(np.array([0.4, 0.4]), 1.0, 1e-6)
        base = SingleOutputGP(
            optimize=False, initial_params=params, normalize_y=False
        ).fit(X, y)
        x_new = rng.random((1, 2))
        grown = SingleOutputGP(
            optimize=False, initial_params=params, normalize_y=False
        ).fit(np.vstack([X, x_new]), np.append(y, 0.3))
        Xq = rng.random((30, 2))
        _, v0 = base.predict(Xq, return_var=True)
        _, v1 = grown.predict(Xq, return_var=True)
        assert np.all(v1 <= v0 + 1e-7)

    def test_destandardization_round_trip(self, rng):
        X, y = make_dataset(rng, 10, 2)
        y = 50.0 * y + 300.0
        model = SingleOutputGP(n_restarts=2, random_state=3).fit(X, y)
        Xq = rng.random((5, 2))
        raw = model.predict(Xq)
        internal, _ = model._predict_internal(Xq)
        again = model.scaler_.transform(raw)
        assert np.allclose(again, internal, rtol=1e-12, atol=1e-12)


class TestConditionedOn:
    def test_keeps_hyperparameters_and_absorbs_lies(self, rng):
        X, y = make_dataset(rng, 12, 2)
        model = SingleOutputGP(n_restarts=3, random_state=4).fit(X, y)
        x_lie = np.array([[0.22, 0.71]])
        lie = float(y.min())
        lied = model.conditioned_on(x_lie, [lie])
        assert lied.params_ is model.params_
        mean0, var0 = model.predict(x_lie, return_var=True)
        mean, var = lied.predict(x_lie, return_var=True)
        # the lie pulls the posterior toward it and removes most uncertainty
        assert abs(mean[0] - lie) < 0.1 * abs(mean0[0] - lie)
        assert var[0] < var0[0]
