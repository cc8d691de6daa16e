import math

import numpy as np
import pytest

from clbo.gp import GPParams, SingleOutputGP, negative_log_marginal_likelihood
from clbo.kernels import se_kernel
from clbo.mogp import (
    CoregionalizedGP,
    MOGPParams,
    SubsetCollection,
    bootstrap_subsets,
    build_block_covariance,
    mogp_nlml,
    mogp_nlml_gradient,
    row_in,
    _mogp_params_to_theta,
    _mogp_value_and_grad,
)

from conftest import make_dataset


def two_subset_instance(rng, n1=5, n2=6, d=2):
    X1, y1 = make_dataset(rng, n1, d)
    X2, y2 = make_dataset(rng, n2, d)
    return SubsetCollection([X1, X2], [y1, y2])


def random_mogp_params(rng, d, m):
    psi = np.tril(rng.normal(0.0, 0.4, (m, m)))
    psi[np.diag_indices(m)] = rng.uniform(0.5, 1.5, m)
    return MOGPParams(
        shared_lengthscales=rng.uniform(0.2, 1.2, d),
        output_cov_factor=psi,
        noise_variances=rng.uniform(1e-4, 1e-2, m),
    )


class TestBootstrap:
    def test_single_row_master(self, rng):
        X = np.array([[0.3, 0.4]])
        y = np.array([1.0])
        subsets = bootstrap_subsets(X, y, 4, rng)
        assert subsets.n_outputs == 4
        for Xs, ys in zip(subsets.X_list, subsets.y_list):
            assert np.array_equal(Xs, X)
            assert np.array_equal(ys, y)

    def test_rows_unique_and_from_master(self, rng):
        X, y = make_dataset(rng, 25, 3)
        subsets = bootstrap_subsets(X, y, 5, rng)
        for Xs, ys in zip(subsets.X_list, subsets.y_list):
            assert len(np.unique(Xs, axis=0)) == len(Xs)
            for row, val in zip(Xs, ys):
                matches = np.all(X == row, axis=1)
                assert matches.any()
                assert val == y[np.argmax(matches)]

    def test_minimum_size_guard(self):
        # master of two identical-ish rows: subsets still end up with >= 2
        X = np.array([[0.1, 0.1], [0.9, 0.9], [0.5, 0.5]])
        y = np.array([1.0, 2.0, 3.0])
        for seed in range(20):
            subsets = bootstrap_subsets(X, y, 3, np.random.default_rng(seed))
            assert all(n >= 2 for n in subsets.sizes)

    def test_mean_unique_fraction_matches_theory(self):
        # fraction of distinct rows in an n-of-n bootstrap: 1 - (1 - 1/n)^n
        n, reps = 100, 10_000
        rng = np.random.default_rng(99)
        total = 0
        for _ in range(reps):
            total += np.unique(rng.integers(0, n, n)).size
        observed = total / (reps * n)
        expected = 1.0 - (1.0 - 1.0 / n) ** n
        assert observed == pytest.approx(expected, abs=0.02)

    def test_collection_add_skips_duplicates(self, rng):
        X, y = make_dataset(rng, 5, 2)
        subsets = SubsetCollection([X], [y])
        assert not subsets.add(0, X[2], y[2])
        assert subsets.add(0, np.array([0.99, 0.98]), 7.0)
        assert subsets.sizes == [6]

    def test_row_in(self):
        X = np.array([[0.1, 0.2], [0.3, 0.4]])
        assert row_in(X, [0.3, 0.4])
        assert not row_in(X, [0.3, 0.40000001])


class TestBlockCovariance:
    def test_m1_reduces_to_single_output_gram(self, rng):
        X, y = make_dataset(rng, 6, 2)
        subsets = SubsetCollection([X], [y])
        sf2 = 1.7
        params = MOGPParams(
            np.array([0.4, 0.9]), np.array([[math.sqrt(sf2)]]), np.array([1e-3])
        )
        from clbo.kernels import se_gram

        C = build_block_covariance(subsets, params)
        oracle = se_gram(X, params.shared_lengthscales, sf2) + 1e-3 * np.eye(6)
        assert np.allclose(C, oracle, rtol=1e-14, atol=1e-15)

    def test_zero_cross_correlation_is_block_diagonal(self, rng):
        subsets = two_subset_instance(rng)
        params = MOGPParams(
            np.array([0.5, 0.5]),
            np.diag([1.1, 0.7]),
            np.array([1e-3, 1e-3]),
        )
        C = build_block_covariance(subsets, params)
        n1 = subsets.sizes[0]
        assert np.all(C[:n1, n1:] == 0.0)
        assert np.all(C[n1:, :n1] == 0.0)

    def test_matches_elementwise_oracle(self, rng):
        X1, y1 = make_dataset(rng, 3, 2)
        X2, y2 = make_dataset(rng, 2, 2)
        subsets = SubsetCollection([X1, X2], [y1, y2])
        params = random_mogp_params(rng, 2, 2)
        C = build_block_covariance(subsets, params)
        cov = params.output_covariance
        Xs = [X1, X2]
        offsets = [0, 3]
        for i in range(2):
            for j in range(2):
                for a in range(len(Xs[i])):
                    for b in range(len(Xs[j])):
                        expected = cov[i, j] * se_kernel(
                            Xs[i][a], Xs[j][b], params.shared_lengthscales, 1.0
                        )
                        if i == j and a == b:
                            expected += params.noise_variances[i]
                        assert C[offsets[i] + a, offsets[j] + b] == pytest.approx(
                            expected, rel=1e-15, abs=1e-300
                        )

    def test_symmetry(self, rng):
        subsets = two_subset_instance(rng)
        C = build_block_covariance(subsets, random_mogp_params(rng, 2, 2))
        assert np.array_equal(C, C.T)


class TestMogpNlml:
    def test_m1_equals_single_output(self, rng):
        X, y = make_dataset(rng, 7, 2)
        subsets = SubsetCollection([X], [y])
        sf2 = 1.3
        mp = MOGPParams(
            np.array([0.5, 0.7]), np.array([[math.sqrt(sf2)]]), np.array([1e-4])
        )
        sp = GPParams(np.array([0.5, 0.7]), sf2, 1e-4)
        assert mogp_nlml(subsets, mp) == pytest.approx(
            negative_log_marginal_likelihood(X, y, sp), abs=1e-10
        )

    def test_decoupled_equals_sum_of_single_output_nlmls(self, rng):
        subsets = two_subset_instance(rng)
        ls = np.array([0.5, 0.8])
        scales = np.array([1.2, 0.6])
        noises = np.array([1e-3, 4e-3])
        mp = MOGPParams(ls, np.diag(np.sqrt(scales)), noises)
        total = mogp_nlml(subsets, mp)
        parts = sum(
            negative_log_marginal_likelihood(
                X_i, y_i, GPParams(ls, scales[i], noises[i])
            )
            for i, (X_i, y_i) in enumerate(zip(subsets.X_list, subsets.y_list))
        )
        assert total == pytest.approx(parts, rel=1e-8)

    def test_matches_dense_oracle(self, rng):
        subsets = two_subset_instance(rng)
        params = random_mogp_params(rng, 2, 2)
        C = build_block_covariance(subsets, params)
        _, y, _ = subsets.stacked()
        sign, logdet = np.linalg.slogdet(C)
        oracle = (
            0.5 * y @ np.linalg.solve(C, y)
            + 0.5 * logdet
            + 0.5 * y.size * math.log(2 * math.pi)
        )
        assert mogp_nlml(subsets, params) == pytest.approx(oracle, rel=1e-8)

    def test_gradient_matches_central_differences(self, rng):
        for _ in range(5):
            subsets = two_subset_instance(rng)
            params = random_mogp_params(rng, 2, 2)
            grad = mogp_nlml_gradient(subsets, params)
            X, y, index = subsets.stacked()
            theta = _mogp_params_to_theta(params)
            step = 1e-5
            for k in range(theta.size):
                tp, tm = theta.copy(), theta.copy()
                tp[k] += step
                tm[k] -= step
                num = (
                    _mogp_value_and_grad(tp, X, y, index, 2, 2)[0]
                    - _mogp_value_and_grad(tm, X, y, index, 2, 2)[0]
                ) / (2 * step)
                assert grad[k] == pytest.approx(num, rel=1e-4, abs=1e-8)


class TestMOGPParams:
    def test_output_covariance_is_psd_with_unit_diag_correlation(self, rng):
        for _ in range(10):
            params = random_mogp_params(rng, 2, 3)
            cov = params.output_covariance
            eigs = np.linalg.eigvalsh(cov)
            assert np.all(eigs >= -1e-12)
            corr = params.correlation
            assert np.allclose(np.diag(corr), 1.0)
            assert np.all(np.abs(corr) <= 1.0 + 1e-12)

    def test_single_lengthscale_vector_shared_structurally(self, rng):
        params = random_mogp_params(rng, 3, 2)
        assert params.shared_lengthscales.shape == (3,)

    def test_validation(self):
        with pytest.raises(ValueError):
            MOGPParams(np.array([1.0]), np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([1e-3, 1e-3]))
        with pytest.raises(ValueError):
            MOGPParams(np.array([1.0]), np.array([[-1.0]]), np.array([1e-3]))


class TestPredict:
    def test_m1_identical_to_single_output(self, rng):
        X, y = make_dataset(rng, 8, 2)
        subsets = SubsetCollection([X], [y])
        sf2 = 1.4
        mp = MOGPParams(np.array([0.4, 0.6]), np.array([[math.sqrt(sf2)]]), np.array([1e-4]))
        sp = GPParams(np.array([0.4, 0.6]), sf2, 1e-4)
        mogp = CoregionalizedGP(optimize=False, initial_params=mp, normalize_y=False).fit(subsets)
        sogp = SingleOutputGP(optimize=False, initial_params=sp, normalize_y=False).fit(X, y)
        Xq = rng.random((20, 2))
        m1, v1 = mogp.predict(Xq, output=0, return_var=True)
        m2, v2 = sogp.predict(Xq, return_var=True)
        assert np.allclose(m1, m2, atol=1e-10)
        assert np.allclose(v1, v2, atol=1e-10)

    def test_decoupled_outputs_match_independent_gps(self, rng):
        subsets = two_subset_instance(rng)
        ls = np.array([0.5, 0.7])
        scales = np.array([1.3, 0.8])
        noises = np.array([1e-3, 2e-3])
        mp = MOGPParams(ls, np.diag(np.sqrt(scales)), noises)
        mogp = CoregionalizedGP(optimize=False, initial_params=mp, normalize_y=False).fit(subsets)
        Xq = rng.random((20, 2))
        mu, var = mogp.predict(Xq, return_var=True)
        for j in range(2):
            sp = GPParams(ls, scales[j], noises[j])
            sogp = SingleOutputGP(optimize=False, initial_params=sp, normalize_y=False).fit(
                subsets.X_list[j], subsets.y_list[j]
            )
            mj, vj = sogp.predict(Xq, return_var=True)
            assert np.allclose(mu[:, j], mj, atol=1e-8)
            assert np.allclose(var[:, j], vj, atol=1e-8)

    def test_identical_subsets_full_correlation_give_equal_means(self, rng):
        X, y = make_dataset(rng, 7, 2)
        subsets = SubsetCollection([X, X], [y, y])
        # correlation 1 up to the PSD parameterization's tiny diagonal slack
        psi = np.array([[1.0, 0.0], [1.0 - 1e-9, math.sqrt(2e-9)]])
        mp = MOGPParams(np.array([0.5, 0.5]), psi, np.array([1e-6, 1e-6]))
        mogp = CoregionalizedGP(optimize=False, initial_params=mp, normalize_y=False).fit(subsets)
        Xq = rng.random((20, 2))
        mu = mogp.predict(Xq)
        assert np.allclose(mu[:, 0], mu[:, 1], atol=1e-8)

    def test_variance_bounds_per_output(self, rng):
        subsets = two_subset_instance(rng)
        params = random_mogp_params(rng, 2, 2)
        mogp = CoregionalizedGP(optimize=False, initial_params=params, normalize_y=False).fit(subsets)
        Xq = rng.random((50, 2))
        _, var = mogp.predict(Xq, return_var=True)
        cov = params.output_covariance
        for j in range(2):
            upper = cov[j, j] + params.noise_variances[j] + 1e-9
            assert np.all(var[:, j] >= 0.0)
            assert np.all(var[:, j] <= upper)


class TestFit:
    def test_identical_subsets_recover_high_correlation(self):
        hits = 0
        for seed in range(10):
            r = np.random.default_rng(seed)
            X = r.random((15, 1))
            y = np.sin(5.0 * X[:, 0])
            subsets = SubsetCollection([X, X], [y, y])
            model = CoregionalizedGP(n_restarts=4, random_state=seed).fit(subsets)
            hits += model.correlation_[0, 1] > 0.9
        assert hits >= 8

    def test_m1_fit_matches_single_output_fit_from_same_starts(self, rng):
        X, y = make_dataset(rng, 20, 1, noise=0.02)
        starts_single = [
            GPParams(np.array([0.3]), 1.0, 1e-4),
            GPParams(np.array([1.0]), 0.5, 1e-3),
        ]
        starts_multi = [
            MOGPParams(p.lengthscales, np.array([[math.sqrt(p.signal_variance)]]),
                       np.array([p.noise_variance]))
            for p in starts_single
        ]
        sogp = SingleOutputGP(
            initial_params=starts_single, n_restarts=2, random_state=0
        ).fit(X, y)
        mogp = CoregionalizedGP(
            initial_params=starts_multi, n_restarts=2, random_state=0
        ).fit(SubsetCollection([X], [y]))
        Xq = rng.random((20, 1))
        assert np.allclose(mogp.predict(Xq, output=0), sogp.predict(Xq), atol=1e-3)

    def test_constant_outputs(self, rng):
        X1, X2 = rng.random((6, 2)), rng.random((7, 2))
        subsets = SubsetCollection([X1, X2], [np.full(6, 2.0), np.full(7, 2.0)])
        model = CoregionalizedGP(n_restarts=2, random_state=1).fit(subsets)
        mu = model.predict(rng.random((10, 2)))
        assert np.allclose(mu, 2.0, atol=1e-6)

    def test_perturbing_shared_lengthscales_changes_every_output(self, rng):
        subsets = two_subset_instance(rng)
        params = random_mogp_params(rng, 2, 2)
        base = CoregionalizedGP(optimize=False, initial_params=params, normalize_y=False).fit(subsets)
        bumped_params = MOGPParams(
            params.shared_lengthscales * 1.5,
            params.output_cov_factor,
            params.noise_variances,
        )
        bumped = CoregionalizedGP(optimize=False, initial_params=bumped_params, normalize_y=False).fit(subsets)
        Xq = rng.random((10, 2))
        mu0 = base.predict(Xq)
        mu1 = bumped.predict(Xq)
        for j in range(2):
            assert not np.allclose(mu0[:, j], mu1[:, j], atol=1e-12)

    def test_returned_nlml_not_worse_than_starts(self, rng):
        subsets = two_subset_instance(rng, n1=8, n2=9)
        starts = [random_mogp_params(rng, 2, 2) for _ in range(3)]
        model = CoregionalizedGP(
            initial_params=starts, n_restarts=3, normalize_y=False, random_state=0
        ).fit(subsets)
        for p in starts:
            assert model.nlml_ <= mogp_nlml(subsets, p) + 1e-9

    def test_dedupes_within_subsets(self, rng):
        X, y = make_dataset(rng, 6, 2)
        dup_X = np.vstack([X, X[:2]])
        dup_y = np.concatenate([y, y[:2]])
        model = CoregionalizedGP(n_restarts=2, random_state=0).fit([dup_X, X], [dup_y, y])
        assert model.subsets_.sizes == [6, 6]
