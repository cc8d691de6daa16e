import math

import numpy as np
import pytest

from clbo.benchmarks import (
    BRANIN_MIN,
    HARTMAN6_ARGMIN,
    HARTMAN6_MIN,
    MICHALEWICZ2_ARGMIN,
    MICHALEWICZ2_MIN,
    TRID10_MIN,
    ackley,
    branin,
    desk_scale_suite,
    get_problem,
    hartman6,
    list_problems,
    michalewicz,
    rastrigin,
    trid,
)
from clbo.exceptions import EvaluationFailure
from clbo.preprocessing import BoxTransform


class TestMichalewicz:
    def test_zero_at_origin(self):
        assert michalewicz(np.zeros((1, 5)))[0] == 0.0

    def test_2d_reference_point(self):
        # near-minimizer from the refinement search
        val = michalewicz(np.array([[2.20, 1.57]]))[0]
        assert val == pytest.approx(-1.8011, abs=2e-3)
        assert michalewicz(MICHALEWICZ2_ARGMIN[None, :])[0] == pytest.approx(
            MICHALEWICZ2_MIN, abs=1e-9
        )

    def test_5d_reference_minimum_is_attained(self):
        prob = get_problem("michalewicz5")
        assert prob.known_optimum == pytest.approx(-4.6877, abs=1e-3)


class TestRastrigin:
    def test_global_minimum_at_origin(self):
        assert rastrigin(np.zeros((1, 5)))[0] == 0.0

    def test_unit_offset(self):
        # cos(2 pi) = 1: first term contributes 1 - 10 + 10 = 1
        val = rastrigin(np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]))[0]
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_nonnegative_spot_check(self, rng):
        X = rng.uniform(-5.12, 5.12, size=(1000, 5))
        assert np.all(rastrigin(X) >= 0.0)


class TestAckley:
    def test_zero_at_origin(self):
        assert abs(ackley(np.zeros((1, 5)))[0]) < 1e-12

    def test_scalar_oracle(self):
        x = np.ones(5)
        a, b, c = 20.0, 0.2, 2 * math.pi
        expected = (
            -a * math.exp(-b * math.sqrt(np.sum(x**2) / 5))
            - math.exp(np.sum(np.cos(c * x)) / 5)
            + a
            + math.e
        )
        assert ackley(x[None, :])[0] == pytest.approx(expected, rel=1e-12)

    def test_nonnegative_spot_check(self, rng):
        X = rng.uniform(-2, 2, size=(1000, 5))
        assert np.all(ackley(X) >= 0.0)


class TestHartman6:
    def test_canonical_minimizer_value(self):
        x = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
        assert hartman6(x[None, :])[0] == pytest.approx(-3.32237, abs=1e-4)
        assert hartman6(HARTMAN6_ARGMIN[None, :])[0] == pytest.approx(
            HARTMAN6_MIN, abs=1e-9
        )

    def test_origin_matches_scalar_oracle(self):
        alpha = [1.0, 1.2, 3.0, 3.2]
        A = [
            [10, 3, 17, 3.5, 1.7, 8],
            [0.05, 10, 17, 0.1, 8, 14],
            [3, 3.5, 1.7, 10, 17, 8],
            [17, 8, 0.05, 10, 0.1, 14],
        ]
        P = [
            [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
            [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
            [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
            [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
        ]
        expected = -sum(
            alpha[i] * math.exp(-sum(A[i][j] * P[i][j] ** 2 for j in range(6)))
            for i in range(4)
        )
        val = hartman6(np.zeros((1, 6)))[0]
        assert val == pytest.approx(expected, rel=1e-12)
        assert val < 0.0

    def test_range_spot_check(self, rng):
        X = rng.random((2000, 6))
        vals = hartman6(X)
        assert np.all(vals > -3.33)
        assert np.all(vals < 0.0)


class TestTrid:
    def test_analytic_minimizer(self):
        i = np.arange(1, 11)
        x_star = i * (11 - i)
        assert trid(x_star[None, :])[0] == pytest.approx(-210.0, abs=1e-9)
        assert TRID10_MIN == -210.0

    def test_origin(self):
        assert trid(np.zeros((1, 10)))[0] == 10.0

    def test_2d_hand_value(self):
        # (2-1)^2 + (2-1)^2 - 2*2 = -2
        assert trid(np.array([[2.0, 2.0]]))[0] == -2.0


class TestBranin:
    def test_reference_minimum(self):
        assert branin(np.array([[math.pi, 2.275]]))[0] == pytest.approx(
            BRANIN_MIN, abs=1e-6
        )
        assert BRANIN_MIN == pytest.approx(0.397887, abs=1e-6)


class TestRegistry:
    def test_known_problems_present(self):
        names = list_problems()
        for expected in (
            "michalewicz5", "rastrigin5", "ackley5", "hartman6", "trid10",
            "branin2", "michalewicz2", "multimodal1d",
        ):
            assert expected in names

    def test_unknown_name_raises(self):
        with pytest.raises(KeyError):
            get_problem("nope")

    def test_desk_suite_members_evaluate_finitely(self, rng):
        suite = desk_scale_suite()
        assert len(suite) >= 3
        for prob in suite:
            X = rng.uniform(prob.bounds[:, 0], prob.bounds[:, 1], size=(10_000, prob.dim))
            vals = prob.evaluate_batch(X)
            assert np.all(np.isfinite(vals))
            if prob.known_optimum is not None:
                assert np.all(vals >= prob.known_optimum - 1e-9)

    def test_known_optimum_lower_bounds_samples(self, rng):
        for name in list_problems():
            prob = get_problem(name)
            if prob.known_optimum is None:
                continue
            X = rng.uniform(prob.bounds[:, 0], prob.bounds[:, 1], size=(50_000, prob.dim))
            assert np.min(prob.evaluate_batch(X)) >= prob.known_optimum - 1e-9

    def test_optimum_point_evaluates_to_optimum(self):
        for name in list_problems():
            prob = get_problem(name)
            if prob.optimum_point is None or prob.known_optimum is None:
                continue
            val = prob.evaluate(prob.optimum_point)
            assert val == pytest.approx(prob.known_optimum, abs=1e-6)


class TestFailureInjection:
    def test_seeded_and_deterministic(self):
        p1 = get_problem("branin2", failure_rate=0.5, failure_seed=3)
        p2 = get_problem("branin2", failure_rate=0.5, failure_seed=3)
        x = np.array([1.0, 5.0])
        outcomes1, outcomes2 = [], []
        for _ in range(50):
            for prob, out in ((p1, outcomes1), (p2, outcomes2)):
                try:
                    prob.evaluate(x)
                    out.append(True)
                except EvaluationFailure:
                    out.append(False)
        assert outcomes1 == outcomes2
        assert any(outcomes1) and not all(outcomes1)

    def test_zero_rate_is_pure(self):
        prob = get_problem("ackley5")
        x = np.full(5, 0.5)
        vals = {prob.evaluate(x) for _ in range(10)}
        assert len(vals) == 1

    def test_batch_evaluation_never_fails(self):
        prob = get_problem("branin2", failure_rate=0.9, failure_seed=0)
        X = np.array([[0.0, 5.0], [1.0, 3.0]])
        assert np.all(np.isfinite(prob.evaluate_batch(X)))


class TestNormalizedRoundTrip:
    def test_bounds_round_trip_every_problem(self, rng):
        for name in list_problems():
            prob = get_problem(name)
            box = BoxTransform(prob.bounds).fit()
            U = rng.random((100, prob.dim))
            back = box.transform(box.inverse_transform(U))
            scale = np.abs(prob.bounds).max()
            assert np.allclose(back, U, rtol=1e-12, atol=1e-12 * max(scale, 1.0))
