import numpy as np
import pytest

from clbo.benchmarks import BenchmarkProblem, quadratic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(rng, n, d, noise=0.0):
    """A smooth random regression dataset on the unit cube."""
    X = rng.random((n, d))
    w = rng.standard_normal(d)
    y = np.sin(3.0 * X @ w) + 0.5 * X[:, 0] ** 2
    if noise > 0:
        y = y + noise * rng.standard_normal(n)
    return X, y


def quadratic_problem(dim=1, center=0.7):
    """||x - center||^2 on the unit cube, known optimum 0."""
    return BenchmarkProblem(
        name=f"quadratic{dim}",
        dim=dim,
        bounds=np.tile([0.0, 1.0], (dim, 1)),
        evaluator=lambda X: quadratic(X, center=center),
        known_optimum=0.0,
        optimum_point=np.full(dim, center),
    )


def fast_engine_kwargs(**overrides):
    """Small fitting/search budgets so engine tests stay quick."""
    kwargs = dict(
        n_restarts=3,
        max_opt_iter=40,
        acq_starts=16,
        acq_refine_top=2,
        acq_maxiter=30,
    )
    kwargs.update(overrides)
    return kwargs
