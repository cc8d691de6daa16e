"""Analytic benchmark problems with known optima for regret tracking.

Evaluators are pure and vectorized over rows. Reference minima marked as
"refined" below were produced by the screening-plus-refinement oracle in
:mod:`clbo.oracle` (100k Latin-hypercube screens, local polish of the best
200) and are regenerated by the ``clbo oracle`` subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import EvaluationFailure

# refined reference minima (see module docstring)
MICHALEWICZ5_MIN = -4.687658179088133
MICHALEWICZ2_MIN = -1.8013034100985534
BRANIN_MIN = 0.39788735772973816
MULTIMODAL1D_MIN = -0.8690111349894986
HARTMAN6_MIN = -3.322368011415489

#: closed form -d(d+4)(d-1)/6 at x_i = i(d+1-i), for d = 10
TRID10_MIN = -210.0

HARTMAN6_ARGMIN = np.array(
    [0.2016895, 0.15001067, 0.47687399, 0.27533242, 0.31165163, 0.65730051]
)
MICHALEWICZ2_ARGMIN = np.array([2.20290552, 1.57079633])
BRANIN_ARGMIN = np.array([np.pi, 2.275])
MULTIMODAL1D_ARGMIN = np.array([0.54856345])


def michalewicz(X, steepness=10):
    """Steep-ridged multimodal function on [0, pi]^d."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    i = np.arange(1, X.shape[1] + 1)
    return -np.sum(np.sin(X) * np.sin(i * X**2 / np.pi) ** (2 * steepness), axis=-1)


def rastrigin(X):
    """10 d + sum(x_i^2 - 10 cos(2 pi x_i)); zero at the origin."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    return 10.0 * d + np.sum(X**2 - 10.0 * np.cos(2.0 * np.pi * X), axis=-1)


def ackley(X, a=20.0, b=0.2, c=2.0 * np.pi):
    """Exponentially flat multimodal bowl; zero at the origin."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    term1 = -a * np.exp(-b * np.sqrt(np.sum(X**2, axis=-1) / d))
    term2 = -np.exp(np.sum(np.cos(c * X), axis=-1) / d)
    return term1 + term2 + a + np.e


_HARTMAN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMAN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMAN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def hartman6(X):
    """Four-term six-dimensional Hartman function on the unit cube."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    inner = np.sum(
        _HARTMAN6_A[None, :, :] * (X[:, None, :] - _HARTMAN6_P[None, :, :]) ** 2,
        axis=2,
    )
    return -np.sum(_HARTMAN6_ALPHA[None, :] * np.exp(-inner), axis=1)


def trid(X):
    """sum (x_i - 1)^2 - sum x_i x_{i-1}; convex with a wide value range."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.sum((X - 1.0) ** 2, axis=-1) - np.sum(X[:, 1:] * X[:, :-1], axis=-1)


def branin(X):
    """Classic three-minimum 2-D test function."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    a, r, s = 1.0, 6.0, 10.0
    b = 5.1 / (4.0 * np.pi**2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * np.cos(x1) + s


def multimodal1d(X):
    """Gramacy-Lee oscillating 1-D function on [0.5, 2.5]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x = X[:, 0]
    return np.sin(10.0 * np.pi * x) / (2.0 * x) + (x - 1.0) ** 4


def quadratic(X, center=0.7):
    """Smooth unimodal sanity problem: ||x - center||^2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.sum((X - center) ** 2, axis=-1)


@dataclass
class BenchmarkProblem:
    """A box-bounded objective with optional known optimum.

    ``evaluate`` takes one raw-coordinate point and returns a float;
    ``evaluate_batch`` is the vectorized form used by oracles and tests.
    With ``failure_rate > 0`` single evaluations raise
    :class:`EvaluationFailure` according to a seeded Bernoulli stream,
    which exercises the optimizers' random-restart rule.
    """

    name: str
    dim: int
    bounds: np.ndarray
    evaluator: callable
    known_optimum: float | None = None
    optimum_point: np.ndarray | None = None
    failure_rate: float = 0.0
    failure_seed: int = 0
    _failure_rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.bounds.shape != (self.dim, 2):
            raise ValueError(f"bounds must have shape ({self.dim}, 2)")
        if not 0.0 <= self.failure_rate < 1.0:
            raise ValueError("failure_rate must lie in [0, 1)")
        self._failure_rng = np.random.default_rng(self.failure_seed)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise ValueError(f"{self.name} expects {self.dim} coordinates, got {x.size}")
        if self.failure_rate > 0.0 and self._failure_rng.random() < self.failure_rate:
            raise EvaluationFailure(f"simulated evaluation failure on {self.name}")
        return float(self.evaluator(x[None, :])[0])

    def evaluate_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"{self.name} expects {self.dim} coordinates")
        return np.asarray(self.evaluator(X), dtype=float)

    def with_failures(self, rate, seed=0):
        """A copy of this problem with seeded evaluation failures."""
        return replace(self, failure_rate=rate, failure_seed=seed)


def _box(lo, hi, d):
    return np.tile(np.asarray([lo, hi], dtype=float), (d, 1))


_REGISTRY = {
    "michalewicz5": lambda: BenchmarkProblem(
        "michalewicz5", 5, _box(0.0, np.pi, 5), michalewicz,
        known_optimum=MICHALEWICZ5_MIN,
    ),
    "michalewicz2": lambda: BenchmarkProblem(
        "michalewicz2", 2, _box(0.0, np.pi, 2), michalewicz,
        known_optimum=MICHALEWICZ2_MIN, optimum_point=MICHALEWICZ2_ARGMIN,
    ),
    "rastrigin5": lambda: BenchmarkProblem(
        "rastrigin5", 5, _box(-5.12, 5.12, 5), rastrigin,
        known_optimum=0.0, optimum_point=np.zeros(5),
    ),
    "ackley5": lambda: BenchmarkProblem(
        "ackley5", 5, _box(-2.0, 2.0, 5), ackley,
        known_optimum=0.0, optimum_point=np.zeros(5),
    ),
    "hartman6": lambda: BenchmarkProblem(
        "hartman6", 6, _box(0.0, 1.0, 6), hartman6,
        known_optimum=HARTMAN6_MIN, optimum_point=HARTMAN6_ARGMIN,
    ),
    "trid10": lambda: BenchmarkProblem(
        "trid10", 10, _box(-100.0, 100.0, 10), trid,
        known_optimum=TRID10_MIN,
        optimum_point=np.arange(1, 11, dtype=float) * (11 - np.arange(1, 11)),
    ),
    "branin2": lambda: BenchmarkProblem(
        "branin2", 2, np.array([[-5.0, 10.0], [0.0, 15.0]]), branin,
        known_optimum=BRANIN_MIN, optimum_point=BRANIN_ARGMIN,
    ),
    "multimodal1d": lambda: BenchmarkProblem(
        "multimodal1d", 1, np.array([[0.5, 2.5]]), multimodal1d,
        known_optimum=MULTIMODAL1D_MIN, optimum_point=MULTIMODAL1D_ARGMIN,
    ),
    "quadratic1d": lambda: BenchmarkProblem(
        "quadratic1d", 1, np.array([[0.0, 1.0]]), quadratic,
        known_optimum=0.0, optimum_point=np.array([0.7]),
    ),
}


def list_problems():
    """Registered problem names, sorted."""
    return sorted(_REGISTRY)


def get_problem(name, failure_rate=0.0, failure_seed=0):
    """Look a problem up by name; optionally inject evaluation failures."""
    if name not in _REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(list_problems())}")
    problem = _REGISTRY[name]()
    if failure_rate > 0.0:
        problem = problem.with_failures(failure_rate, failure_seed)
    return problem


def desk_scale_suite():
    """Small problems suitable for fast, repeated optimization studies."""
    return [get_problem("branin2"), get_problem("michalewicz2"), get_problem("multimodal1d")]
