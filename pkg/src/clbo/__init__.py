"""Co-learning Bayesian optimization.

A small, self-contained Bayesian-optimization library built around
cooperating Gaussian-process surrogates: a coregionalized multi-output GP
over bootstrap subsets of the data (all outputs sharing one lengthscale
vector) working alongside a full-data single-output GP, with expected
improvement driving a batched search. Ships with classic baselines
(EGO, constant liar, pseudo-EI batches), analytic benchmark problems, and
a seeded experiment harness.
"""

from .acquisition import (
    AcquisitionConfig,
    expected_improvement,
    influence_function,
    maximize_acquisition,
    pseudo_ei,
)
from .baselines import EGO, ConstantLiarBO, MSBO, PEIBatchBO
from .benchmarks import BenchmarkProblem, get_problem, list_problems
from .engine import CoLearningBO, OptimizationResult
from .exceptions import (
    ClboError,
    ConfigurationError,
    EvaluationFailure,
    IllConditionedModelError,
)
from .gp import GPParams, SingleOutputGP, negative_log_marginal_likelihood
from .mogp import CoregionalizedGP, MOGPParams, SubsetCollection, bootstrap_subsets

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "BenchmarkProblem",
    "ClboError",
    "CoLearningBO",
    "ConfigurationError",
    "ConstantLiarBO",
    "CoregionalizedGP",
    "EGO",
    "EvaluationFailure",
    "GPParams",
    "IllConditionedModelError",
    "MOGPParams",
    "MSBO",
    "OptimizationResult",
    "PEIBatchBO",
    "SingleOutputGP",
    "SubsetCollection",
    "bootstrap_subsets",
    "expected_improvement",
    "get_problem",
    "influence_function",
    "list_problems",
    "maximize_acquisition",
    "negative_log_marginal_likelihood",
    "pseudo_ei",
]
