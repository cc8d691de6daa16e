"""Exception types shared across the library."""

from __future__ import annotations


class ClboError(Exception):
    """Base class for library-specific errors."""


class IllConditionedModelError(ClboError):
    """Raised when a covariance matrix cannot be factorized even after
    the full jitter escalation schedule.

    Carries the hyperparameters that produced the failure so callers can
    report or retry.
    """

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class EvaluationFailure(ClboError):
    """Raised by an objective evaluator that failed to produce a value.

    Optimizers respond by evaluating a fresh uniform random point instead.
    """


class ConfigurationError(ClboError):
    """Raised for invalid experiment configuration before any run starts.

    The message names the offending field.
    """
