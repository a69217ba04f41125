"""Error taxonomy shared across the package.

Failures that a caller is expected to react to (retry, reject a config,
surface an exit code) are explicit exception types, never silent flags.
"""

from __future__ import annotations


class ProjdiffError(Exception):
    """Base class for package errors."""


class ConfigError(ProjdiffError):
    """A configuration value or file is invalid. CLI exit code 2."""


class TrainingDivergedError(ProjdiffError):
    """Training loss became non-finite."""


class NonConvergenceError(ProjdiffError):
    """A projection attempt terminated without reaching feasibility.

    Carries the best iterate found so the caller can inspect or retry. The
    ``result`` attribute is a ProjectionResult with converged=False; for
    sampler steps ``candidate`` holds the unprojected proposal.
    """

    def __init__(self, message: str, result=None, candidate=None):
        super().__init__(message)
        self.result = result
        self.candidate = candidate


class RetryExhaustedError(ProjdiffError):
    """All resampling attempts for a chain failed to produce a feasible
    sample. CLI exit code 3."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class InfeasibleError(ProjdiffError):
    """No feasible point exists for the requested operation (for example a
    novelty search over an exhausted sequence space)."""
