"""Exception types shared across the package."""

from __future__ import annotations


class FieldFormatError(ValueError):
    """A field file or checkpoint on disk is malformed (bad magic, truncation,
    shape disagreement, unsupported version)."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance.

    Carries the best iterate seen so far together with its residual norm so
    callers can inspect or salvage partial progress.
    """

    def __init__(self, message, best=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or otherwise failed; ``step`` is the
    0-based optimization step at which the failure was detected."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
