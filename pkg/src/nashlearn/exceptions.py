"""Exception types raised across the package."""


class NashLearnError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(NashLearnError, ValueError):
    """An array argument has a shape inconsistent with the game layout."""


class FeasibleSamplingError(NashLearnError, RuntimeError):
    """Rejection sampling of feasible points fell below the acceptance-rate budget."""


class InfeasibleProblemError(NashLearnError, RuntimeError):
    """A QP / best-response subproblem has an empty feasible set."""


class SolverConvergenceError(NashLearnError, RuntimeError):
    """An iterative solver exhausted its iteration budget.

    Carries diagnostic residuals so callers can report solver context.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class RiccatiDivergenceError(NashLearnError, RuntimeError):
    """Backward Riccati iterates blew up (non-stabilizable configuration)."""


class EmptyDatasetError(NashLearnError, ValueError):
    """A training operation received an empty preference dataset."""


class EvaluationError(NashLearnError, ValueError):
    """A benchmark metric is undefined for the given inputs (e.g. zero cost range)."""


class ConfigError(NashLearnError, ValueError):
    """An experiment configuration is malformed or violates an invariant."""
