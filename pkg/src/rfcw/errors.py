"""Exception hierarchy.

Domain errors (bad model input, missing deeper minimum, failed existence
condition) map to CLI exit code 2; everything else is treated as internal.
"""


class RFCWError(Exception):
    """Base class for all package errors."""


class DomainError(RFCWError, ValueError):
    """Input outside the mathematical domain of an operation."""


class SecondOrderTransitionError(DomainError):
    """A critical point is (numerically) degenerate."""


class NoDeeperMinimumError(DomainError):
    """The starting minimum has no strictly deeper minimum."""


class NotASaddleError(DomainError):
    """The saddle existence condition fails at the requested point."""


class DisconnectedError(DomainError):
    """The source and target sets are not connected in the chain."""


class SolverFailure(RFCWError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FlowValidationError(RFCWError):
    """A flow violates one of the unit-flow clauses."""
