"""Exception types shared across the package."""


class RbbtError(Exception):
    """Base class for all package errors."""


class DomainError(RbbtError, ValueError):
    """Parameter outside the declared parameter box."""


class ShapeError(RbbtError, ValueError):
    """Operands with inconsistent dimensions."""


class StructureError(RbbtError, ValueError):
    """A structural precondition (sparsity, rank, kind) does not hold."""


class FactorizationError(RbbtError, ArithmeticError):
    """A sparse or dense factorization failed."""


class DefinitenessError(FactorizationError):
    """A matrix expected to be definite is not."""


class DissipativityError(RbbtError, ValueError):
    """A transformed pencil is not strictly dissipative."""


class BoundError(RbbtError, ValueError):
    """An a posteriori bound cannot be evaluated."""


class ConvergenceError(RbbtError, RuntimeError):
    """An iterative method stopped without reaching its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StabilityError(RbbtError, ArithmeticError):
    """A reduced pencil is not asymptotically stable."""


class EmptyBasisError(RbbtError, ValueError):
    """A projected basis has no numerically nonzero directions."""


class TruncationError(RbbtError, ValueError):
    """No admissible truncation order exists."""


class FallbackRequired(RbbtError):
    """The low-rank update path is not applicable; use a full solve instead."""
