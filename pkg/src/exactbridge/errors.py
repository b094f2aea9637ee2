class ExactBridgeError(Exception):
    """Base class for errors raised by the package."""


class InvalidModelError(ExactBridgeError, ValueError):
    pass


class NumericFailure(ExactBridgeError, RuntimeError):
    """A retrospective decision or quadrature could not be resolved within its cap."""


class ConditionViolation(ExactBridgeError, ValueError):
    """User-supplied bounds (Phi, Lambda, kappa) are contradicted by an evaluation."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class InvariantViolation(ExactBridgeError, AssertionError):
    """Internal contract broken; always a bug, never a rejection."""


class ContractError(ExactBridgeError, ValueError):
    pass
