"""Exception types raised across the package."""


class SelfClassifierError(Exception):
    pass


class DimensionError(SelfClassifierError, ValueError):
    """Operand shapes do not agree."""


class ParameterError(SelfClassifierError, ValueError):
    """A numeric argument is outside its valid range."""


class DegenerateSliceError(SelfClassifierError, ArithmeticError):
    """A slice that must be normalized sums to (numerically) zero."""


class DomainError(SelfClassifierError, ArithmeticError):
    """An elementwise function was evaluated outside its domain."""


class BatchTooSmallError(SelfClassifierError, ValueError):
    pass


class ConfigError(SelfClassifierError, ValueError):
    pass


class NonFiniteLossError(SelfClassifierError, FloatingPointError):
    """Training produced a NaN/Inf loss; ``diagnostics`` describes the batch."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
