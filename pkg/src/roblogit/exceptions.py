class RobLogitError(Exception):
    """Base class for all package errors."""


class DomainError(RobLogitError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ContractError(RobLogitError, ValueError):
    """Caller violated a precondition (shapes, signs, ranges)."""


class UnsupportedOperationError(RobLogitError, NotImplementedError):
    """Operation not available for the requested family."""


class DivergedError(RobLogitError, ArithmeticError):
    """Non-finite objective during optimization; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class IllConditionedError(RobLogitError, ArithmeticError):
    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


class DegenerateDirectionError(RobLogitError, ArithmeticError):
    pass
