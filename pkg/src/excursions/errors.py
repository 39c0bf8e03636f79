"""Exception types shared across the package.

Every message is prefixed with ``module.operation`` so CLI users can tell
which engine rejected the input.
"""


class ExcursionError(Exception):
    """Base class; carries the CLI exit code."""

    exit_code = 2

    def __init__(self, where, message):
        self.where = where
        self.message = message
        super().__init__(f"{where}: {message}")


class ValidationError(ExcursionError):
    exit_code = 1


class ExprSyntaxError(ValidationError):
    def __init__(self, offset, expected, src=""):
        self.offset = offset
        self.expected = expected
        self.src = src
        super().__init__("coeff_expr.parse", f"syntax error at offset {offset}: {expected}")


class DomainError(ExcursionError):
    """Evaluation left the domain of a function (log of a negative, 0^-1, ...)."""

    def __init__(self, subexpr, x, detail):
        self.subexpr = subexpr
        self.x = x
        super().__init__("coeff_expr.eval", f"{detail} in '{subexpr}' at x={x!r}")


class NumericalFailure(ExcursionError):
    exit_code = 2


class OutOfSupport(NumericalFailure):
    pass


class ConsistencyFailure(NumericalFailure):
    pass


class InsufficientData(ExcursionError):
    exit_code = 3


class VerificationFailure(ExcursionError):
    exit_code = 3
