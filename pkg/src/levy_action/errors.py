"""Exception hierarchy.

Validation problems (bad input documents, malformed expressions, invalid
parameters) derive from :class:`ValidationError`; everything that goes wrong
while computing derives from :class:`NumericalError`.  The CLI maps the two
families to different exit codes.
"""


class LevyActionError(Exception):
    """Base class for all package errors."""


class ValidationError(LevyActionError, ValueError):
    """Invalid user input."""

    def __init__(self, message, pointer=None):
        self.pointer = pointer
        self.message = message
        if pointer is not None:
            message = f"{pointer}: {message}"
        super().__init__(message)


class ExpressionSyntaxError(ValidationError):
    """Malformed coefficient expression; ``offset`` is the 0-based position."""

    def __init__(self, message, text, offset):
        self.text = text
        self.offset = offset
        super().__init__(f"{message} at offset {offset} in {text!r}")


class GridMismatchError(ValidationError):
    pass


class CutoffRequiredError(ValidationError):
    pass


class NumericalError(LevyActionError, ArithmeticError):
    """A computation failed or could not be certified."""


class QuadratureError(NumericalError):
    def __init__(self, message, residual=float("nan")):
        self.residual = residual
        super().__init__(f"{message} (estimated residual {residual:.3g})")


class InfiniteMomentError(NumericalError):
    """The exponential moment E exp(xi L_1) is infinite."""

    def __init__(self, xi):
        self.xi = xi
        super().__init__(f"exponential moment diverges at xi={xi!r}")


class NonConvexError(NumericalError):
    """A function handed to the Legendre engine failed the slope test."""


class DegenerateDiffusionError(NumericalError):
    pass


class InfeasibleError(NumericalError):
    pass
