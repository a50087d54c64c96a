"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateDenominatorError(ZeroDivisionError):
    """A relative quantity was requested against a zero-norm reference."""


class DegenerateOffsetError(ValueError):
    """A bound coincides with the central prediction, so it has no direction."""


class NumericError(ArithmeticError):
    """Non-finite values or a singular system appeared during a computation."""


class ConvergenceError(NumericError):
    """An iterative method stopped before reaching its tolerance.

    Attributes
    ----------
    residual : float
        Residual at the final iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FormatError(ValueError):
    """A binary file does not follow the expected layout.

    Attributes
    ----------
    offset : int
        Byte offset at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ExperimentError(RuntimeError):
    """An experiment stage failed; the original error is chained as ``__cause__``.

    Attributes
    ----------
    stage : str
        Name of the failing stage (for example ``"generate"`` or ``"calibrate"``).
    """

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
