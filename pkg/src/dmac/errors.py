"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument is outside the domain an operation accepts."""


class ValidationError(ValueError):
    """A game or policy violates one of its structural invariants."""


class GameFileError(ValueError):
    """A serialized file could not be parsed.

    ``field`` names the offending key when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration
