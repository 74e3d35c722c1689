"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class NumericError(ArithmeticError):
    """Raised when a coefficient or value evaluation produces a non-finite number.

    ``location`` carries whatever context identifies the failure, e.g. a
    ``(t, x, u)`` triple or a ``(time node, state node)`` pair.
    """

    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location
