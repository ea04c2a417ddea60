"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Inputs violate a documented precondition (shape, range, ordering)."""


class SolverDegenerateError(ArithmeticError):
    """A numerical kernel could not produce a finite, well-defined result."""


class InvalidStateError(RuntimeError):
    """An object was used out of order, e.g. a stale activation cache."""


class ParseError(InvalidInputError):
    """A persisted file could not be parsed.

    ``location`` carries a human-readable pointer such as ``"line 3"`` or
    ``"field 'means'"``.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)
