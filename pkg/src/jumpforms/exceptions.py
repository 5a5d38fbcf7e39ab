"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """A parameter is outside its admissible range."""


class PreconditionViolation(ValueError):
    """An input violates an operation's precondition (e.g. a negative field)."""


class NumericalFailure(RuntimeError):
    """A numerical routine failed to converge or reach its tolerance.

    The ``diagnostics`` mapping carries whatever the failing routine knew.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
