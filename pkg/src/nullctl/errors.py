"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition.

    ``field`` names the offending parameter so front ends can report it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NotControllableError(ValueError):
    """The p = 2 Gramian is numerically singular for the requested system."""
