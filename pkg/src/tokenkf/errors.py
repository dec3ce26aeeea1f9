"""Exception types raised across the package."""


class FilterError(Exception):
    """Base class for all errors raised by tokenkf."""


class InvalidInput(FilterError, ValueError):
    """Input values are non-finite or otherwise unusable."""


class InvalidConfig(FilterError, ValueError):
    """A configuration violates one of its invariants.

    ``field`` names the offending field so callers (the CLI) can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(FilterError, ValueError):
    """Array shapes or sequence lengths do not match."""


class MissingInput(FilterError, ValueError):
    """A policy needs an input that was not supplied."""
