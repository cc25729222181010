"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: bad inputs exit with 2, numerical
breakdowns exit with 3.
"""


class FarfieldError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FarfieldError, ValueError):
    """Invalid user-supplied data: bad files, shapes, ranges, preconditions."""


class NumericalError(FarfieldError, RuntimeError):
    """A computation broke down numerically and no safe fallback exists."""
