"""Exception hierarchy shared across the package.

The CLI maps ``UserInputError`` to exit code 2 and ``NumericalError`` to 3.
"""


class SpillnetError(Exception):
    """Base class for all package errors."""


class UserInputError(SpillnetError):
    """Malformed files, bad flags, schema violations."""


class NumericalError(SpillnetError):
    """Numerical failures such as singular moment matrices."""


class SingularMatrixError(NumericalError):
    """A required moment matrix is singular or too ill-conditioned to trust."""
