"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
DataError exits 2, NumericalError exits 3.
"""


class ShapeError(ValueError):
    """Tensor/parameter dimensions do not match an operation's contract."""


class DataError(Exception):
    """Input files, series, or configuration values are unusable."""


class NumericalError(Exception):
    """A numerical invariant broke (NaN loss, failed gradient check)."""
