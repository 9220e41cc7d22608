"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class GseError(Exception):
    """Base class for all package errors."""


class ShapeError(GseError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(GseError):
    """Bad input data: malformed files, empty sets, invalid manifests."""


class NumericError(GseError):
    """Non-finite values where finite ones are required."""


class UsageError(GseError):
    """Invalid command-line usage or configuration."""
