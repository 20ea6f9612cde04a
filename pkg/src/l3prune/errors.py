"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4,
anything argument-shaped -> 2.
"""


class L3PruneError(Exception):
    """Base class for all toolkit errors."""


class DataError(L3PruneError):
    """A file, dataset, or checkpoint is missing, malformed, or inconsistent."""


class NumericError(L3PruneError):
    """A numeric computation entered an invalid state (NaN/Inf, zero norms, ...)."""
