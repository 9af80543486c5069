"""Exception hierarchy shared by all modules.

The CLI maps these onto exit statuses, so every raised error should be one of
these classes (or a subclass).
"""

import math

# Returned by objectives when the value is +infinity because some LOR has data
# but zero intensity.  It is a plain float so arithmetic keeps working, but
# callers are expected to test it with ``is_infeasible``.
INFEASIBLE = math.inf


def is_infeasible(value) -> bool:
    return value == INFEASIBLE


class NplError(Exception):
    """Base class."""


class InvalidArgumentError(NplError, ValueError):
    pass


class DimensionMismatchError(NplError, ValueError):
    pass


class ModelViolationError(NplError):
    """The design violates the detectability conditions (zero column / row)."""


class CapacityError(NplError):
    pass


class InvalidSegmentationError(NplError):
    pass


class DegenerateDataError(NplError):
    pass


class InsufficientDataError(NplError):
    pass


class NumericError(NplError, ArithmeticError):
    pass


class DegenerateSupportError(NumericError):
    """Positive data on an LOR whose current forward projection is zero."""


class UndefinedDirectionError(NumericError):
    pass


class PreconditionError(NplError):
    pass


class ConfigError(NplError):
    pass


class FormatError(NplError):
    """A file does not have the expected magic or layout."""
