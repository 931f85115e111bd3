"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for usage problems, 3 for data problems and 4 for numerical problems.
"""

from __future__ import annotations


class OvbError(Exception):
    """Base class for all package errors."""

    exit_code = 4


# -- data errors ---------------------------------------------------------


class DataError(OvbError):
    exit_code = 3


class MissingColumn(DataError):
    pass


class ConstantColumn(DataError):
    pass


class TooFewRows(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.row = row
        self.column = column


class NotSymmetric(DataError):
    pass


class RoleMismatch(DataError):
    pass


# -- usage errors --------------------------------------------------------


class UsageError(OvbError):
    exit_code = 2


class EmptyConstraint(UsageError):
    pass


class CapExceeded(UsageError):
    pass


# -- numerical errors ----------------------------------------------------


class NumericError(OvbError):
    exit_code = 4


class SingularConditionerBlock(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class DegenerateTargetVariance(NumericError):
    pass


class KnifeEdgeViolated(NumericError):
    pass


class DomainError(NumericError):
    pass


class LinearDependence(NumericError):
    pass


class SolverFailure(NumericError):
    pass


class AllDegenerate(NumericError):
    pass


class AssumptionViolated(NumericError):
    pass


class DegenerateIndex(NumericError):
    pass
