# app/errors.py
from __future__ import annotations

from typing import Any, List, Optional


class QmmeError(Exception):
    """Base class for every error raised by the library."""


class NotPositiveDefinite(QmmeError, ArithmeticError):
    """A Cholesky pivot was <= 0. Usually fixed by increasing the damping delta."""


class NotSymmetric(QmmeError, ValueError):
    pass


class NoConvergence(QmmeError, ArithmeticError):
    pass


class NonFiniteInput(QmmeError, ValueError):
    """A matrix handed to a factorization has NaN or infinite entries."""


class DimensionMismatch(QmmeError, ValueError):
    pass


class ShapeMismatch(QmmeError, ValueError):
    pass


class SingularShift(QmmeError, ArithmeticError):
    """A shifted diagonal block of the Schur factor is numerically singular."""


class NonFiniteObjective(QmmeError, ArithmeticError):
    def __init__(self, message: str, trajectory: Optional[List[Any]] = None):
        super().__init__(message)
        self.trajectory = list(trajectory or [])


class NotASimplexPoint(QmmeError, ValueError):
    pass


class HessianSolveFailed(QmmeError, ArithmeticError):
    pass


class LineSearchFailed(QmmeError, ArithmeticError):
    pass


class LengthMismatch(QmmeError, ValueError):
    pass


class MalformedRow(QmmeError, ValueError):
    def __init__(self, row_number: int, message: str):
        super().__init__(f"row {row_number}: {message}")
        self.row_number = row_number


class NonNumericFeature(QmmeError, ValueError):
    def __init__(self, row_number: int, column: str, value: str):
        super().__init__(f"row {row_number}: non-numeric value {value!r} in column {column}")
        self.row_number = row_number
        self.column = column


class ConfigError(QmmeError, ValueError):
    pass


class TrajectoryIoError(QmmeError, OSError):
    pass


class ClassTooSmallWarning(UserWarning):
    """A class had fewer members than its stratified allocation; the deficit was reallocated."""
