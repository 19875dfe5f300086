"""Exception hierarchy.

Two families map onto the CLI exit codes: ``ValidationError`` (bad input,
exit 2) and ``DegeneracyError`` (numerically degenerate input, exit 3).
"""

from __future__ import annotations


class IndistError(Exception):
    """Base class for every error raised by indistkit."""

    exit_code = 1


class ValidationError(IndistError, ValueError):
    exit_code = 2


class DegeneracyError(IndistError, ArithmeticError):
    exit_code = 3


class MissingColumn(ValidationError):
    def __init__(self, column: str):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class ParseError(ValidationError):
    def __init__(self, row: int, detail: str = ""):
        super().__init__(f"row {row}: could not parse{': ' + detail if detail else ''}")
        self.row = row


class OutOfRange(ValidationError):
    def __init__(self, row: int, column: str, value: float):
        super().__init__(f"row {row}: {column}={value!r} outside [0, 1]")
        self.row = row
        self.column = column
        self.value = value


class RowCountMismatch(ValidationError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} rows, got {got}")
        self.expected = expected
        self.got = got


class BadFraction(ValidationError):
    pass


class BadParam(ValidationError):
    pass


class BadSpec(ValidationError):
    pass


class MissingExpert(ValidationError):
    def __init__(self, what: str = "expert predictions"):
        super().__init__(f"{what} required but absent from dataset")


class UnknownCell(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class InfeasibleK(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class LengthMismatch(ValidationError):
    def __init__(self, a: int, b: int):
        super().__init__(f"inputs differ in length ({a} vs {b})")


class TooFewRows(DegeneracyError):
    pass


class DegenerateCell(DegeneracyError):
    def __init__(self, cell: int, n: int):
        super().__init__(f"cell {cell} has {n} rows (need at least 2)")
        self.cell = cell
        self.n = n


class DegenerateIndicator(DegeneracyError):
    pass


class EmptyCell(DegeneracyError):
    pass


class NoAdversarialSubset(DegeneracyError):
    pass


class NoConvergence(UserWarning):
    """Issued (not raised) when an iterative fit stops at its iteration cap."""
