"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for invalid input,
3 for numerical failures.
"""
from __future__ import annotations


class SodaError(Exception):
    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


class InputError(SodaError):
    exit_code = 2


class NumericError(SodaError):
    exit_code = 3


class ZeroNormRow(InputError):
    def __init__(self, index: int):
        super().__init__(f"row {index} has zero norm")
        self.index = index


class DimensionMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class BadMagic(InputError):
    pass


class TruncatedFile(InputError):
    pass


class NonFiniteEntry(InputError):
    def __init__(self, row: int, col: int):
        super().__init__(f"non-finite value at row {row}, column {col}")
        self.row = row
        self.col = col


class DuplicateIndex(InputError):
    pass


class UnknownLabelToken(InputError):
    pass


class MalformedTable(InputError):
    pass


class IoFailure(InputError):
    pass


class EmptyClass(InputError):
    def __init__(self, index: int):
        super().__init__(f"class {index} has no rows")
        self.index = index


class KTooLarge(InputError):
    pass


class TooFewSamples(InputError):
    pass


class DegenerateLabels(InputError):
    pass


class InvalidScenario(InputError):
    pass


class ConflictingFlags(InputError):
    pass


class IterationMismatch(InputError):
    pass


class SingularCovariance(NumericError):
    pass


class EmptyNeighborhood(NumericError):
    pass


class NonFiniteScore(NumericError):
    pass
