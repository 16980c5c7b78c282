""" Error kinds raised by the screening engine.

Outcomes that are values rather than failures (anatomy checks, undefined
Jaccard indices, zero-denominator rates) are never raised.
"""
from typing import ClassVar


class ScreeningError(Exception):
    """ Base class for all engine errors."""
    code: ClassVar[str] = 'SCREENING_ERROR'
    exit_code: ClassVar[int] = 1

    def __str__(self) -> str:
        message = super().__str__()
        return f'{self.code}: {message}' if message else self.code


class InputError(ScreeningError):
    """ Input artifact can't be read, parsed or written."""
    exit_code = 3


class UsageError(ScreeningError):
    """ Command-line flags are missing, unknown or inconsistent."""
    code = 'USAGE'
    exit_code = 2


class ValidationError(ScreeningError):
    """ Inputs are readable but violate an operation contract."""
    exit_code = 4


class MalformedFile(InputError):
    code = 'MALFORMED_FILE'


class IOFailure(InputError):
    code = 'IO_FAILURE'


class InvalidLabel(ValidationError):
    code = 'INVALID_LABEL'


class InvalidParameters(ValidationError):
    code = 'INVALID_PARAMETERS'


class TooFewStudies(ValidationError):
    code = 'TOO_FEW_STUDIES'


class DegenerateRegion(ValidationError):
    code = 'DEGENERATE_REGION'


class IsotropicRegion(ValidationError):
    code = 'ISOTROPIC_REGION'


class AnatomyInvalid(ValidationError):
    code = 'ANATOMY_INVALID'


class EmptySeries(ValidationError):
    code = 'EMPTY_SERIES'


class ZeroArea(ValidationError):
    code = 'ZERO_AREA'


class SeriesTooShort(ValidationError):
    code = 'SERIES_TOO_SHORT'


class NoCycle(ValidationError):
    code = 'NO_CYCLE'


class NoValidFrames(ValidationError):
    code = 'NO_VALID_FRAMES'


class InfeasibleGeometry(ValidationError):
    code = 'INFEASIBLE_GEOMETRY'


class TargetUnreachable(ValidationError):
    code = 'TARGET_UNREACHABLE'


class DimensionMismatch(ValidationError):
    code = 'DIMENSION_MISMATCH'


class SingleClassData(ValidationError):
    code = 'SINGLE_CLASS_DATA'


class ProbabilityOutOfRange(ValidationError):
    code = 'PROBABILITY_OUT_OF_RANGE'


class LengthMismatch(ValidationError):
    code = 'LENGTH_MISMATCH'


class UnknownClass(ValidationError):
    code = 'UNKNOWN_CLASS'


class SingleClass(ValidationError):
    code = 'SINGLE_CLASS'


class ShapeMismatch(ValidationError):
    code = 'SHAPE_MISMATCH'


class SchemaMismatch(ValidationError):
    code = 'SCHEMA_MISMATCH'


class EmptyMatrix(ValidationError):
    code = 'EMPTY_MATRIX'


class EmptySample(ValidationError):
    code = 'EMPTY_SAMPLE'


class NoPredictions(ValidationError):
    code = 'NO_PREDICTIONS'


class EmptySelection(ValidationError):
    code = 'EMPTY_SELECTION'


class MissingPredictions(ValidationError):
    code = 'MISSING_PREDICTIONS'
