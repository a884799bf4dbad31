"""Exception hierarchy."""


class PPMxError(Exception):
    pass


class PartitionError(PPMxError, ValueError):
    pass


class EmptyBlock(PartitionError):
    pass


class NonContiguousLabels(PartitionError):
    pass


class SizeMismatch(PartitionError):
    pass


class DimensionMismatch(PPMxError, ValueError):
    pass


class EmptySet(PPMxError, ValueError):
    pass


class NonConvergence(PPMxError, RuntimeError):
    pass


class DegenerateCovariates(PPMxError, ValueError):
    pass


class QuadratureFailure(PPMxError, RuntimeError):
    pass


class NumericalFailure(PPMxError, ArithmeticError):
    pass


class ConfigError(PPMxError, ValueError):
    pass


class SpecError(ConfigError):
    pass


class EmptyTrace(PPMxError, ValueError):
    pass


class NonFiniteCPO(UserWarning):
    pass


class ParseError(PPMxError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NonBinaryValue(ParseError):
    pass


class NonMonotoneOccasions(ParseError):
    pass


class CensorBeforeLastEvent(ParseError):
    pass
