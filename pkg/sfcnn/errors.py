class SfcnnError(Exception):
    """Root of all errors raised by the package."""

    exit_code: int = 2


class ValidationError(SfcnnError):
    """Bad configuration or arguments; nothing has been computed yet."""

    exit_code = 1


class ConfigError(ValidationError):
    pass


class ShapeChainError(ValidationError):
    """Architecture whose stage lengths degenerate (some L_i < 1)."""


class DataError(SfcnnError):
    """Runtime failure caused by input data or artifacts."""

    exit_code = 2


class LogParseError(DataError):
    def __init__(self, message: str, line: int = None, column: str = None) -> None:
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class InsufficientHistoryError(DataError):
    pass


class WindowOutOfRangeError(DataError):
    pass


class NoSamplesError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class NonFiniteGradientError(NonFiniteError):
    def __init__(self, tensor_name: str) -> None:
        self.tensor_name = tensor_name
        super().__init__(f"Non-finite gradient in tensor {tensor_name!r}")


class SingularSystemError(DataError):
    pass


class GradientCheckError(DataError):
    pass


class NothingComparedError(GradientCheckError):
    """Every entry of a finite-difference check was skipped."""


class ModelFileError(DataError):
    """Model file can not be decoded."""


class BadMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class PayloadLengthMismatchError(ModelFileError):
    pass


class NonFiniteValueError(ModelFileError):
    pass


class UnknownKeyError(DataError):
    """Item, region or aggregation key that does not exist in the log table."""
