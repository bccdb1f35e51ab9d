"""
Error types shared by every module

ContractError subclasses ValueError so callers that only know about
ValueError keep working; the CLI maps ContractError to exit code 2.
"""
from pathlib import Path
from typing import Optional, Union


class SaverError(Exception):
    """Base class for all errors raised by this package"""


class ContractError(SaverError, ValueError):
    """A documented precondition was violated"""


class DomainError(ContractError):
    """Argument outside the mathematical domain of a function"""


class ExhaustiveGuardError(ContractError):
    """Exhaustive search requested on an instance that is too large"""


class MatrixFormatError(ContractError):
    """Binary matrix file has a bad magic, version or header"""


class MatrixLengthError(MatrixFormatError):
    """Binary matrix payload does not match the header"""


class DanglingReferenceError(ContractError):
    """Dataset record points at a matrix file that does not exist"""


class DatasetParseError(ContractError):
    """Dataset record violates the schema"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class MatrixWriteError(SaverError, OSError):
    """Writing a matrix file failed"""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = Path(path)
        self.reason = reason
        super().__init__(f"Could not write matrix to {self.path}: {reason}")

    def __reduce__(self):
        return (MatrixWriteError, (self.path, self.reason))


class UnitError(SaverError):
    """Wraps a failure inside the pipeline with the unit it happened on"""

    def __init__(self, sample_id: str, unit_id: str, cause: Exception):
        self.sample_id = sample_id
        self.unit_id = unit_id
        self.cause = cause
        super().__init__(f"sample {sample_id!r}, unit {unit_id!r}: {cause}")

    def __reduce__(self):
        return (UnitError, (self.sample_id, self.unit_id, self.cause))
