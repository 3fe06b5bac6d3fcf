"""
Error Handling for the QLDS toolkit
Implements the exception hierarchy, exit-code mapping, error accounting and retrying file reads
"""

import errno
from pathlib import Path
from typing import Dict, Any, Optional, Union
from tenacity import retry, stop_after_attempt, wait_exponential, retry_if_exception_type
from src.core.structured_logging import get_structured_logger, emit_metric

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_TRANSIENT_ERRNOS = {errno.EAGAIN, errno.EINTR, errno.ETIMEDOUT, errno.EBUSY}


class QLDSError(Exception):
    """Base exception for all toolkit errors"""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: Dict[str, Any] = context


class ValidationError(QLDSError):
    """Raised when inputs or parameters violate a documented precondition"""
    exit_code = EXIT_VALIDATION


class ParseError(ValidationError):
    """Raised when an input file cannot be parsed"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None, **context: Any):
        super().__init__(message, row=row, column=column, **context)
        self.row = row
        self.column = column


class LabelDomainError(ValidationError):
    """Raised when a label is outside the accepted {-1,+1} / {0,1} encodings"""
    pass


class MissingTruth(ValidationError):
    """Raised when ground-truth unlabeled labels are required but absent"""
    pass


class InsufficientSamples(ValidationError):
    """Raised when a class or split has too few samples for the requested operation"""
    pass


class DimensionMismatch(ValidationError):
    """Raised when array shapes disagree"""
    pass


class ConfigError(ValidationError):
    """Raised when a configuration key or value is invalid"""
    pass


class NumericalError(QLDSError):
    """Raised when a numerical procedure cannot produce a valid result"""
    exit_code = EXIT_NUMERICAL


class SingularMatrix(NumericalError):
    """Raised when a factorization pivot falls below the singularity threshold"""
    pass


class NoConvergence(NumericalError):
    """Raised when an iterative method exhausts its iteration cap"""
    pass


class NonConvex(NumericalError):
    """Raised when lambda does not exceed the convexity threshold"""
    pass


class InvalidRegime(NumericalError):
    """Raised when the fixed-point solution leaves the admissible region"""
    pass


class DegenerateTheory(NumericalError):
    """Raised when predicted score statistics are degenerate"""
    pass


class DivergenceDetected(NumericalError):
    """Raised when gradient training produces a non-finite loss"""
    pass


class AllPointsInvalid(NumericalError):
    """Raised when every grid point of a selection was skipped"""
    pass


class DataIOError(QLDSError):
    """Raised when reading or writing files fails"""
    exit_code = EXIT_IO


class TransientIOError(DataIOError):
    """Raised for file-system errors worth retrying"""
    pass


class ErrorHandler:
    """Centralized error accounting and conversion"""

    def __init__(self):
        self.logger = get_structured_logger("error_handler")
        self.error_counts: Dict[str, int] = {}

    def log_error(self, error: Exception, context: Optional[Dict[str, Any]] = None):
        """Log error with structured context"""
        error_type = type(error).__name__
        self.error_counts[error_type] = self.error_counts.get(error_type, 0) + 1

        self.logger.error(
            "qlds_error_occurred",
            error_type=error_type,
            error_message=str(error),
            error_count=self.error_counts[error_type],
            context=context or {},
        )

        emit_metric(
            "qlds_error_count",
            1,
            dimensions={"error_type": error_type}
        )

    def exit_code_for(self, error: BaseException) -> int:
        """Map an exception to the CLI exit code"""
        if isinstance(error, QLDSError):
            return error.exit_code
        if isinstance(error, OSError):
            return EXIT_IO
        return 1

    def error_document(self, error: BaseException) -> Dict[str, Any]:
        """Machine-readable error description"""
        context = getattr(error, "context", {}) or {}
        return {
            "error_type": type(error).__name__,
            "message": str(error),
            "exit_code": self.exit_code_for(error),
            "context": {key: value for key, value in context.items() if value is not None},
        }

    def handle_os_error(self, error: OSError, path: Union[str, Path] = "") -> DataIOError:
        """Convert OS errors to toolkit I/O errors"""
        context = {"path": str(path), "errno": error.errno}

        if error.errno in _TRANSIENT_ERRNOS:
            converted: DataIOError = TransientIOError(f"Transient I/O failure on {path}: {error}", **context)
        elif isinstance(error, FileNotFoundError):
            converted = DataIOError(f"File not found: {path}", **context)
        elif isinstance(error, PermissionError):
            converted = DataIOError(f"Permission denied: {path}", **context)
        else:
            converted = DataIOError(f"I/O failure on {path}: {error}", **context)

        self.log_error(converted, context)
        return converted


error_handler = ErrorHandler()


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(TransientIOError),
    reraise=True
)
def read_text(path: Union[str, Path]) -> str:
    """Read a UTF-8 text file, retrying transient file-system failures"""
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise error_handler.handle_os_error(e, path) from e
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not valid UTF-8 text (byte {e.start})", path=str(path)) from e
