"""
Structured Logging for the QLDS toolkit
Implements JSON structured logging with run identifiers and metrics emission
"""

import os
import sys
import time
import uuid
import logging
from typing import Dict, Any, Iterator, Optional
from contextlib import contextmanager
from contextvars import ContextVar, Token
import structlog


def _add_run_id(logger: Any, method_name: str, event_dict: Dict[str, Any]) -> Dict[str, Any]:
    event_dict["run_id"] = RunContext.get_run_id()
    return event_dict


structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        _add_run_id,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
        structlog.processors.JSONRenderer()
    ],
    context_class=dict,
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)


def configure_logging(level: str = "WARNING") -> None:
    """Route log records to stderr at the given level; stdout is reserved for command output"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.WARNING))


class RunContext:
    """Run id for log correlation, scoped to the current context"""
    _run_id: ContextVar[str] = ContextVar("qlds_run_id", default="unscoped")

    @classmethod
    def get_run_id(cls) -> str:
        return cls._run_id.get()

    @classmethod
    def set_run_id(cls, run_id: str) -> Token:
        return cls._run_id.set(run_id)

    @classmethod
    def reset(cls, token: Token) -> None:
        cls._run_id.reset(token)


@contextmanager
def run_context(run_id: Optional[str] = None) -> Iterator[str]:
    """Context manager tagging every record emitted inside it with one run id"""
    if run_id is None:
        run_id = str(uuid.uuid4())

    token = RunContext.set_run_id(run_id)
    try:
        yield run_id
    finally:
        RunContext.reset(token)


def get_structured_logger(name: str) -> structlog.BoundLogger:
    """Get a structured logger; records carry the run id active when they are emitted"""
    logger = structlog.get_logger(name)
    return logger.bind(
        service="qlds",
        environment=os.getenv("QLDS_ENVIRONMENT", "development")
    )


def emit_metric(metric_name: str, value: float, dimensions: Optional[Dict[str, str]] = None):
    """Emit a metric as a structured log event"""
    logger = get_structured_logger("metrics")
    logger.info("metric_emission",
                metric_name=metric_name,
                value=value,
                dimensions=dimensions or {})


@contextmanager
def timed_operation(operation: str, **fields: Any) -> Iterator[Dict[str, Any]]:
    """Time a block, logging its duration and success and emitting a duration metric.

    Yields a mutable dict; callers may add fields that end up in the completion event.
    """
    logger = get_structured_logger("operation")
    extra: Dict[str, Any] = dict(fields)
    start_time = time.perf_counter()
    success = True
    try:
        yield extra
    except Exception:
        success = False
        raise
    finally:
        duration = time.perf_counter() - start_time
        logger.info(
            "operation_completed",
            operation=operation,
            duration_seconds=duration,
            success=success,
            **extra
        )
        emit_metric(
            "operation_duration_seconds",
            duration,
            dimensions={"operation": operation, "success": str(success)}
        )
