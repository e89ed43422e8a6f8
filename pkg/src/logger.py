"""
Logging configuration for the RNQG control toolkit.
Provides structured logging with JSON output for production.
Log records go to standard error so command output on stdout stays parseable.
"""

import sys
import logging
from pathlib import Path
from typing import Optional
import structlog
from pythonjsonlogger import jsonlogger

from src.config import settings

JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'
CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _formatter(as_json: bool) -> logging.Formatter:
    if as_json:
        return jsonlogger.JsonFormatter(fmt=JSON_FORMAT)
    return logging.Formatter(fmt=CONSOLE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')


def _install(root_logger: logging.Logger, handler: logging.Handler, level: int, as_json: bool) -> None:
    handler.setLevel(level)
    handler.setFormatter(_formatter(as_json))
    # Marked so a second setup_logging call (e.g. --quiet) replaces instead of stacking
    handler._rnqg_handler = True
    root_logger.addHandler(handler)


def setup_logging(level: Optional[str] = None) -> structlog.BoundLogger:
    """
    Configure and return a structured logger.

    Args:
        level: Override for the configured log level (e.g. "WARNING" for --quiet)

    Returns:
        Configured structlog logger instance
    """
    log_level = getattr(logging, (level or settings.log_level).upper(), logging.INFO)
    production = settings.is_production()

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    for handler in list(root_logger.handlers):
        if getattr(handler, "_rnqg_handler", False):
            root_logger.removeHandler(handler)

    _install(root_logger, logging.StreamHandler(sys.stderr), log_level, as_json=production)

    if settings.log_file:
        log_path = Path(settings.log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        _install(root_logger, logging.FileHandler(log_path), log_level, as_json=True)

    renderer = structlog.processors.JSONRenderer() if production else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )

    return structlog.get_logger()


# Global logger instance
logger = setup_logging()
