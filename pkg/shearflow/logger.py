"""
Centralized Logging System for shearflow
Console output with colours, rotating log files, and structured
per-iteration records for the nonlinear solvers.
"""

import json
import logging
import sys
from pathlib import Path
from logging.handlers import RotatingFileHandler
from typing import Optional

# Attributes every LogRecord carries; anything else was attached via `extra`
_STANDARD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


def _extra_fields(record: logging.LogRecord) -> dict:
    return {k: v for k, v in vars(record).items() if k not in _STANDARD_ATTRS}


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for console output"""

    # ANSI color codes
    COLORS = {
        'DEBUG': '\033[36m',      # Cyan
        'INFO': '\033[32m',       # Green
        'WARNING': '\033[33m',    # Yellow
        'ERROR': '\033[31m',      # Red
        'CRITICAL': '\033[35m',   # Magenta
        'RESET': '\033[0m'        # Reset
    }

    def format(self, record):
        # Colour a copy so file handlers sharing the record see the plain name
        record = logging.makeLogRecord(vars(record))
        levelname = record.levelname
        if levelname in self.COLORS:
            record.levelname = f"{self.COLORS[levelname]}{levelname}{self.COLORS['RESET']}"

        return super().format(record)


class KeyValueFormatter(logging.Formatter):
    """Appends fields attached through `extra` as key=value pairs"""

    def format(self, record):
        base = super().format(record)
        fields = _extra_fields(record)
        if not fields:
            return base
        pairs = " ".join(f"{k}={_fmt_value(v)}" for k, v in sorted(fields.items()))
        return f"{base} | {pairs}"


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record (used by --log-json)"""

    def format(self, record):
        payload = {
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        payload.update(_extra_fields(record))
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True, default=str)


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.6e}"
    return str(value)


def setup_logger(
    name: str,
    log_file: Optional[str] = None,
    level: int = logging.INFO,
    console_output: bool = True,
    max_bytes: int = 10485760,  # 10MB
    backup_count: int = 5,
    log_dir: str = "logs",
) -> logging.Logger:
    """
    Set up a logger with both console and file handlers.

    Args:
        name: Logger name (typically module name)
        log_file: Optional log file name (stored in log_dir)
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        console_output: Whether to output to console
        max_bytes: Max size of log file before rotation (default 10MB)
        backup_count: Number of backup files to keep
        log_dir: Directory for rotated log files

    Returns:
        Configured logger instance

    Example:
        >>> from shearflow.logger import setup_logger
        >>> logger = setup_logger('state_solver', 'solver.log')
        >>> logger.info("Picard converged")
    """

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Prevent duplicate handlers if logger already exists
    if logger.handlers:
        return logger

    if console_output:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(ColoredFormatter('%(levelname)s | %(name)s | %(message)s'))
        logger.addHandler(console_handler)

    if log_file:
        path = Path(log_dir)
        path.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            path / log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)  # File gets everything
        file_handler.setFormatter(KeyValueFormatter(
            '%(asctime)s | %(name)s | %(levelname)s | %(funcName)s:%(lineno)d | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        logger.addHandler(file_handler)

    # Records are handled here; the root logger stays untouched
    logger.propagate = False
    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get an existing logger or create a basic one.

    Example:
        >>> from shearflow.logger import get_logger
        >>> logger = get_logger(__name__)
    """
    logger = logging.getLogger(name)

    if not logger.handlers:
        return setup_logger(name, console_output=True, level=logging.WARNING)

    return logger


def log_iteration(logger: logging.Logger, solver: str, level: int = logging.DEBUG, **fields) -> None:
    """
    Emit one structured record for a solver iteration.

    The fields (iteration, residual, step, ...) travel on the record via
    `extra`, so KeyValueFormatter / JsonLineFormatter can render them.
    """
    if not logger.isEnabledFor(level):
        return
    summary = ", ".join(f"{k}={_fmt_value(v)}" for k, v in fields.items())
    logger.log(level, f"{solver}: {summary}", extra={"solver": solver, **fields})


def attach_json_handler(stream=None, level: int = logging.INFO) -> logging.Handler:
    """Route every shearflow logger through one JSON-lines handler"""
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(JsonLineFormatter())
    for name, obj in list(logging.Logger.manager.loggerDict.items()):
        if name.startswith("shearflow") and isinstance(obj, logging.Logger):
            for old in list(obj.handlers):
                if isinstance(old, logging.StreamHandler) and not isinstance(old, RotatingFileHandler):
                    obj.removeHandler(old)
            obj.addHandler(handler)
            obj.setLevel(min(obj.level or level, level))
    return handler


def attach_file_handler(
    log_file: str,
    log_dir: str = "logs",
    max_bytes: int = 10485760,
    backup_count: int = 5,
) -> logging.Handler:
    """
    Add one rotating key=value file handler to every shearflow logger.
    Loggers are lowered to DEBUG so solver iterations reach the file;
    console handlers keep their own level.
    """
    path = Path(log_dir)
    path.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(path / log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(KeyValueFormatter(
        '%(asctime)s | %(name)s | %(levelname)s | %(funcName)s:%(lineno)d | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    ))
    for name, obj in list(logging.Logger.manager.loggerDict.items()):
        if name.startswith("shearflow") and isinstance(obj, logging.Logger):
            obj.addHandler(handler)
            obj.setLevel(logging.DEBUG)
    return handler


def detach_handler(handler: logging.Handler) -> None:
    """Remove a handler added by attach_file_handler / attach_json_handler and close it"""
    for name, obj in list(logging.Logger.manager.loggerDict.items()):
        if name.startswith("shearflow") and isinstance(obj, logging.Logger) and handler in obj.handlers:
            obj.removeHandler(handler)
    handler.close()


class LogContext:
    """Context manager for temporary log level changes"""

    def __init__(self, logger: logging.Logger, level: int):
        self.logger = logger
        self.new_level = level
        self.old_level = logger.level

    def __enter__(self):
        self.logger.setLevel(self.new_level)
        return self.logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.logger.setLevel(self.old_level)


def enable_debug_logging():
    """Enable DEBUG level for all shearflow loggers"""
    set_package_level(logging.DEBUG)


def set_package_level(level: int):
    for name, obj in list(logging.Logger.manager.loggerDict.items()):
        if name.startswith("shearflow") and isinstance(obj, logging.Logger):
            obj.setLevel(level)
            for handler in obj.handlers:
                if not isinstance(handler, RotatingFileHandler):
                    handler.setLevel(level)
