# logger.py
"""
Centralized logging configuration for the dyno lab.

Handlers live on the package logger (`src`) only: console, a daily rotating
`dyno_YYYYMMDD.log` and a rotating `errors.log`. Module loggers carry no
handlers of their own and propagate to it, so every record reaches one set of
files no matter how many modules log.
"""
import logging
import logging.handlers
import os
from datetime import datetime
from pathlib import Path
from typing import Optional

PACKAGE = "src"

DEFAULT_LOG_LEVEL = logging.INFO
DEFAULT_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DETAILED_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s:%(funcName)s:%(lineno)d | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

MAX_LOG_BYTES = 10 * 1024 * 1024  # 10MB
BACKUP_COUNT = 5


def logs_dir() -> Path:
    """$DYNO_LOG_DIR, else <$DYNO_OUT>/logs, else ./logs; created on first use."""
    if os.getenv("DYNO_LOG_DIR"):
        path = Path(os.environ["DYNO_LOG_DIR"])
    elif os.getenv("DYNO_OUT"):
        path = Path(os.environ["DYNO_OUT"]) / "logs"
    else:
        path = Path("logs")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _file_logging_enabled() -> bool:
    return os.getenv("DYNO_LOG_TO_FILE", "1").strip().lower() not in ("0", "false", "no")


def _rotating(path: Path, level: int, formatter: logging.Formatter) -> logging.Handler:
    handler = logging.handlers.RotatingFileHandler(
        path, maxBytes=MAX_LOG_BYTES, backupCount=BACKUP_COUNT, encoding="utf-8"
    )
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logger(
    name: str,
    level: int = DEFAULT_LOG_LEVEL,
    log_to_file: bool = True,
    log_to_console: bool = True,
    detailed: bool = False,
) -> logging.Logger:
    """
    Attach console and file handlers to logger `name` (once).

    Args:
        name: Logger name; `get_logger` calls this for the package logger only
        level: Logging level for the logger and its non-error handlers
        log_to_file: Write `dyno_YYYYMMDD.log` and `errors.log`
            (also requires DYNO_LOG_TO_FILE to be unset or truthy)
        log_to_console: Echo records to stderr
        detailed: Add function name and line number to each record

    Example:
        >>> logger = setup_logger("scratch", log_to_file=False, detailed=True)
        >>> logger.info("ER over 16 episodes: avg 7.412, ratio 0.3706 (d_a=20, d_v=1024)")
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    logger.setLevel(level)
    formatter = logging.Formatter(DETAILED_FORMAT if detailed else DEFAULT_FORMAT, datefmt=DATE_FORMAT)

    if log_to_console:
        console = logging.StreamHandler()
        console.setLevel(level)
        console.setFormatter(formatter)
        logger.addHandler(console)

    if log_to_file and _file_logging_enabled():
        directory = logs_dir()
        logger.addHandler(_rotating(directory / f"dyno_{datetime.now():%Y%m%d}.log", level, formatter))
        logger.addHandler(_rotating(directory / "errors.log", logging.ERROR, formatter))

    logger.propagate = False
    return logger


def _in_package(name: str) -> bool:
    return name == PACKAGE or name.startswith(PACKAGE + ".")


def get_logger(name: str) -> logging.Logger:
    """
    Module logger. Names under `src` share the package handlers; anything else
    (scripts, `__main__`) gets its own via `setup_logger`.
    """
    if not _in_package(name):
        return setup_logger(name)
    setup_logger(PACKAGE)
    return logging.getLogger(name)


def set_log_level(logger: logging.Logger, level: int):
    """Set level on `logger` and its handlers; the errors.log handler stays at ERROR."""
    logger.setLevel(level)
    for handler in logger.handlers:
        if handler.level != logging.ERROR:
            handler.setLevel(level)


def set_package_log_level(level: int, name: Optional[str] = None):
    """`--debug` entry point: retune the package logger (or `name`) and its handlers."""
    set_log_level(setup_logger(name or PACKAGE), level)


def configure_external_loggers():
    """Reduce verbosity of third-party libraries."""
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


configure_external_loggers()
