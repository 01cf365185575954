import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

from core.config import get_settings, get_log_dir

settings = get_settings()


def _build_formatter(json_output: bool) -> logging.Formatter:
    if json_output:
        return jsonlogger.JsonFormatter(settings.LOG_FORMAT)
    return logging.Formatter(settings.LOG_FORMAT)


def setup_logging(level: Optional[str] = None, json_output: Optional[bool] = None) -> None:
    """Configure logging for the application.

    Console output goes to stderr so that machine-readable listings on stdout
    stay parseable. A file handler is added when LOG_FILE is set.

    Args:
        level: Overrides LOG_LEVEL when given
        json_output: Overrides LOG_JSON when given
    """
    level = level or settings.LOG_LEVEL
    json_output = settings.LOG_JSON if json_output is None else json_output

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    formatter = _build_formatter(json_output)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)
    root_logger.addHandler(console_handler)

    if settings.LOG_FILE:
        file_handler = logging.FileHandler(get_log_dir() / settings.LOG_FILE)
        file_handler.setFormatter(formatter)
        file_handler.setLevel(level)
        root_logger.addHandler(file_handler)


def get_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """Get a logger instance with the specified name and level"""
    logger = logging.getLogger(name)

    if level:
        logger.setLevel(level)
    else:
        logger.setLevel(settings.LOG_LEVEL)

    # Prevent propagation to root logger if handlers already exist
    if logger.handlers:
        logger.propagate = False

    return logger


def get_simulation_logger() -> logging.Logger:
    """Get logger for path integration and ensembles"""
    return get_logger("stochham.simulation")


def get_diagnostics_logger() -> logging.Logger:
    """Get logger for structural checks"""
    return get_logger("stochham.diagnostics")


def get_cli_logger() -> logging.Logger:
    """Get logger for the batch front-end"""
    return get_logger("stochham.cli")
