import logging
import sys
from unittest.mock import patch

import pytest
from pythonjsonlogger import jsonlogger

from core.logger import (
    get_cli_logger,
    get_diagnostics_logger,
    get_logger,
    get_simulation_logger,
    setup_logging,
)


@pytest.fixture
def mock_settings():
    """Create mock settings for testing."""
    with patch("core.logger.settings") as mock:
        mock.LOG_LEVEL = "DEBUG"
        mock.LOG_FORMAT = "%(name)s - %(levelname)s - %(message)s"
        mock.LOG_FILE = None
        mock.LOG_JSON = False
        yield mock


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield root
    root.handlers = handlers
    root.setLevel(level)


def test_get_logger(mock_settings):
    """Test getting a logger instance."""
    logger = get_logger("stochham.test")
    assert isinstance(logger, logging.Logger)
    assert logger.name == "stochham.test"
    assert logger.level == logging.DEBUG

    # Test with custom level
    logger = get_logger("stochham.test", level="INFO")
    assert logger.level == logging.INFO


def test_setup_logging(mock_settings, restore_root_logger):
    """Test setting up root logger."""
    setup_logging()

    root_logger = restore_root_logger
    assert root_logger.level == logging.DEBUG
    assert len(root_logger.handlers) == 1
    handler = root_logger.handlers[0]
    assert isinstance(handler, logging.StreamHandler)
    assert handler.stream is sys.stderr
    assert "%(name)s" in handler.formatter._fmt


def test_setup_logging_level_override(mock_settings, restore_root_logger):
    setup_logging(level="WARNING")
    assert restore_root_logger.level == logging.WARNING


def test_setup_logging_json(mock_settings, restore_root_logger):
    setup_logging(json_output=True)
    assert isinstance(restore_root_logger.handlers[0].formatter, jsonlogger.JsonFormatter)


def test_setup_logging_writes_file(mock_settings, restore_root_logger, tmp_path):
    mock_settings.LOG_FILE = "run.log"
    with patch("core.logger.get_log_dir", return_value=tmp_path):
        setup_logging()
        logging.getLogger("stochham.test").warning("written to file")
        for handler in restore_root_logger.handlers:
            handler.flush()
    assert len(restore_root_logger.handlers) == 2
    assert "written to file" in (tmp_path / "run.log").read_text()


def test_get_simulation_logger(mock_settings):
    logger = get_simulation_logger()
    assert logger.name == "stochham.simulation"
    assert logger.level == logging.DEBUG


def test_get_diagnostics_logger(mock_settings):
    logger = get_diagnostics_logger()
    assert logger.name == "stochham.diagnostics"
    assert logger.level == logging.DEBUG


def test_get_cli_logger(mock_settings):
    logger = get_cli_logger()
    assert logger.name == "stochham.cli"
    assert logger.level == logging.DEBUG


def test_logger_levels(mock_settings):
    """Test logger level filtering."""
    logger = get_logger("stochham.levels", level="INFO")

    assert not logger.isEnabledFor(logging.DEBUG)
    assert logger.isEnabledFor(logging.INFO)
