import logging
from unittest import mock

import pytest

from sfcnn.logs import close_logger, setup_app_logger, setup_progress_logger, setup_run_logger


@pytest.fixture
def mock_logging_handlers():
    with mock.patch("logging.FileHandler") as mock_file_handler, mock.patch(
        "logging.StreamHandler"
    ) as mock_stream_handler:
        yield mock_file_handler, mock_stream_handler


@pytest.fixture
def mock_os_path_join():
    with mock.patch("os.path.join", return_value="mocked_path/log.txt") as mock_join:
        yield mock_join


def test_setup_run_logger(mock_logging_handlers, mock_os_path_join):
    mock_file_handler, mock_stream_handler = mock_logging_handlers
    mock_file_handler.return_value.level = logging.INFO
    mock_stream_handler.return_value.level = logging.INFO

    logger = setup_run_logger("test_run_logger", "/mocked_path")

    assert logger.name == "test_run_logger"
    assert logger.level == logging.DEBUG
    assert len(logger.handlers) == 2
    assert isinstance(logger.handlers[0], mock.MagicMock)
    assert isinstance(logger.handlers[1], mock.MagicMock)

    mock_os_path_join.assert_called_once_with("/mocked_path", "log.txt")
    mock_file_handler.assert_called_once_with("mocked_path/log.txt")
    assert logger.handlers[0].level == logging.INFO
    assert logger.handlers[1].level == logging.INFO


def test_setup_progress_logger(mock_logging_handlers):
    mock_file_handler, _ = mock_logging_handlers

    logger = setup_progress_logger("test_progress_logger", "/mocked_path")

    assert logger.level == logging.INFO
    assert not logger.propagate
    assert len(logger.handlers) == 2
    mock_file_handler.assert_called_once_with("/mocked_path/progress.log", mode="w")
    formatter = mock_file_handler.return_value.setFormatter.call_args.args[0]
    assert formatter._fmt == "%(message)s"


def test_progress_log_holds_bare_messages(tmp_path):
    logger = setup_progress_logger("test_progress_file", str(tmp_path))
    logger.info("phase=pretrain region=all epoch=1 loss=1.5")
    close_logger(logger)

    assert (tmp_path / "progress.log").read_text() == "phase=pretrain region=all epoch=1 loss=1.5\n"
    assert logger.handlers == []


def test_setup_app_logger_replaces_handlers():
    logger = setup_app_logger("test_app_logger")
    setup_app_logger("test_app_logger", level=logging.WARNING)

    assert len(logger.handlers) == 1
    assert logger.handlers[0].level == logging.WARNING
