import logging
import os

PROGRESS_FILE_NAME = "progress.log"


def _default_formatter() -> logging.Formatter:
    return logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def setup_run_logger(logger_name: str, output_path: str) -> logging.Logger:
    """Create a logger for one CLI run, writing `log.txt` into the output folder."""
    log_file_path = os.path.join(output_path, "log.txt")

    run_logger = logging.getLogger(logger_name)
    run_logger.setLevel(logging.DEBUG)

    # Clear the default handlers
    run_logger.handlers.clear()

    formatter = _default_formatter()

    file_handler = logging.FileHandler(log_file_path)
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(formatter)

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.INFO)
    stream_handler.setFormatter(formatter)

    run_logger.addHandler(file_handler)
    run_logger.addHandler(stream_handler)

    return run_logger


def setup_progress_logger(logger_name: str, output_path: str) -> logging.Logger:
    """
    Create the training progress logger.

    The file handler writes bare messages (no timestamps) so that two identical
     runs produce byte-identical `progress.log` files.
    """
    log_file_path = os.path.join(output_path, PROGRESS_FILE_NAME)

    progress_logger = logging.getLogger(logger_name)
    progress_logger.setLevel(logging.INFO)
    progress_logger.propagate = False

    progress_logger.handlers.clear()

    file_handler = logging.FileHandler(log_file_path, mode="w")
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter("%(message)s"))

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(logging.INFO)
    stream_handler.setFormatter(_default_formatter())

    progress_logger.addHandler(file_handler)
    progress_logger.addHandler(stream_handler)

    return progress_logger


def setup_app_logger(logger_name: str, level: int = logging.INFO) -> logging.Logger:
    app_logger = logging.getLogger(logger_name)
    app_logger.setLevel(logging.DEBUG)

    # Clear the default handlers
    app_logger.handlers.clear()

    stream_handler = logging.StreamHandler()
    stream_handler.setLevel(level)
    stream_handler.setFormatter(_default_formatter())

    app_logger.addHandler(stream_handler)

    return app_logger


def close_logger(logger: logging.Logger) -> None:
    """Flush and detach every handler (file handlers keep files open otherwise)."""
    for handler in list(logger.handlers):
        handler.flush()
        handler.close()
        logger.removeHandler(handler)
