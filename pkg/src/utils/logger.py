import logging
import os
from contextlib import contextmanager
from contextvars import ContextVar
from logging.handlers import RotatingFileHandler
from typing import Iterator, Optional

from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = "brain_attrib"
NO_STAGE = "-"

FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(stage)s] %(message)s"
CONSOLE_FORMAT = "[%(stage)s] %(message)s"

_current_stage: ContextVar[str] = ContextVar("pipeline_stage", default=NO_STAGE)


class StageFilter(logging.Filter):
    """Stamps each record with the pipeline stage that emitted it."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "stage"):
            record.stage = _current_stage.get()
        return True


@contextmanager
def log_stage(stage: str) -> Iterator[None]:
    """Tag every log record emitted inside the block with a stage name."""
    token = _current_stage.set(stage)
    try:
        yield
    finally:
        _current_stage.reset(token)


def current_stage() -> str:
    return _current_stage.get()


def setup_logger(
    name: str,
    log_file: Optional[str] = None,
    level: int = logging.INFO,
    console_output: bool = True
) -> logging.Logger:
    """Set up a logger with a rotating file handler and a rich stderr handler.

    Both handlers prefix messages with the current pipeline stage (see log_stage),
    so one log file can hold a whole synth-to-report run.

    Args:
        name: Name of the logger
        log_file: Path to log file (optional)
        level: Logging level
        console_output: Whether to output logs to the console

    Returns:
        Logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    if logger.hasHandlers():
        logger.handlers.clear()

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file, maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8"
        )
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        file_handler.addFilter(StageFilter())
        logger.addHandler(file_handler)

    if console_output:
        # stderr keeps stdout clean for command output
        console_handler = RichHandler(
            console=Console(stderr=True), show_time=False, show_path=False, markup=False
        )
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        console_handler.addFilter(StageFilter())
        logger.addHandler(console_handler)

    return logger


# Default application logger
app_logger = setup_logger(
    LOGGER_NAME,
    os.path.join(os.getcwd(), 'logs', f'{LOGGER_NAME}.log')
    if os.environ.get('LOG_TO_FILE', 'False').lower() == 'true'
    else None
)
