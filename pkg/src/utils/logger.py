import logging
import os
import sys
from pathlib import Path
from typing import Optional

from rich.logging import RichHandler
from singleton_decorator import singleton

LOG_FORMAT = "%(asctime)s - %(levelname).3s - %(filename)s:%(lineno).3d - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


@singleton
class Logger:
    def __init__(self):
        """Initialize the singleton logger instance."""
        self._logger = logging.getLogger("SonarSlam")
        self._logger.setLevel(os.getenv("SSS_SLAM_LOG_LEVEL", "INFO").upper())
        self._logger.propagate = False  # Prevent duplicate log entries from root
        self._run_handler: Optional[logging.Handler] = None

        # Define log format
        FORMAT = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

        # Console handler, rich when attached to a terminal
        if sys.stderr.isatty():
            console_handler = RichHandler(show_path=True, rich_tracebacks=True)
            console_handler.setFormatter(logging.Formatter("%(message)s", datefmt=DATE_FORMAT))
        else:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(FORMAT)
        self._logger.addHandler(console_handler)

        # Suppress verbose logs globally
        logging.getLogger("langgraph").setLevel(logging.WARNING)

    def get_logger(self):
        """Return the logger instance."""
        return self._logger

    def attach_run_log(self, path: Path) -> None:
        """Mirror all records into a run log file, replacing a previous run log."""
        self.detach_run_log()
        handler = logging.FileHandler(path, mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
        self._logger.addHandler(handler)
        self._run_handler = handler

    def detach_run_log(self) -> None:
        if self._run_handler is not None:
            self._logger.removeHandler(self._run_handler)
            self._run_handler.close()
            self._run_handler = None


# Create a global logger instance
logger = Logger().get_logger()
