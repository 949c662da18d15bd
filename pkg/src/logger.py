"""Centralized logging configuration for SegmentMonkey."""

import logging
import os
from pathlib import Path

LOG_FILE = 'segmentmonkey.log'
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'

# Verbose output is the only thing the environment controls: DEBUG=1.
LOG_LEVEL = logging.DEBUG if os.getenv("DEBUG") == "1" else logging.INFO

logging.basicConfig(
    level=LOG_LEVEL,
    format=LOG_FORMAT,
    handlers=[
        logging.FileHandler(LOG_FILE),
        logging.StreamHandler()
    ]
)
# numpy overflow/invalid warnings end up in the same log as everything else
logging.captureWarnings(True)


def get_logger(name: str) -> logging.Logger:
    """Return a module-specific logger."""
    return logging.getLogger(name)


def attach_run_log(directory) -> logging.Handler:
    """Mirror all log records into ``run.log`` inside ``directory``.

    Returns the handler so callers can detach it with :func:`detach_run_log`.
    """
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path / 'run.log', encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    """Remove and close a handler returned by :func:`attach_run_log`."""
    logging.getLogger().removeHandler(handler)
    handler.close()
