"""SegmentMonkey infrastructure package: logging, settings and file output."""

from .file_utils import atomic_write_bytes, atomic_write_text, read_json, write_json
from .logger import get_logger

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "get_logger",
    "read_json",
    "write_json",
]
