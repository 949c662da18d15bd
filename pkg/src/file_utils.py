"""Filesystem utility helpers.

Every artifact is written through a temporary file in the target directory
and moved into place with :func:`os.replace`, so readers never observe a
half-written file."""

import json
import os
import tempfile

from .logger import get_logger

logger = get_logger(__name__)


def ensure_directory(path):
    """Create ``path`` (and parents) if needed and return it."""
    os.makedirs(path, exist_ok=True)
    return path


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to ``path`` atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory(directory)
    with tempfile.NamedTemporaryFile('wb', delete=False, dir=directory) as tmp_file:
        tmp_file.write(data)
        temp_file_name = tmp_file.name
    try:
        os.replace(temp_file_name, path)
    except OSError:
        os.unlink(temp_file_name)
        raise
    logger.debug("Wrote %d bytes to %s", len(data), path)
    return path


def atomic_write_text(path, text: str):
    """Write UTF-8 ``text`` to ``path`` atomically."""
    return atomic_write_bytes(path, text.encode('utf-8'))


def dumps_json(payload) -> str:
    """Serialize ``payload`` with a stable key order and a trailing newline.

    Objects with a ``to_dict`` method (reports, aggregates) are converted first.
    """
    if hasattr(payload, "to_dict"):
        payload = payload.to_dict()
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_json(path, payload):
    """Write ``payload`` as stable-ordered JSON."""
    return atomic_write_text(path, dumps_json(payload))


def read_json(path):
    """Load a JSON document from ``path``."""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
