"""Binary checkpoints of trained models.

Layout (little-endian)::

    "MTCK" | u32 version=1 | u32 record length N | N bytes UTF-8 JSON record
    parameter arrays as float64, in declaration order

The JSON record holds the architecture, the model configuration, the seed,
free-form run metadata and the name and shape of every stored array.
"""

import json
import struct
from typing import Dict, NamedTuple, Optional

import numpy as np

from src.file_utils import atomic_write_bytes
from src.logger import get_logger
from .errors import FormatError, InvalidArgumentError
from .modelparams import ModelParams, TcnConfig

logger = get_logger(__name__)

MAGIC = b"MTCK"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sII")


class Checkpoint(NamedTuple):
    params: ModelParams
    seed: Optional[int]
    metadata: Dict


def encode_checkpoint(params: ModelParams, seed: Optional[int] = None, metadata: Optional[Dict] = None) -> bytes:
    record = {
        "architecture": params.architecture,
        "config": params.config.to_dict(),
        "seed": seed,
        "metadata": metadata or {},
        "parameters": [[name, list(value.shape)] for name, value in params.arrays.items()],
    }
    try:
        record_bytes = json.dumps(record, sort_keys=True).encode("utf-8")
    except TypeError as exc:
        raise InvalidArgumentError(f"checkpoint metadata is not JSON serializable: {exc}") from exc
    blobs = [value.astype("<f8").tobytes() for value in params.arrays.values()]
    return b"".join([HEADER.pack(MAGIC, FORMAT_VERSION, len(record_bytes)), record_bytes, *blobs])


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < HEADER.size:
        raise FormatError("truncated checkpoint header", len(data))
    magic, version, record_length = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    offset = HEADER.size
    if len(data) < offset + record_length:
        raise FormatError("truncated checkpoint record", len(data))
    try:
        record = json.loads(data[offset:offset + record_length].decode("utf-8"))
        config = TcnConfig.from_dict(record["config"])
        architecture = record["architecture"]
        layout = [(str(name), tuple(int(d) for d in shape)) for name, shape in record["parameters"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint record: {exc}", offset) from exc
    offset += record_length

    arrays = {}
    for name, shape in layout:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise FormatError(f"truncated parameter '{name}'", len(data))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after parameters", offset)
    try:
        params = ModelParams(architecture, config, arrays)
    except InvalidArgumentError as exc:
        raise FormatError(f"checkpoint parameters do not match their configuration: {exc}", HEADER.size) from exc
    return Checkpoint(params, record.get("seed"), record.get("metadata", {}))


def save_checkpoint(params: ModelParams, path, seed: Optional[int] = None, metadata: Optional[Dict] = None):
    """Write ``params`` with the seed and run metadata that produced them."""
    atomic_write_bytes(path, encode_checkpoint(params, seed, metadata))
    logger.info("Saved %s checkpoint (%d parameters) to %s", params.architecture, params.num_parameters, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with open(path, 'rb') as f:
        data = f.read()
    checkpoint = decode_checkpoint(data)
    logger.debug("Loaded %s checkpoint from %s", checkpoint.params.architecture, path)
    return checkpoint
