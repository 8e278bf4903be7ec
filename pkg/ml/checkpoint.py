"""
CSPL1 parameter files.

Layout: the magic ``CSPL1`` followed by one record per tensor until end of
file. A record is ``name_length:u32 | name:utf-8 | rank:u32 | dims:u32*rank |
values:f64*prod(dims)``, everything little-endian.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from ml.numerics import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"CSPL1"


def encode_checkpoint(tensors):
    chunks = [MAGIC]
    for name, value in tensors.items():
        array = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload):
    if payload[:len(MAGIC)] != MAGIC:
        raise ValueError("not a CSPL1 checkpoint")
    tensors = {}
    offset = len(MAGIC)
    try:
        while offset < len(payload):
            (name_length,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            tensors[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"truncated CSPL1 checkpoint at byte {offset}") from exc
    return tensors


def save_checkpoint(path, tensors):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    logger.info(f"Wrote {len(tensors)} tensors to {path}")


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        logger.error(f"Checkpoint not found: {path}")
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
