from dataclasses import dataclass, field
import logging
from pathlib import Path
import struct

import numpy as np

from spectral_diffusion.utils.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

MAGIC = b"SPDM"
VERSION = 1


@dataclass
class Checkpoint:
    """
    Persisted training state.

    Attributes:
        config_echo (str): key = value text of the run configuration, schedule included.
        tensors (dict[str, np.ndarray]): Named float64 parameters in layer order.
        version (int): Binary format version.
    """
    config_echo: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """
    Layout, little-endian: magic | version u32 | echo length u32 + UTF-8 |
    tensor count u32 | per tensor: name length u16 + UTF-8, ndim u8,
    dims u32 each, float64 payload.
    """
    echo = ckpt.config_echo.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(echo)), echo, struct.pack("<I", len(ckpt.tensors))]
    for name, values in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        values = np.asarray(values, dtype=np.float64)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(values.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            logger.error("Checkpoint truncated at byte %d (needed %d more)", self.pos, count)
            raise CheckpointTruncatedError(
                f"Checkpoint ends at byte {len(self.data)}, header declares at least {self.pos + count}"
            )
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Raises:
        CheckpointFormatError: Bad magic or undecodable text.
        CheckpointVersionError: Unsupported version.
        CheckpointTruncatedError: Length disagrees with the declared payload.
    """
    if data[:4] != MAGIC:
        logger.error("Bad checkpoint magic %r", data[:4])
        raise CheckpointFormatError(f"Bad magic bytes {data[:4]!r}, expected {MAGIC!r}")
    reader = _Reader(data)
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        logger.error("Checkpoint version %d is not supported", version)
        raise CheckpointVersionError(f"Checkpoint version {version} is not supported (expected {VERSION})")
    (echo_length,) = reader.unpack("<I")
    try:
        echo = reader.take(echo_length).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointFormatError("Config echo is not valid UTF-8") from e

    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError("Tensor name is not valid UTF-8") from e
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(8 * size)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)

    if reader.pos != len(data):
        logger.error("Checkpoint has %d trailing bytes", len(data) - reader.pos)
        raise CheckpointTruncatedError(
            f"Checkpoint is {len(data)} bytes, header declares {reader.pos}"
        )
    return Checkpoint(echo, tensors, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))
    logger.info("Saved checkpoint with %d tensors to %s", len(ckpt.tensors), path)


def load_checkpoint(path) -> Checkpoint:
    """Reads a checkpoint; OSError propagates when the file cannot be read."""
    ckpt = decode_checkpoint(Path(path).read_bytes())
    logger.info("Loaded checkpoint with %d tensors from %s", len(ckpt.tensors), path)
    return ckpt
