"""
Named-tensor checkpoint archive.

Layout (little-endian):
    magic "MMPD" | uint32 version | uint32 count
    per tensor: uint32 name length | name (utf-8) | uint32 rank | uint32 dims... | float32 payload
    uint64 checksum: first 8 bytes of sha256 over all payload bytes

Tensors are written in sorted name order, so saving a loaded archive
reproduces it byte for byte.
"""
import hashlib
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict

import numpy as np

from utils.config import config
from utils.errors import ChecksumError, FormatError, IoError
from utils.logger import logger


def _checksum(payloads) -> int:
    digest = hashlib.sha256()
    for chunk in payloads:
        digest.update(chunk)
    return struct.unpack('<Q', digest.digest()[:8])[0]


def save_checkpoint(path: str, tensors: Dict[str, np.ndarray]) -> None:
    """
    Write tensors to ``path``.

    Raises:
        IoError: If the file cannot be written
    """
    parts = [config.CHECKPOINT_MAGIC, struct.pack('<II', config.CHECKPOINT_VERSION, len(tensors))]
    payloads = []
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name], dtype='<f4')
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<I', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<I', array.ndim))
        parts.append(struct.pack(f'<{array.ndim}I', *array.shape))
        payload = array.tobytes()
        parts.append(payload)
        payloads.append(payload)
    parts.append(struct.pack('<Q', _checksum(payloads)))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(b''.join(parts))
    except OSError as e:
        raise IoError(f"Cannot write checkpoint {path}: {e}")
    logger.info(f"Checkpoint saved: {path} ({len(tensors)} tensors)")


def load_checkpoint(path: str) -> "OrderedDict[str, np.ndarray]":
    """
    Read and verify a checkpoint.

    Returns:
        Tensors by name, in file order

    Raises:
        IoError: If the file cannot be read
        FormatError: On a bad magic, version or truncated record (with byte offset)
        ChecksumError: If the payload checksum does not match
    """
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise IoError(f"Cannot read checkpoint {path}: {e}")

    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError("Checkpoint truncated", path, offset)
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    if take(4) != config.CHECKPOINT_MAGIC:
        raise FormatError("Not a checkpoint (bad magic)", path, 0)
    version, count = struct.unpack('<II', take(8))
    if version != config.CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", path, 4)

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    payloads = []
    for _ in range(count):
        (name_len,) = struct.unpack('<I', take(4))
        name_at = offset
        try:
            name = take(name_len).decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError("Tensor name is not valid UTF-8", path, name_at)
        (rank,) = struct.unpack('<I', take(4))
        shape = struct.unpack(f'<{rank}I', take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        payload = take(4 * size)
        payloads.append(payload)
        if name in tensors:
            raise FormatError(f"Duplicate tensor name {name!r}", path, name_at)
        tensors[name] = np.frombuffer(payload, dtype='<f4').reshape(shape).astype(np.float32)
    (stored,) = struct.unpack('<Q', take(8))
    if offset != len(blob):
        raise FormatError("Trailing bytes after checksum", path, offset)
    if stored != _checksum(payloads):
        raise ChecksumError(f"Checkpoint {path} failed its checksum")
    logger.debug(f"Checkpoint loaded: {path} ({count} tensors)")
    return tensors


def split_state(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Entries under ``prefix.`` with the prefix stripped."""
    cut = len(prefix) + 1
    return OrderedDict((k[cut:], v) for k, v in tensors.items() if k.startswith(prefix + "."))


def checkpoint_digest(tensors: Dict[str, np.ndarray]) -> str:
    """Hex digest identifying a set of weights."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(tensors[name], dtype='<f4').tobytes())
    return digest.hexdigest()


def join_state(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Inverse of ``split_state``."""
    return OrderedDict((f"{prefix}.{k}", v) for k, v in tensors.items())
