"""The ``EMTF`` binary feature container and atomic file helpers.

Layout: magic ``b"EMTF"``, version ``u8``, rank ``u8``, ``rank`` dims as
little-endian ``u32``, then little-endian float32 values in row-major order.
"""

import contextlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"EMTF"
VERSION = 1


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_emtf(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_emtf(path, array) -> None:
    atomic_write_bytes(path, encode_emtf(array))


def _parse_header(buf: bytes, source):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic, not an EMTF file")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported EMTF version {version}")
    end = 6 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    return tuple(int(d) for d in dims), end


def read_emtf_shape(path) -> tuple:
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) >= 6 and head[:4] == MAGIC:
            head += fh.read(4 * head[5])
    return _parse_header(head, path)[0]


def decode_emtf(buf: bytes, source="<bytes>") -> np.ndarray:
    dims, offset = _parse_header(buf, source)
    count = int(np.prod(dims)) if dims else 1
    if len(buf) - offset != 4 * count:
        raise FormatError(f"{source}: payload holds {(len(buf) - offset) // 4} values, header says {count}")
    return np.frombuffer(buf, dtype="<f4", offset=offset, count=count).reshape(dims).astype(np.float32)


def read_emtf(path, rank=None) -> np.ndarray:
    arr = decode_emtf(Path(path).read_bytes(), source=path)
    if rank is not None and arr.ndim != rank:
        raise FormatError(f"{path}: expected rank {rank}, found rank {arr.ndim}")
    return arr
