"""Binary matrix container shared by embeddings, probe models and spectrograms.

Layout (all integers little-endian)::

    magic      4 bytes
    version    u32
    dim        u32     columns
    count      u64     rows
    payload    count * dim values (dtype fixed per magic)
    trailer    UTF-8 JSON metadata
    offset     u64     byte offset of the trailer
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFile

VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_OFFSET = struct.Struct("<Q")

# magic -> payload dtype
DTYPES = {
    b"AEMB": np.dtype("<f4"),
    b"AMAT": np.dtype("<f4"),
    b"APRB": np.dtype("<f8"),
}


def write_container(path, magic: bytes, matrix, meta: dict) -> None:
    dtype = DTYPES[magic]
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    count, dim = matrix.shape
    payload = np.ascontiguousarray(matrix, dtype=dtype).tobytes()
    trailer = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    offset = _HEADER.size + len(payload)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, dim, count))
        fh.write(payload)
        fh.write(trailer)
        fh.write(_OFFSET.pack(offset))


def read_container(path, magic: bytes):
    """Return ``(matrix, meta)``; raises FormatError / TruncatedFile."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: shorter than the {_HEADER.size}-byte header")
    got_magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dtype = DTYPES[magic]
    end = _HEADER.size + count * dim * dtype.itemsize
    if end + _OFFSET.size > len(data):
        raise TruncatedFile(
            f"{path}: header declares {count}x{dim} values but the file holds only "
            f"{len(data)} bytes"
        )
    (offset,) = _OFFSET.unpack_from(data, len(data) - _OFFSET.size)
    if offset != end:
        raise FormatError(f"{path}: trailer offset {offset} does not follow payload end {end}")
    matrix = np.frombuffer(data, dtype=dtype, count=count * dim, offset=_HEADER.size)
    matrix = matrix.reshape(count, dim).copy()
    try:
        meta = json.loads(data[end : len(data) - _OFFSET.size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata trailer ({exc})") from exc
    return matrix, meta
