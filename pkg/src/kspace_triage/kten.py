"""KTEN binary tensor format.

Layout (little-endian)::

    b"KTEN" | u16 version | u8 dtype | u8 ndim | ndim x u64 dims | payload

dtype 0 is float32, dtype 1 is complex float32 stored as interleaved
(real, imag) pairs. The payload is row-major.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"KTEN"
VERSION = 1
DTYPE_F32 = 0
DTYPE_C64 = 1
_HEADER = struct.Struct("<4sHBB")


def encode_tensor(array):
    array = np.asarray(array)
    if np.iscomplexobj(array):
        code, payload = DTYPE_C64, np.ascontiguousarray(array, dtype="<c8")
    else:
        code, payload = DTYPE_F32, np.ascontiguousarray(array, dtype="<f4")
    dims = struct.pack(f"<{array.ndim}Q", *array.shape)
    return _HEADER.pack(MAGIC, VERSION, code, array.ndim) + dims + payload.tobytes()


def decode_tensor(buf, offset=0):
    """Decode one tensor starting at ``offset``; returns (array, next_offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated tensor header", offset)
    magic, version, code, ndim = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset + 4)
    if code not in (DTYPE_F32, DTYPE_C64):
        raise FormatError(f"unknown dtype code {code}", offset + 6)
    pos = offset + _HEADER.size
    if len(buf) - pos < 8 * ndim:
        raise FormatError("truncated dimension list", pos)
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    dtype = np.dtype("<c8") if code == DTYPE_C64 else np.dtype("<f4")
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}", pos)
    array = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims)
    native = np.complex64 if code == DTYPE_C64 else np.float32
    return array.astype(native), pos + nbytes


def save_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path):
    buf = Path(path).read_bytes()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return array
