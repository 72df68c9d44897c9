"""SKT1 tensor file format.

Layout: magic bytes ``SKT1``, one u8 rank, rank little-endian u32 dims, then
the float32 little-endian payload in row-major order.  The same record
encoding is reused inside checkpoint archives, so the encode/decode pair
works on in-memory buffers as well as files.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import DataError

MAGIC = b"SKT1"


class SktError(DataError):
    pass


class BadMagicError(SktError):
    pass


class TruncatedPayloadError(SktError):
    pass


class SizeMismatchError(SktError):
    pass


def pack_tensor(arr: np.ndarray) -> bytes:
    """Encode an array as one SKT1 record (cast to float32)."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"rank {arr.ndim} not representable")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"dims must be positive, got {arr.shape}")
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one SKT1 record at ``offset``; returns (array, bytes consumed)."""
    view = memoryview(buf)[offset:]
    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise BadMagicError(f"bad magic at offset {offset}: expected {MAGIC!r}")
    if len(view) < 5:
        raise TruncatedPayloadError("truncated header: rank byte missing")
    rank = view[4]
    dims_end = 5 + 4 * rank
    if len(view) < dims_end:
        raise TruncatedPayloadError(f"truncated header: expected {rank} u32 dims")
    dims = struct.unpack(f"<{rank}I", view[5:dims_end])
    count = 1
    for d in dims:
        count *= d
    payload_len = count * 4
    if len(view) < dims_end + payload_len:
        raise TruncatedPayloadError(
            f"truncated payload: header promises {payload_len} bytes, "
            f"{len(view) - dims_end} present"
        )
    arr = np.frombuffer(view[dims_end : dims_end + payload_len], dtype="<f4").reshape(dims)
    return arr.copy(), dims_end + payload_len


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, consumed = unpack_tensor(buf)
    if consumed != len(buf):
        raise SizeMismatchError(
            f"size mismatch in {path}: header accounts for {consumed} bytes, "
            f"file has {len(buf)}"
        )
    return arr


def read_header(path) -> tuple:
    """Dims recorded in the header, without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(5 + 4 * 255)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BadMagicError(f"bad magic in {path}: expected {MAGIC!r}")
    if len(head) < 5:
        raise TruncatedPayloadError(f"truncated header in {path}")
    rank = head[4]
    dims_end = 5 + 4 * rank
    if len(head) < dims_end:
        raise TruncatedPayloadError(f"truncated header in {path}: {rank} dims promised")
    return struct.unpack(f"<{rank}I", head[5:dims_end])
