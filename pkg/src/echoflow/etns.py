"""Bit-exact binary tensor container (ETNS1).

Layout, little-endian throughout:

    bytes 0-7    magic ``ETNS1\\x00\\x00\\x00``
    byte  8      dtype code (1 = IEEE-754 float32)
    byte  9      ndim
    bytes 10-11  zero padding
    then         ndim x u64 dims
    then         payload, C order (last dim fastest)

The format is deliberately dumb so that every pipeline stage can be
checked byte-for-byte and files remain readable from any language.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagicError, DimOverflowError, FormatError, TruncatedPayloadError

MAGIC = b"ETNS1\x00\x00\x00"
DTYPE_F32 = 1
_HEADER = struct.Struct("<8sBBH")

# Anything larger is assumed to be a corrupt header, not a real tensor.
MAX_ELEMENTS = 1 << 40


def tensor_to_bytes(array: np.ndarray) -> bytes:
    """Serialize ``array`` as a float32 ETNS1 segment."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim == 0 or arr.ndim > 255:
        raise FormatError(f"ndim {arr.ndim} not representable (need 1..255)")
    return (_HEADER.pack(MAGIC, DTYPE_F32, arr.ndim, 0)
            + struct.pack(f"<{arr.ndim}Q", *arr.shape)
            + arr.tobytes(order="C"))


def write_tensor(path, array: np.ndarray) -> None:
    """Write ``array`` as float32 ETNS1. Round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(array))


def tensor_from_bytes(raw: bytes, path="<bytes>") -> np.ndarray:
    """Parse one ETNS1 segment; the segment must span ``raw`` exactly.

    Raises BadMagicError / DimOverflowError / TruncatedPayloadError so
    callers can tell apart the three corruption modes.
    """
    head = raw[: _HEADER.size]
    if len(head) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than fixed header")
    magic, dtype_code, ndim, pad = _HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} != {MAGIC!r}")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    if ndim == 0:
        raise FormatError(f"{path}: ndim must be >= 1")
    if pad != 0:
        raise FormatError(f"{path}: header padding bytes not zero")
    dim_bytes = raw[_HEADER.size : _HEADER.size + 8 * ndim]
    if len(dim_bytes) < 8 * ndim:
        raise TruncatedPayloadError(f"{path}: header dims cut short")
    dims = struct.unpack(f"<{ndim}Q", dim_bytes)
    n = 1
    for d in dims:
        if d == 0 or d > MAX_ELEMENTS:
            raise DimOverflowError(f"{path}: dim {d} out of range")
        n *= d
        if n > MAX_ELEMENTS:
            raise DimOverflowError(f"{path}: element count overflows ({dims})")
    payload = raw[_HEADER.size + 8 * ndim :]
    if len(payload) != 4 * n:
        raise TruncatedPayloadError(
            f"{path}: payload {len(payload)} bytes, header promises {4 * n}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def read_tensor(path) -> np.ndarray:
    """Read an ETNS1 file back into a float32 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return tensor_from_bytes(raw, path=path)
