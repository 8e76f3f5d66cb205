"""
Binary matrix records.

    magic    8 bytes   b"NPULRN01" (prefix "NPULRN", version "01")
    dtype    uint32    0 = float32, 1 = float64, 2 = uint32
    rows     uint32
    cols     uint32
    payload  rows*cols little-endian values, row-major

All integers are little-endian.
"""
import logging
import os
import struct
from pathlib import Path
from typing import Tuple, \
    Union

import numpy as np

from app.utils.error_handlers import BadDtype, \
    BadMagic, \
    DimensionError, \
    DimensionOverflow, \
    TruncatedPayload, \
    VersionMismatch

logger = logging.getLogger(__name__)

MAGIC_PREFIX = b'NPULRN'
VERSION = b'01'
MAGIC = MAGIC_PREFIX + VERSION
HEADER = struct.Struct('<III')
MAX_ELEMENTS = 2 ** 31

DTYPE_F32 = 0
DTYPE_F64 = 1
DTYPE_U32 = 2

DTYPES = {
    DTYPE_F32: np.dtype('<f4'),
    DTYPE_F64: np.dtype('<f8'),
    DTYPE_U32: np.dtype('<u4')}
DTYPE_CODES = {
    'f32': DTYPE_F32,
    'f64': DTYPE_F64,
    'u32': DTYPE_U32}

PathLike = Union[str, os.PathLike]


def encode_matrix(matrix, dtype: str = 'f32') -> bytes:
    """Serialize a 2-D array (1-D arrays become a single column)."""
    code = DTYPE_CODES.get(dtype)
    if code is None:
        raise BadDtype(f"Unsupported storage dtype '{dtype}'")
    array = np.asarray(matrix)
    if array.ndim == 1:
        array = array.reshape(-1,
                              1)
    if array.ndim != 2:
        raise DimensionError(f"only 2-D matrices can be stored, got shape {array.shape}")
    rows, cols = array.shape
    if rows * cols > MAX_ELEMENTS:
        raise DimensionOverflow(f"matrix of {rows}x{cols} exceeds {MAX_ELEMENTS} elements")
    payload = np.ascontiguousarray(array,
                                   dtype=DTYPES[code]).tobytes()
    return MAGIC + HEADER.pack(code,
                               rows,
                               cols) + payload


def decode_matrix(buffer: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """
    Parse one matrix record starting at offset.

    Returns:
        Tuple[np.ndarray, int]: the matrix (float64 for float records, uint32
        for label records) and the offset just past the record

    Raises:
        BadMagic, VersionMismatch, BadDtype, DimensionOverflow, TruncatedPayload
    """
    magic = bytes(buffer[offset:offset + len(MAGIC)])
    if len(magic) < len(MAGIC):
        raise TruncatedPayload("file ends inside the matrix magic")
    if magic[:len(MAGIC_PREFIX)] != MAGIC_PREFIX:
        raise BadMagic(f"bad matrix magic {magic!r}")
    if magic[len(MAGIC_PREFIX):] != VERSION:
        raise VersionMismatch(f"matrix format version {magic[len(MAGIC_PREFIX):]!r} is not supported (expected {VERSION!r})")
    offset += len(MAGIC)

    if len(buffer) - offset < HEADER.size:
        raise TruncatedPayload("file ends inside the matrix header")
    code, rows, cols = HEADER.unpack_from(buffer,
                                          offset)
    offset += HEADER.size
    if code not in DTYPES:
        raise BadDtype(f"unknown dtype code {code}")
    if rows * cols > MAX_ELEMENTS:
        raise DimensionOverflow(f"matrix header claims {rows}x{cols} elements")

    dtype = DTYPES[code]
    size = rows * cols * dtype.itemsize
    if len(buffer) - offset < size:
        raise TruncatedPayload(f"payload has {len(buffer) - offset} bytes, header requires {size}")
    values = np.frombuffer(buffer,
                           dtype=dtype,
                           count=rows * cols,
                           offset=offset).reshape(rows,
                                                  cols)
    offset += size
    if code == DTYPE_U32:
        return values.astype(np.uint32), offset
    return values.astype(np.float64), offset


def save_matrix(path: PathLike, matrix, dtype: str = 'f32') -> None:
    """Write a matrix record; float64 storage keeps values bit-exact."""
    data = encode_matrix(matrix,
                         dtype)
    target = Path(path)
    target.parent.mkdir(parents=True,
                        exist_ok=True)
    target.write_bytes(data)
    logger.debug(f"Saved {dtype} matrix {np.shape(matrix)} to {target}")


def load_matrix(path: PathLike) -> np.ndarray:
    """Read a single-record matrix file; trailing bytes are rejected."""
    buffer = Path(path).read_bytes()
    matrix, offset = decode_matrix(buffer)
    if offset != len(buffer):
        raise TruncatedPayload(f"{len(buffer) - offset} unexpected trailing bytes after the matrix payload")
    return matrix
