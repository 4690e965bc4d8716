"""TQT1 binary tensor container.

Layout (all integers little-endian):

    bytes 0-3    magic "TQT1"
    u32          dtype code (0=FP32, 1=I8, 2=packed-u4, 3=packed-u2, 4=packed-u8)
    u32          ndim (always 2)
    ndim x u64   dims; for packed dtypes the stored byte shape (rows, row_bytes)
    u32          logical cols (packed dtypes only)
    ...          raw row-major payload
"""

import struct
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, TurboAttnError
from .tensor_core import MatrixF32, MatrixI8, PackedMatrix, packed_row_bytes

MAGIC = b"TQT1"
TENSOR_NDIM = 2

_PREAMBLE = struct.Struct("<4sII")
_DIM = struct.Struct("<Q")
_LOGICAL_COLS = struct.Struct("<I")

Tensor = MatrixF32 | MatrixI8 | PackedMatrix


class DType(IntEnum):
    """Element type codes stored in the TQT1 header."""

    FP32 = 0
    I8 = 1
    PACKED_U4 = 2
    PACKED_U2 = 3
    PACKED_U8 = 4


_PACKED_BITS = {DType.PACKED_U4: 4, DType.PACKED_U2: 2, DType.PACKED_U8: 8}
_BITS_TO_DTYPE = {bits: dtype for dtype, bits in _PACKED_BITS.items()}


class TensorFormatError(TurboAttnError):
    """A TQT1 byte stream is malformed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_tensor(tensor: Tensor) -> bytes:
    """Serialize a tensor to TQT1 bytes."""
    if isinstance(tensor, MatrixF32):
        dtype, dims, payload = DType.FP32, tensor.shape, tensor.data.astype("<f4").tobytes()
        extra = b""
    elif isinstance(tensor, MatrixI8):
        dtype, dims, payload = DType.I8, tensor.shape, tensor.data.astype("i1").tobytes()
        extra = b""
    else:
        dtype = _BITS_TO_DTYPE[tensor.bits]
        dims = (tensor.rows, tensor.row_bytes)
        payload = tensor.data.tobytes()
        extra = _LOGICAL_COLS.pack(tensor.cols)

    header = _PREAMBLE.pack(MAGIC, int(dtype), TENSOR_NDIM)
    header += b"".join(_DIM.pack(dim) for dim in dims)
    return header + extra + payload


def decode_tensor(buffer: bytes) -> Tensor:
    """Parse TQT1 bytes back into a tensor.

    Raises:
        TensorFormatError: On bad magic, unknown dtype, bad rank, truncation
            or trailing bytes
    """
    if len(buffer) < _PREAMBLE.size:
        raise TensorFormatError("Truncated header", len(buffer))
    magic, dtype_code, ndim = _PREAMBLE.unpack_from(buffer, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}", 0)
    try:
        dtype = DType(dtype_code)
    except ValueError:
        raise TensorFormatError(f"Unknown dtype code {dtype_code}", 4) from None
    if ndim != TENSOR_NDIM:
        raise TensorFormatError(f"Unsupported ndim {ndim}", 8)

    offset = _PREAMBLE.size
    dims_end = offset + ndim * _DIM.size
    if len(buffer) < dims_end:
        raise TensorFormatError("Truncated dimensions", len(buffer))
    rows, cols = (_DIM.unpack_from(buffer, offset + i * _DIM.size)[0] for i in range(ndim))
    offset = dims_end

    logical_cols = cols
    if dtype in _PACKED_BITS:
        if len(buffer) < offset + _LOGICAL_COLS.size:
            raise TensorFormatError("Truncated logical cols field", len(buffer))
        (logical_cols,) = _LOGICAL_COLS.unpack_from(buffer, offset)
        if packed_row_bytes(logical_cols, _PACKED_BITS[dtype]) != cols:
            raise TensorFormatError(
                f"Logical cols {logical_cols} inconsistent with {cols} bytes per row", offset
            )
        offset += _LOGICAL_COLS.size

    itemsize = 4 if dtype is DType.FP32 else 1
    expected = rows * cols * itemsize
    available = len(buffer) - offset
    if available < expected:
        raise TensorFormatError(
            f"Truncated payload: expected {expected} bytes, found {available}", len(buffer)
        )
    if available > expected:
        raise TensorFormatError(f"{available - expected} trailing bytes", offset + expected)
    payload = buffer[offset : offset + expected]

    if dtype is DType.FP32:
        values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
        try:
            return MatrixF32(values)
        except ConfigError as e:
            raise TensorFormatError(str(e), offset) from e
    if dtype is DType.I8:
        codes = np.frombuffer(payload, dtype="i1").reshape(rows, cols)
        try:
            return MatrixI8(codes)
        except ConfigError as e:
            raise TensorFormatError(str(e), offset) from e
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(rows, cols)
    return PackedMatrix(rows=rows, cols=logical_cols, bits=_PACKED_BITS[dtype], data=packed)


def save_tensor(path: Path | str, tensor: Tensor) -> None:
    """Write a tensor to a TQT1 file."""
    Path(path).write_bytes(encode_tensor(tensor))


def load_tensor(path: Path | str) -> Tensor:
    """Read a tensor from a TQT1 file."""
    return decode_tensor(Path(path).read_bytes())


def load_matrix_f32(path: Path | str) -> MatrixF32:
    """Read a TQT1 file that must hold an FP32 matrix."""
    tensor = load_tensor(path)
    if not isinstance(tensor, MatrixF32):
        raise TensorFormatError(f"{path} holds {type(tensor).__name__}, expected FP32", 4)
    return tensor
