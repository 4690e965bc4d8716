"""Dense matrix types, FP64-accumulated matmul and sub-byte code packing.

Every other module works on these three containers:

    MatrixF32     row-major FP32 values (Q, K, V, scores, probabilities, outputs)
    MatrixI8      signed 8-bit codes in [-127, 127]
    PackedMatrix  unsigned 2/4/8-bit codes packed LSB-first into bytes

All three are immutable: the backing array is copied on construction and
marked read-only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

INT8_CODE_LIMIT = 127
PACKABLE_BITS = (2, 4, 8)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class MatrixF32:
    """Dense row-major FP32 matrix with finite values."""

    data: np.ndarray

    def __post_init__(self) -> None:
        array = np.array(self.data, dtype=np.float32, order="C")
        if array.ndim != 2:
            raise ShapeError(f"MatrixF32 needs a 2-D array, got {array.ndim}-D")
        if not np.isfinite(array).all():
            raise ConfigError("MatrixF32 values must be finite (no NaN/Inf)")
        object.__setattr__(self, "data", _frozen(array))

    @classmethod
    def from_rows(cls, rows: list[list[float]]) -> "MatrixF32":
        """Build a matrix from nested Python lists."""
        return cls(np.array(rows, dtype=np.float32))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatrixF32":
        return cls(np.zeros((rows, cols), dtype=np.float32))

    @classmethod
    def identity(cls, n: int) -> "MatrixF32":
        return cls(np.eye(n, dtype=np.float32))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def slice_rows(self, start: int, stop: int) -> "MatrixF32":
        """Return rows [start, stop) as a new matrix."""
        return MatrixF32(self.data[start:stop])

    def bit_equal(self, other: "MatrixF32") -> bool:
        """True when both matrices hold identical bits."""
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()


@dataclass(frozen=True, eq=False)
class MatrixI8:
    """Dense row-major signed 8-bit code matrix, codes in [-127, 127]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.data)
        if raw.ndim != 2:
            raise ShapeError(f"MatrixI8 needs a 2-D array, got {raw.ndim}-D")
        if raw.size and (raw.min() < -INT8_CODE_LIMIT or raw.max() > INT8_CODE_LIMIT):
            raise ConfigError(f"MatrixI8 codes must lie in [-{INT8_CODE_LIMIT}, {INT8_CODE_LIMIT}]")
        object.__setattr__(self, "data", _frozen(np.array(raw, dtype=np.int8, order="C")))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def bit_equal(self, other: "MatrixI8") -> bool:
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()


def packed_row_bytes(cols: int, bits: int) -> int:
    """Bytes needed to pack one row of `cols` codes at `bits` bits each."""
    return (cols * bits + 7) // 8


@dataclass(frozen=True, eq=False)
class PackedMatrix:
    """Unsigned codes packed LSB-first, ceil(cols * bits / 8) bytes per row."""

    rows: int
    cols: int
    bits: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.bits not in PACKABLE_BITS:
            raise ConfigError(f"Packed bit width must be one of {PACKABLE_BITS}, got {self.bits}")
        array = np.array(self.data, dtype=np.uint8, order="C")
        expected = (self.rows, packed_row_bytes(self.cols, self.bits))
        if array.shape != expected:
            raise ShapeError(f"Packed payload shape {array.shape} does not match {expected}")
        object.__setattr__(self, "data", _frozen(array))

    @property
    def row_bytes(self) -> int:
        return packed_row_bytes(self.cols, self.bits)

    @property
    def nbytes(self) -> int:
        return self.rows * self.row_bytes

    def unpack(self) -> np.ndarray:
        """Return the logical (rows, cols) uint8 code matrix."""
        per_byte = 8 // self.bits
        mask = np.uint8((1 << self.bits) - 1)
        shifts = (np.arange(per_byte) * self.bits).astype(np.uint8)
        lanes = (self.data[:, :, None] >> shifts) & mask
        codes = lanes.reshape(self.rows, self.row_bytes * per_byte)[:, : self.cols]
        return np.ascontiguousarray(codes)


def pack_codes(codes: np.ndarray, bits: int) -> PackedMatrix:
    """Pack a 2-D matrix of unsigned codes in [0, 2^bits - 1].

    Element 0 of each byte group lands in the least-significant bits.
    """
    if bits not in PACKABLE_BITS:
        raise ConfigError(f"Packed bit width must be one of {PACKABLE_BITS}, got {bits}")
    values = np.asarray(codes)
    if values.ndim != 2:
        raise ShapeError(f"pack_codes needs a 2-D array, got {values.ndim}-D")
    if values.size and (values.min() < 0 or values.max() > (1 << bits) - 1):
        raise ConfigError(f"Codes out of range for {bits}-bit packing")

    rows, cols = values.shape
    per_byte = 8 // bits
    row_bytes = packed_row_bytes(cols, bits)
    padded = np.zeros((rows, row_bytes * per_byte), dtype=np.uint16)
    padded[:, :cols] = values
    shifts = (np.arange(per_byte) * bits).astype(np.uint16)
    lanes = padded.reshape(rows, row_bytes, per_byte) << shifts
    packed = np.bitwise_or.reduce(lanes, axis=2).astype(np.uint8)
    return PackedMatrix(rows=rows, cols=cols, bits=bits, data=packed)


def matmul_f32(a: MatrixF32, b: MatrixF32) -> MatrixF32:
    """Multiply with FP64 accumulation, rounding to FP32 once at the end.

    Raises:
        ShapeError: If a.cols != b.rows
    """
    if a.cols != b.rows:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    product = a.data.astype(np.float64) @ b.data.astype(np.float64)
    return MatrixF32(product)
