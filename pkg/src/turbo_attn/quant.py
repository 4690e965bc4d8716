"""Two-stage progressive quantization.

Stage one turns FP32 blocks into symmetric INT8 codes with one scale per
block (divisor 119). Stage two re-quantizes those INT8 codes asymmetrically
to 2/4 bits with small integer scales and zero points, one group per channel
of a block. Going back from stage two to stage one is integer-only.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractViolation, ShapeError
from .tensor_core import MatrixF32, MatrixI8, PackedMatrix, pack_codes

SYM_DIVISOR = 119
Q1_CODE_LIMIT = 119
RECONSTRUCT_LIMIT = 127
Q2_BITS = (2, 4, 8)
MAX_INNER_DIM = 1 << 15


class GroupAxis(str, Enum):
    """How stage-two groups are cut out of a (tokens x channels) block."""

    CHANNEL = "channel"
    TOKEN = "token"


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (np.round would tie to even)."""
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


@dataclass(frozen=True, eq=False)
class QuantBlockQ1:
    """Stage-one block: INT8 codes in [-119, 119] and one positive FP32 scale."""

    codes: MatrixI8
    scale: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"Stage-one scale must be positive and finite, got {self.scale}")
        data = self.codes.data
        if data.size and int(np.abs(data.astype(np.int16)).max()) > Q1_CODE_LIMIT:
            raise ConfigError(f"Stage-one codes must lie in [-{Q1_CODE_LIMIT}, {Q1_CODE_LIMIT}]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape


def quantize_with_scale(block: MatrixF32, scale: float) -> QuantBlockQ1:
    """Quantize with a caller-supplied scale, clamping codes to [-119, 119].

    This is the fixed-scale rule of the decode buffer; sym_quant_int8 calls it
    with the block's own scale, where the clamp never triggers.
    """
    values = block.data.astype(np.float64) / float(scale)
    codes = np.clip(round_half_away(values), -Q1_CODE_LIMIT, Q1_CODE_LIMIT)
    return QuantBlockQ1(codes=MatrixI8(codes.astype(np.int8)), scale=float(scale))


def sym_quant_int8(block: MatrixF32) -> QuantBlockQ1:
    """Symmetric INT8 quantization with scale = max|x| / 119.

    An all-zero block gets scale 1.0 and zero codes.

    Raises:
        ShapeError: If the block is empty
    """
    if block.data.size == 0:
        raise ShapeError("Cannot quantize an empty block")
    peak = float(np.abs(block.data).max())
    if peak == 0.0:
        return QuantBlockQ1(codes=MatrixI8(np.zeros(block.shape, dtype=np.int8)), scale=1.0)
    scale = float(np.float32(peak / SYM_DIVISOR))
    return quantize_with_scale(block, scale)


def dequant_q1(q: QuantBlockQ1) -> MatrixF32:
    return MatrixF32(q.codes.data.astype(np.float32) * np.float32(q.scale))


@dataclass(frozen=True, eq=False)
class QuantGroupQ2:
    """One stage-two group: packed unsigned codes, integer scale and zero point.

    parent_scale is the stage-one scale that turns reconstructed INT8 codes
    back into floats.
    """

    codes: PackedMatrix
    scale_int: int
    zero_int: int
    parent_scale: float

    def __post_init__(self) -> None:
        if self.scale_int < 1:
            raise ConfigError(f"scale_int must be >= 1, got {self.scale_int}")
        if self.codes.rows != 1:
            raise ShapeError("A stage-two group is a single packed row")

    @property
    def bits(self) -> int:
        return self.codes.bits

    def unpacked(self) -> np.ndarray:
        return self.codes.unpack()[0]


def _check_bits(bits: int) -> int:
    if bits not in Q2_BITS:
        raise ConfigError(f"Stage-two bit width must be one of {Q2_BITS}, got {bits}")
    return (1 << bits) - 1


def _asym_params(
    values: np.ndarray, levels: int, axis: int | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer scale, zero point and codes for INT8 values along `axis`."""
    lo = values.min(axis=axis, keepdims=True)
    hi = values.max(axis=axis, keepdims=True)
    # ceil((hi - lo) / levels) in integer arithmetic, floored at 1
    scale = np.maximum(1, -((lo - hi) // levels))
    zero = lo // scale
    # offset >= 0, so half-up rounding is half-away-from-zero here
    offset = values - zero * scale
    codes = np.clip((2 * offset + scale) // (2 * scale), 0, levels)
    return scale, zero, codes


def asym_quant_q2(q1_group: np.ndarray, bits: int, parent_scale: float) -> QuantGroupQ2:
    """Asymmetric stage-two quantization of one INT8 group.

    scale_int = max(1, ceil((max - min) / (2^bits - 1))), zero_int = floor(min / scale_int),
    codes = clamp(round(v / scale_int - zero_int), 0, 2^bits - 1).
    """
    levels = _check_bits(bits)
    values = np.asarray(q1_group, dtype=np.int64).ravel()
    if values.size == 0:
        raise ShapeError("Cannot quantize an empty group")
    scale, zero, codes = _asym_params(values, levels, axis=None)
    return QuantGroupQ2(
        codes=pack_codes(codes.reshape(1, -1).astype(np.uint8), bits),
        scale_int=int(scale.item()),
        zero_int=int(zero.item()),
        parent_scale=float(parent_scale),
    )


def dequant_q2_to_q1(g: QuantGroupQ2) -> np.ndarray:
    """Reconstruct INT8 codes as (code + zero_int) * scale_int, clamped to [-127, 127]."""
    codes = g.unpacked().astype(np.int32)
    restored = (codes + g.zero_int) * g.scale_int
    return np.clip(restored, -RECONSTRUCT_LIMIT, RECONSTRUCT_LIMIT).astype(np.int8)


@dataclass(frozen=True, eq=False)
class Q2Block:
    """A whole (tokens x channels) block after stage two.

    Codes are packed row by row. With channel grouping there is one
    (scale_int, zero_int) pair per column; with token grouping one per row.
    """

    codes: PackedMatrix
    scale_int: np.ndarray
    zero_int: np.ndarray
    parent_scale: float
    axis: GroupAxis = GroupAxis.CHANNEL

    def __post_init__(self) -> None:
        groups = self.codes.cols if self.axis is GroupAxis.CHANNEL else self.codes.rows
        scale = np.asarray(self.scale_int, dtype=np.int16).ravel()
        zero = np.asarray(self.zero_int, dtype=np.int16).ravel()
        if scale.shape != (groups,) or zero.shape != (groups,):
            raise ShapeError(f"Expected {groups} scale/zero pairs for {self.axis.value} grouping")
        if scale.size and int(scale.min()) < 1:
            raise ConfigError("scale_int must be >= 1 for every group")
        scale.setflags(write=False)
        zero.setflags(write=False)
        object.__setattr__(self, "scale_int", scale)
        object.__setattr__(self, "zero_int", zero)

    @property
    def bits(self) -> int:
        return self.codes.bits

    @property
    def tokens(self) -> int:
        return self.codes.rows

    @property
    def channels(self) -> int:
        return self.codes.cols

    def group(self, index: int) -> QuantGroupQ2:
        """Extract one group as a standalone QuantGroupQ2."""
        unpacked = self.codes.unpack()
        row = unpacked[:, index] if self.axis is GroupAxis.CHANNEL else unpacked[index, :]
        return QuantGroupQ2(
            codes=pack_codes(row.reshape(1, -1), self.bits),
            scale_int=int(self.scale_int[index]),
            zero_int=int(self.zero_int[index]),
            parent_scale=self.parent_scale,
        )


def asym_quant_block(
    codes: MatrixI8,
    bits: int,
    parent_scale: float,
    axis: GroupAxis = GroupAxis.CHANNEL,
) -> Q2Block:
    """Stage-two quantize a whole INT8 block, one group per channel (or token)."""
    levels = _check_bits(bits)
    values = codes.data.astype(np.int64)
    if values.size == 0:
        raise ShapeError("Cannot quantize an empty block")
    reduce_axis = 0 if axis is GroupAxis.CHANNEL else 1
    scale, zero, q2 = _asym_params(values, levels, axis=reduce_axis)
    return Q2Block(
        codes=pack_codes(q2.astype(np.uint8), bits),
        scale_int=scale.ravel(),
        zero_int=zero.ravel(),
        parent_scale=float(parent_scale),
        axis=axis,
    )


def dequant_block_to_q1(block: Q2Block) -> MatrixI8:
    codes = block.codes.unpack().astype(np.int32)
    scale = block.scale_int.astype(np.int32)
    zero = block.zero_int.astype(np.int32)
    if block.axis is GroupAxis.CHANNEL:
        scale, zero = scale[None, :], zero[None, :]
    else:
        scale, zero = scale[:, None], zero[:, None]
    restored = np.clip((codes + zero) * scale, -RECONSTRUCT_LIMIT, RECONSTRUCT_LIMIT)
    return MatrixI8(restored.astype(np.int8))


def int_dot(a_codes: np.ndarray, b_codes: np.ndarray) -> np.ndarray:
    """Integer matrix product accumulated in int32.

    Raises:
        ShapeError: If inner dimensions differ
        ContractViolation: If the inner dimension could overflow int32
    """
    a = np.asarray(a_codes)
    b = np.asarray(b_codes)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply codes of shape {a.shape} by {b.shape}")
    if a.shape[1] > MAX_INNER_DIM:
        raise ContractViolation(f"Inner dimension {a.shape[1]} exceeds {MAX_INNER_DIM}")
    return a.astype(np.int32) @ b.astype(np.int32)


def int_matmul_scaled(a: QuantBlockQ1, b: QuantBlockQ1) -> MatrixF32:
    """s_a * s_b * (codes_a @ codes_b) with an int32 accumulator."""
    acc = int_dot(a.codes.data, b.codes.data)
    return MatrixF32(a.scale * b.scale * acc.astype(np.float64))


def asym_expansion_matmul(
    a_codes: np.ndarray,
    s_a: float,
    z_a: float,
    b_codes: np.ndarray,
    s_b: float,
    z_b: float,
) -> MatrixF32:
    """Product of (A*s_a + z_a) and (B*s_b + z_b) via the four-term integer expansion.

    s_a s_b sum(A B) + s_a z_b sum_k(A) + s_b z_a sum_k(B) + K z_a z_b, where K
    is the inner dimension.
    """
    a = np.asarray(a_codes)
    b = np.asarray(b_codes)
    acc = int_dot(a, b).astype(np.float64)
    inner = a.shape[1]
    row_sums = a.astype(np.int64).sum(axis=1, keepdims=True).astype(np.float64)
    col_sums = b.astype(np.int64).sum(axis=0, keepdims=True).astype(np.float64)
    result = (
        s_a * s_b * acc
        + s_a * z_b * row_sums
        + s_b * z_a * col_sums
        + inner * z_a * z_b
    )
    return MatrixF32(result)
