"""Tests for dense matrix types, packing and the FP64-accumulated matmul."""

import numpy as np
import pytest

from turbo_attn.errors import ConfigError, ShapeError
from turbo_attn.tensor_core import (
    MatrixF32,
    MatrixI8,
    PackedMatrix,
    matmul_f32,
    pack_codes,
    packed_row_bytes,
)


class TestMatrixF32:
    """Test FP32 matrix construction."""

    def test_from_rows(self) -> None:
        m = MatrixF32.from_rows([[1.0, 2.0], [3.0, 4.0]])
        assert m.shape == (2, 2)
        assert m.data.dtype == np.float32

    def test_rejects_non_finite(self) -> None:
        with pytest.raises(ConfigError):
            MatrixF32(np.array([[1.0, np.nan]]))
        with pytest.raises(ConfigError):
            MatrixF32(np.array([[np.inf]]))

    def test_rejects_wrong_rank(self) -> None:
        with pytest.raises(ShapeError):
            MatrixF32(np.zeros(3))

    def test_is_read_only(self) -> None:
        m = MatrixF32.zeros(2, 2)
        with pytest.raises(ValueError, match="read-only"):
            m.data[0, 0] = 1.0

    def test_copies_input(self) -> None:
        source = np.ones((2, 2), dtype=np.float32)
        m = MatrixF32(source)
        source[0, 0] = 5.0
        assert m.data[0, 0] == 1.0

    def test_slice_rows(self) -> None:
        m = MatrixF32(np.arange(12, dtype=np.float32).reshape(4, 3))
        part = m.slice_rows(1, 3)
        assert part.shape == (2, 3)
        assert part.data[0, 0] == 3.0

    def test_bit_equal(self) -> None:
        a = MatrixF32.from_rows([[0.0, 1.0]])
        b = MatrixF32.from_rows([[-0.0, 1.0]])
        assert a.bit_equal(MatrixF32.from_rows([[0.0, 1.0]]))
        assert not a.bit_equal(b)


class TestMatrixI8:
    """Test signed code matrix validation."""

    def test_accepts_full_range(self) -> None:
        m = MatrixI8(np.array([[-127, 0, 127]]))
        assert m.data.dtype == np.int8

    def test_rejects_minus_128(self) -> None:
        with pytest.raises(ConfigError):
            MatrixI8(np.array([[-128]]))


class TestPacking:
    """Test LSB-first sub-byte packing."""

    @pytest.mark.parametrize("bits", [2, 4, 8])
    def test_exhaustive_round_trip(self, bits: int) -> None:
        """Every code value survives pack/unpack at every lane position."""
        levels = 1 << bits
        codes = np.array(
            [[(row + col) % levels for col in range(13)] for row in range(levels)],
            dtype=np.uint8,
        )
        packed = pack_codes(codes, bits)
        assert np.array_equal(packed.unpack(), codes)

    def test_lowest_index_in_least_significant_bits(self) -> None:
        packed = pack_codes(np.array([[1, 2]], dtype=np.uint8), 4)
        assert packed.data.tolist() == [[0x21]]
        crumbs = pack_codes(np.array([[1, 2, 3, 0]], dtype=np.uint8), 2)
        assert crumbs.data.tolist() == [[0b00111001]]

    def test_row_bytes_round_up(self) -> None:
        assert packed_row_bytes(5, 4) == 3
        assert packed_row_bytes(5, 2) == 2
        assert packed_row_bytes(64, 4) == 32
        assert pack_codes(np.zeros((2, 5), dtype=np.uint8), 4).nbytes == 6

    def test_rejects_out_of_range_codes(self) -> None:
        with pytest.raises(ConfigError):
            pack_codes(np.array([[16]]), 4)
        with pytest.raises(ConfigError):
            pack_codes(np.array([[-1]]), 2)

    def test_rejects_unsupported_width(self) -> None:
        with pytest.raises(ConfigError):
            pack_codes(np.zeros((1, 1), dtype=np.uint8), 3)

    def test_payload_shape_checked(self) -> None:
        with pytest.raises(ShapeError):
            PackedMatrix(rows=1, cols=4, bits=4, data=np.zeros((1, 3), dtype=np.uint8))


class TestMatmulF32:
    """Test the FP64-accumulated matmul."""

    def test_identity(self, rng: np.random.Generator) -> None:
        m = MatrixF32(rng.normal(size=(3, 4)))
        assert matmul_f32(MatrixF32.identity(3), m).bit_equal(m)

    def test_scalar(self) -> None:
        result = matmul_f32(MatrixF32.from_rows([[2.0]]), MatrixF32.from_rows([[3.0]]))
        assert result.data.tolist() == [[6.0]]

    def test_matches_triple_loop(self, rng: np.random.Generator) -> None:
        a = MatrixF32(rng.normal(size=(4, 5)))
        b = MatrixF32(rng.normal(size=(5, 3)))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += float(a.data[i, k]) * float(b.data[k, j])
        result = matmul_f32(a, b)
        np.testing.assert_allclose(result.data, expected, rtol=1e-6, atol=1e-7)

    def test_within_one_ulp_on_64x64(self, rng: np.random.Generator) -> None:
        a = MatrixF32(rng.normal(size=(64, 64)))
        b = MatrixF32(rng.normal(size=(64, 64)))
        exact = a.data.astype(np.float64) @ b.data.astype(np.float64)
        result = matmul_f32(a, b).data.astype(np.float64)
        ulp = np.spacing(np.abs(exact).astype(np.float32)).astype(np.float64)
        assert (np.abs(result - exact) <= ulp).all()

    def test_dimension_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            matmul_f32(MatrixF32.zeros(2, 3), MatrixF32.zeros(2, 3))
