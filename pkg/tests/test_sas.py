"""Tests for the sparse activated softmax approximation."""

import math

import numpy as np
import pytest

from turbo_attn.errors import ConfigError, ContractViolation, ShapeError
from turbo_attn.sas import (
    DEFAULT_N_R,
    SasConfig,
    build_lut,
    exact_softmax_rows,
    exp_error_table,
    poly_eval,
    sas_exp,
    sas_exp_array,
    sas_softmax_rows,
    softmax_fidelity,
)
from turbo_attn.tensor_core import MatrixF32


@pytest.fixture
def cfg() -> SasConfig:
    return build_lut(DEFAULT_N_R)


class TestBuildLut:
    """Test lookup table construction."""

    def test_default_table(self) -> None:
        cfg = build_lut(-6)
        assert len(cfg.lut) == 8
        assert cfg.lut[0] == 1.0
        assert cfg.lut[-1] == 0.0
        assert cfg.sentinel_index == 7
        np.testing.assert_allclose(cfg.lut[:7], np.exp(-np.arange(7)), rtol=1e-6)

    def test_smallest_table(self) -> None:
        cfg = build_lut(-1)
        np.testing.assert_allclose(cfg.lut, [1.0, math.exp(-1), 0.0], rtol=1e-6)

    def test_entry_three(self) -> None:
        assert float(build_lut(-6).lut[3]) == pytest.approx(0.049787, abs=1e-6)

    def test_strictly_decreasing_before_sentinel(self) -> None:
        lut = build_lut(-12).lut
        assert (np.diff(lut[:-1]) < 0).all()

    @pytest.mark.parametrize("n_r", [0, 3])
    def test_rejects_non_negative(self, n_r: int) -> None:
        with pytest.raises(ConfigError):
            build_lut(n_r)

    def test_table_is_read_only(self) -> None:
        with pytest.raises(ValueError, match="read-only"):
            build_lut(-2).lut[0] = 0.5


class TestPolyEval:
    """Test the cubic fit of e^{-f}."""

    def test_constant_term(self) -> None:
        assert poly_eval(0.0) == pytest.approx(0.9996, abs=1e-7)

    def test_interval_end(self) -> None:
        assert poly_eval(1.0) == pytest.approx(0.3675, abs=1e-6)

    def test_fit_error_on_dense_grid(self) -> None:
        grid = np.linspace(0.0, 1.0, 10_000, endpoint=False)
        approx = np.array([poly_eval(float(f)) for f in grid])
        assert np.abs(approx - np.exp(-grid)).max() <= 1e-3

    @pytest.mark.parametrize("f", [-0.1, 1.5])
    def test_rejects_out_of_range(self, f: float) -> None:
        with pytest.raises(ContractViolation):
            poly_eval(f)


class TestSasExp:
    """Test the LUT x polynomial exponential."""

    def test_zero(self, cfg: SasConfig) -> None:
        assert sas_exp(0.0, cfg) == pytest.approx(0.9996, abs=1e-7)

    def test_below_threshold_is_zero(self, cfg: SasConfig) -> None:
        assert sas_exp(-10.0, cfg) == 0.0

    def test_threshold_itself_is_kept(self, cfg: SasConfig) -> None:
        assert sas_exp(-6.0, cfg) == pytest.approx(math.exp(-6) * 0.9996, rel=1e-5)

    def test_half_integer(self, cfg: SasConfig) -> None:
        assert sas_exp(-2.5, cfg) == pytest.approx(math.exp(-2.5), abs=1e-4)

    def test_rejects_positive(self, cfg: SasConfig) -> None:
        with pytest.raises(ContractViolation):
            sas_exp(0.5, cfg)

    def test_rejects_nan(self, cfg: SasConfig) -> None:
        with pytest.raises(ContractViolation):
            sas_exp(float("nan"), cfg)

    def test_negative_infinity_maps_to_zero(self, cfg: SasConfig) -> None:
        assert sas_exp_array(np.array([-np.inf, 0.0]), cfg).tolist()[0] == 0.0

    def test_monotone_within_jump_tolerance(self, cfg: SasConfig) -> None:
        """Values only rise at integer boundaries, and by less than 2e-3."""
        x = np.linspace(0.0, -8.0, 80_001)
        values = sas_exp_array(x, cfg).astype(np.float64)
        rises = np.diff(values)
        assert rises.max() <= 2e-3

    def test_array_matches_scalar(self, cfg: SasConfig) -> None:
        x = np.array([-0.3, -1.7, -5.99, -6.5])
        assert sas_exp_array(x, cfg).tolist() == [sas_exp(float(v), cfg) for v in x]


class TestSasSoftmaxRows:
    """Test row-normalized SAS softmax."""

    def test_uniform_pair(self, cfg: SasConfig) -> None:
        probs = sas_softmax_rows(MatrixF32.from_rows([[0.0, 0.0]]), cfg)
        assert probs.data.tolist() == [[0.5, 0.5]]

    def test_integer_gap_matches_exact(self, cfg: SasConfig) -> None:
        probs = sas_softmax_rows(MatrixF32.from_rows([[0.0, -1.0]]), cfg)
        expected = exact_softmax_rows(np.array([[0.0, -1.0]]))
        np.testing.assert_allclose(probs.data, expected, atol=1e-6)
        np.testing.assert_allclose(probs.data[0], [0.7311, 0.2689], atol=1e-4)

    def test_threshold_sparsifies(self, cfg: SasConfig) -> None:
        probs = sas_softmax_rows(MatrixF32.from_rows([[5.0, -5.0]]), cfg)
        assert probs.data.tolist() == [[1.0, 0.0]]

    def test_rows_sum_to_one(self, cfg: SasConfig, rng: np.random.Generator) -> None:
        scores = MatrixF32(rng.normal(0.0, 3.0, size=(64, 200)))
        probs = sas_softmax_rows(scores, cfg).data
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_empty_rows_rejected(self, cfg: SasConfig) -> None:
        with pytest.raises(ShapeError):
            sas_softmax_rows(MatrixF32.zeros(2, 0), cfg)

    def test_close_to_exact_softmax(self, cfg: SasConfig, rng: np.random.Generator) -> None:
        for length in (8, 128, 1024):
            scores = rng.normal(0.0, 3.0, size=(32, length)).astype(np.float32)
            probs = sas_softmax_rows(MatrixF32(scores), cfg).data
            exact = exact_softmax_rows(scores)
            assert np.abs(probs - exact).max() <= 5e-3
            assert (probs.argmax(axis=1) == exact.argmax(axis=1)).all()


class TestExpErrorTable:
    """Test the benchmark grid."""

    def test_columns_and_rows(self, cfg: SasConfig) -> None:
        table = exp_error_table(-8.0, 0.0, 81, cfg)
        assert table.columns == ["x", "sas_exp", "exp", "abs_error"]
        assert table.height == 81

    def test_error_bounds(self, cfg: SasConfig) -> None:
        table = exp_error_table(-8.0, 0.0, 801, cfg)
        inside = table.filter(table["x"] >= -5.99)
        assert inside["abs_error"].max() <= 1e-3
        assert table["abs_error"].max() <= math.exp(-6)

    def test_rejects_positive_upper_bound(self, cfg: SasConfig) -> None:
        with pytest.raises(ConfigError):
            exp_error_table(-1.0, 1.0, 10, cfg)

    def test_rejects_degenerate_grid(self, cfg: SasConfig) -> None:
        with pytest.raises(ConfigError):
            exp_error_table(0.0, -1.0, 10, cfg)
        with pytest.raises(ConfigError):
            exp_error_table(-1.0, 0.0, 1, cfg)


class TestSoftmaxFidelity:
    """Test the random-row fidelity summary.

    A threshold of -6 zeroes weights below e^-6 of the row max. Over 1e5 rows
    the worst entry is off by about 3.7e-2. A threshold of -30 keeps it near 1e-4.
    """

    def test_summary_at_scale(self, cfg: SasConfig) -> None:
        result = softmax_fidelity(rows=100_000, length=128, sigma=3.0, seed=0, cfg=cfg)
        assert result.max_abs_error <= 4e-2
        assert result.argmax_agreement == 1.0
        assert set(result.to_dict()) == {
            "rows",
            "length",
            "sigma",
            "max_abs_error",
            "argmax_agreement",
        }

    def test_deep_threshold_is_tight(self) -> None:
        result = softmax_fidelity(rows=100_000, length=128, sigma=3.0, seed=0, cfg=build_lut(-30))
        assert result.max_abs_error <= 5e-3
        assert result.argmax_agreement == 1.0

    def test_deterministic(self, cfg: SasConfig) -> None:
        first = softmax_fidelity(rows=20, length=16, sigma=1.0, seed=3, cfg=cfg)
        second = softmax_fidelity(rows=20, length=16, sigma=1.0, seed=3, cfg=cfg)
        assert first == second

    def test_rejects_empty(self, cfg: SasConfig) -> None:
        with pytest.raises(ConfigError):
            softmax_fidelity(rows=0, length=16, sigma=1.0, seed=0, cfg=cfg)
