"""Tests for parameter sweeps."""

import itertools
from pathlib import Path

import polars as pl
import pytest

from turbo_attn.errors import ConfigError
from turbo_attn.models import RunOptions, WorkloadSpec
from turbo_attn.runner import select_plan
from turbo_attn.selectors import SELECTOR_NAMES
from turbo_attn.sweep import (
    THREADS_ENV,
    SweepAxis,
    default_values,
    run_sweep,
    sweep_points,
    worker_count,
)
from turbo_attn.workload import Workload, generate_workload, load_workload


class TestSweepPoints:
    """Test axis expansion."""

    def test_block_pairs(self) -> None:
        points = sweep_points(SweepAxis.BLOCK, [32, 64], RunOptions(), heads=4)
        assert [p.value for p in points] == ["32x32", "32x64", "64x32", "64x64"]
        assert (points[1].options.b_r, points[1].options.b_c) == (32, 64)

    def test_heads2bit_crosses_selectors(self) -> None:
        points = sweep_points(SweepAxis.HEADS2BIT, [0, 2], RunOptions(bits=4), heads=4)
        assert len(points) == 2 * (len(SELECTOR_NAMES) - 1 + 4)
        assert {p.options.selector for p in points} == set(SELECTOR_NAMES)
        assert all(p.options.bits is None for p in points)
        draws = [p.options.random_draw for p in points if p.options.selector == "random"]
        assert draws == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_heads2bit_out_of_range(self) -> None:
        with pytest.raises(ConfigError):
            sweep_points(SweepAxis.HEADS2BIT, [5], RunOptions(), heads=4)

    def test_invalid_threshold(self) -> None:
        with pytest.raises(ConfigError, match="Invalid sweep point"):
            sweep_points(SweepAxis.N_R, [1], RunOptions(), heads=4)

    def test_empty_values(self) -> None:
        with pytest.raises(ConfigError):
            sweep_points(SweepAxis.BITS, [], RunOptions(), heads=4)

    def test_default_values(self) -> None:
        assert default_values(SweepAxis.BITS, 8) == [2, 4, 8]
        assert default_values(SweepAxis.HEADS2BIT, 3) == [0, 1, 2, 3]
        assert default_values(SweepAxis.N_R, 8)[0] == -2
        assert default_values(SweepAxis.N_R, 8)[-1] == -10


class TestWorkerCount:
    """Test the TQT_THREADS override."""

    def test_capped_by_points(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(THREADS_ENV, "8")
        assert worker_count(3) == 3

    def test_env_limit(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(THREADS_ENV, "2")
        assert worker_count(10) == 2

    @pytest.mark.parametrize("raw", ["zero", "0", "-1"])
    def test_bad_env_value(self, raw: str, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(THREADS_ENV, raw)
        with pytest.raises(ConfigError, match=THREADS_ENV):
            worker_count(4)


class TestRunSweep:
    """Test sweep execution."""

    def test_bits_sweep(self, small_workload: Workload, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv(THREADS_ENV, "2")
        table = run_sweep(small_workload, SweepAxis.BITS, base=RunOptions(steps=2))
        assert table["value"].to_list() == ["2", "4", "8"]
        errors = table["decode_rel_frobenius"].to_list()
        assert errors[2] < errors[0]
        ratios = table["compression_ratio"].to_list()
        assert ratios[0] > ratios[1] > ratios[2]

    def test_thread_count_does_not_change_results(
        self, small_workload: Workload, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        base = RunOptions(steps=1)
        monkeypatch.setenv(THREADS_ENV, "1")
        serial = run_sweep(small_workload, SweepAxis.N_R, [-2, -6], base)
        monkeypatch.setenv(THREADS_ENV, "4")
        parallel = run_sweep(small_workload, SweepAxis.N_R, [-2, -6], base)
        assert serial.equals(parallel)

    def test_heads2bit_rows(self, small_workload: Workload) -> None:
        table = run_sweep(small_workload, SweepAxis.HEADS2BIT, [0, 4], RunOptions(steps=0))
        assert table.height == 2 * len(SELECTOR_NAMES)
        assert set(table["n_h"].to_list()) == {0, 4}
        draws = dict(zip(table["selector"], table["draws"], strict=True))
        assert draws["random"] == 4
        assert draws["priority"] == 1


class TestSweepTrends:
    """Error trends along each axis."""

    @pytest.fixture
    def outlier_workload(self, tmp_path: Path) -> Workload:
        """Eight heads; heads 2 and 5 carry outlier channels."""
        spec = WorkloadSpec(
            seed=3,
            n=128,
            d=32,
            heads=8,
            outlier_heads=[2, 5],
            outlier_channels_per_head=2,
            outlier_magnitude=8.0,
            decode_steps=2,
        )
        generate_workload(spec, tmp_path / "outliers")
        return load_workload(tmp_path / "outliers")

    def test_priority_keeps_outlier_heads(self, outlier_workload: Workload) -> None:
        for n_h in range(7):
            _, plan = select_plan(outlier_workload, RunOptions(heads2bit=n_h))
            assert plan.bits[2] == plan.bits[5] == 4

    def test_priority_no_worse_than_random(self, outlier_workload: Workload) -> None:
        table = run_sweep(
            outlier_workload, SweepAxis.HEADS2BIT, list(range(9)), RunOptions(steps=2)
        )
        priority = table.filter(pl.col("selector") == "priority")
        random = table.filter(pl.col("selector") == "random")
        assert random["draws"].to_list() == [8] * 9
        for ours, baseline in zip(
            priority["decode_rel_frobenius"], random["decode_rel_frobenius"], strict=True
        ):
            assert ours <= baseline * (1 + 1e-9)

    def test_lower_threshold_lowers_error(self, small_workload: Workload) -> None:
        table = run_sweep(small_workload, SweepAxis.N_R, base=RunOptions(steps=0))
        assert table["n_r"].to_list() == list(range(-2, -11, -1))
        errors = table["prefill_rel_frobenius"].to_list()
        for shallow, deep in itertools.pairwise(errors):
            assert deep <= shallow + 1e-3
        assert errors[0] > 2 * errors[-1]

    def test_block_sizes_comparable(self, small_workload: Workload) -> None:
        table = run_sweep(small_workload, SweepAxis.BLOCK, [32, 64, 128], RunOptions(steps=0))
        assert table.height == 9
        errors = table["prefill_rel_frobenius"]
        assert errors.max() <= 3 * errors.min()
