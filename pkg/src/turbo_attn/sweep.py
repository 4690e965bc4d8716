"""Parameter sweeps over one workload.

Axes:
    block      every (B_r, B_c) pair from the given sizes
    bits       forced cache bit width for all heads (2, 4, or 8 for stage one only)
    heads2bit  number of 2-bit heads, crossed with every head selector; the random
               selector row is the mean over H rotated draws
    n_r        SAS threshold
"""

import logging
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any

import polars as pl
from pydantic import ValidationError

from .errors import ConfigError
from .models import RunOptions
from .runner import run_pipeline
from .selectors import SELECTOR_NAMES
from .workload import Workload

logger = logging.getLogger(__name__)

THREADS_ENV = "TQT_THREADS"

SWEEP_SCHEMA = {
    "axis": pl.String,
    "value": pl.String,
    "selector": pl.String,
    "b_r": pl.Int64,
    "b_c": pl.Int64,
    "bits": pl.Int64,
    "n_h": pl.Int64,
    "n_r": pl.Int64,
    "prefill_rel_frobenius": pl.Float64,
    "decode_rel_frobenius": pl.Float64,
    "compression_ratio": pl.Float64,
}
METRIC_COLUMNS = ("prefill_rel_frobenius", "decode_rel_frobenius", "compression_ratio")


class SweepAxis(str, Enum):
    BLOCK = "block"
    BITS = "bits"
    HEADS2BIT = "heads2bit"
    N_R = "n_r"


def default_values(axis: SweepAxis, heads: int) -> list[int]:
    if axis is SweepAxis.BLOCK:
        return [32, 64, 128]
    if axis is SweepAxis.BITS:
        return [2, 4, 8]
    if axis is SweepAxis.HEADS2BIT:
        return list(range(heads + 1))
    return list(range(-2, -11, -1))


@dataclass(frozen=True)
class SweepPoint:
    """One configuration of the sweep."""

    axis: SweepAxis
    value: str
    options: RunOptions


def worker_count(points: int) -> int:
    """Worker threads for `points` sweep points, capped by TQT_THREADS when set.

    Raises:
        ConfigError: If TQT_THREADS is not a positive integer
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        limit = os.cpu_count() or 1
    else:
        try:
            limit = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if limit < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return max(1, min(limit, points))


def _with(base: RunOptions, **update: Any) -> RunOptions:
    try:
        return RunOptions.model_validate({**base.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"Invalid sweep point {update}: {e}") from e


def sweep_points(
    axis: SweepAxis, values: Sequence[int], base: RunOptions, heads: int
) -> list[SweepPoint]:
    """Expand an axis and its values into concrete run options."""
    if not values:
        raise ConfigError(f"Sweep axis {axis.value} needs at least one value")
    points = []
    if axis is SweepAxis.BLOCK:
        for b_r in values:
            for b_c in values:
                points.append(SweepPoint(axis, f"{b_r}x{b_c}", _with(base, b_r=b_r, b_c=b_c)))
    elif axis is SweepAxis.BITS:
        for bits in values:
            points.append(SweepPoint(axis, str(bits), _with(base, bits=bits)))
    elif axis is SweepAxis.HEADS2BIT:
        for n_h in values:
            if not 0 <= n_h <= heads:
                raise ConfigError(f"heads2bit value {n_h} outside [0, {heads}]")
            for selector in SELECTOR_NAMES:
                draws = heads if selector == "random" else 1
                for draw in range(draws):
                    options = _with(
                        base, heads2bit=n_h, selector=selector, bits=None, random_draw=draw
                    )
                    points.append(SweepPoint(axis, str(n_h), options))
    else:
        for n_r in values:
            points.append(SweepPoint(axis, str(n_r), _with(base, n_r=n_r)))
    return points


def _run_point(workload: Workload, point: SweepPoint) -> dict[str, Any]:
    report = run_pipeline(workload, point.options)
    options = point.options
    return {
        "axis": point.axis.value,
        "value": point.value,
        "selector": options.selector,
        "b_r": options.b_r,
        "b_c": options.b_c,
        "bits": options.bits,
        "n_h": options.low_bit_heads(workload.heads),
        "n_r": options.n_r,
        "prefill_rel_frobenius": report.prefill.rel_frobenius,
        "decode_rel_frobenius": report.mean_decode_rel_frobenius,
        "compression_ratio": report.cache.compression_ratio if report.cache else None,
    }


def run_sweep(
    workload: Workload,
    axis: SweepAxis,
    values: Sequence[int] | None = None,
    base: RunOptions | None = None,
) -> pl.DataFrame:
    """Run every point of the axis; one row per configuration, in point order.

    Points that differ only in their random draw are averaged into one row and
    `draws` counts them.
    """
    base = base or RunOptions()
    chosen = list(values) if values is not None else default_values(axis, workload.heads)
    points = sweep_points(axis, chosen, base, workload.heads)
    workers = worker_count(len(points))
    logger.info(f"Sweeping {axis.value} over {len(points)} points with {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        rows = list(executor.map(lambda p: _run_point(workload, p), points))
    table = pl.DataFrame(rows, schema=SWEEP_SCHEMA)
    keys = [name for name in SWEEP_SCHEMA if name not in METRIC_COLUMNS]
    return (
        table.group_by(keys, maintain_order=True)
        .agg(
            pl.len().cast(pl.Int64).alias("draws"),
            *(pl.col(name).mean() for name in METRIC_COLUMNS),
        )
        .select([*SWEEP_SCHEMA, "draws"])
    )
