"""End-to-end pipeline: plan, prefill, decode, compare against the oracles."""

import logging
import time
from pathlib import Path

import numpy as np
import polars as pl

from .attention import (
    AttentionOutput,
    ErrorMetrics,
    concat_heads,
    error_metrics,
    reference_attention,
    turbo_decode_head,
    turbo_prefill,
)
from .errors import ConfigError
from .kv_cache import KvCacheHead, save_caches, total_size_report
from .models import (
    CacheReport,
    DecodeStepReport,
    HeadReport,
    MetricsReport,
    RunOptions,
    RunReport,
    Timings,
)
from .precision_planner import HeadPrecisionPlan, head_stats_kv, plan_from_scores
from .selectors import default_registry
from .tensor_core import MatrixF32
from .workload import Workload, load_workload

logger = logging.getLogger(__name__)

PLAN_FILE = "plan.json"
CACHE_FILE = "cache.tqc"


def metrics_report(metrics: ErrorMetrics) -> MetricsReport:
    return MetricsReport(
        rel_frobenius=metrics.rel_frobenius,
        max_abs=metrics.max_abs,
        mean_cosine=metrics.mean_cosine,
        min_cosine=metrics.min_cosine,
    )


def _compare(outputs: list[AttentionOutput], refs: list[AttentionOutput]) -> MetricsReport:
    return metrics_report(error_metrics(concat_heads(outputs), concat_heads(refs)))


def selector_seed(workload: Workload, n_h: int) -> int:
    """Seed of the random selector: varies with n_h so each sweep point draws afresh."""
    return workload.spec.seed + n_h


def select_plan(workload: Workload, options: RunOptions) -> tuple[list[float], HeadPrecisionPlan]:
    """Selector scores and the resulting 2/4-bit plan.

    Raises:
        ConfigError: If the number of 2-bit heads is out of range
    """
    n_h = options.low_bit_heads(workload.heads)
    registry = default_registry(selector_seed(workload, n_h), options.random_draw)
    selector = registry.get_selector(options.selector)
    scores = selector.scores(list(zip(workload.k, workload.v, strict=True)))
    return scores, plan_from_scores(scores, n_h)


def run_pipeline(
    workload: Workload, options: RunOptions, artifact_dir: Path | None = None
) -> RunReport:
    """Run one configuration on a loaded workload.

    With `artifact_dir` set, the head plan is written there as plan.json and the
    caches, in their state after the last decode step, as cache.tqc.

    Raises:
        ConfigError: If the options do not fit the workload
    """
    spec = workload.spec
    heads = workload.heads
    steps = spec.decode_steps if options.steps is None else options.steps
    if steps > spec.decode_steps:
        raise ConfigError(f"Workload has {spec.decode_steps} decode steps, {steps} requested")
    cfg = options.attention_config(spec.d)
    timings = Timings()

    start = time.perf_counter()
    kv_pairs = list(zip(workload.k, workload.v, strict=True))
    stats = [head_stats_kv(k, v, h) for h, (k, v) in enumerate(kv_pairs)]
    scores, plan = select_plan(workload, options)
    bits = plan.bits if options.bits is None else (options.bits,) * heads
    head_reports = [
        HeadReport(
            head=s.head_index,
            priority=s.priority,
            gap=s.gap,
            std=s.std,
            selector_score=score,
            bits=b,
        )
        for s, score, b in zip(stats, scores, bits, strict=True)
    ]
    logger.info(f"Selector {options.selector}: bits per head {list(bits)}")
    timings.plan_seconds = time.perf_counter() - start

    start = time.perf_counter()
    refs = [
        reference_attention(q, k, v, cfg.causal)
        for q, k, v in zip(workload.q, workload.k, workload.v, strict=True)
    ]
    caches: list[KvCacheHead] = []
    if options.oracle_only:
        outputs = refs
    else:
        outputs, caches = turbo_prefill(workload.q, workload.k, workload.v, cfg, bits)
    prefill = _compare(outputs, refs)
    timings.prefill_seconds = time.perf_counter() - start

    start = time.perf_counter()
    decode = []
    for step in range(steps):
        exact, cached, results = [], [], []
        for h in range(heads):
            q_row = workload.qd[h].slice_rows(step, step + 1)
            k_hist = MatrixF32(np.vstack([workload.k[h].data, workload.kd[h].data[:step]]))
            v_hist = MatrixF32(np.vstack([workload.v[h].data, workload.vd[h].data[:step]]))
            exact.append(reference_attention(q_row, k_hist, v_hist))
            if options.oracle_only:
                cached.append(exact[-1])
                results.append(exact[-1])
                continue
            k_cache, v_cache = caches[h].dequantized_kv()
            cached.append(reference_attention(q_row, k_cache, v_cache))
            results.append(
                turbo_decode_head(
                    q_row.data[0],
                    caches[h],
                    cfg,
                    workload.kd[h].data[step],
                    workload.vd[h].data[step],
                )
            )
        decode.append(
            DecodeStepReport(
                step=step,
                cache_tokens=spec.n + step,
                vs_exact=_compare(results, exact),
                vs_cache=_compare(results, cached),
            )
        )
    timings.decode_seconds = time.perf_counter() - start

    cache_report = None
    if caches:
        size = total_size_report(caches)
        cache_report = CacheReport(**size.to_dict())
    if artifact_dir is not None:
        write_artifacts(artifact_dir, plan, caches)
    logger.info(f"Prefill rel. error {prefill.rel_frobenius}, {steps} decode steps")
    return RunReport(
        options=options,
        workload=spec,
        heads=head_reports,
        prefill=prefill,
        decode=decode,
        cache=cache_report,
        timings=timings,
    )


def write_artifacts(
    artifact_dir: Path, plan: HeadPrecisionPlan, caches: list[KvCacheHead]
) -> None:
    artifact_dir.mkdir(parents=True, exist_ok=True)
    (artifact_dir / PLAN_FILE).write_text(plan.to_json() + "\n", encoding="utf-8")
    if caches:
        save_caches(artifact_dir / CACHE_FILE, caches)


def run_workload_dir(
    workload_dir: Path | str, options: RunOptions, artifact_dir: Path | None = None
) -> RunReport:
    return run_pipeline(load_workload(workload_dir), options, artifact_dir)


def decode_table(report: RunReport) -> pl.DataFrame:
    """Per-step decode errors as a table."""
    schema = {
        "step": pl.Int64,
        "cache_tokens": pl.Int64,
        "vs_exact_rel_frobenius": pl.Float64,
        "vs_exact_max_abs": pl.Float64,
        "vs_cache_rel_frobenius": pl.Float64,
        "vs_cache_max_abs": pl.Float64,
    }
    rows = [
        {
            "step": s.step,
            "cache_tokens": s.cache_tokens,
            "vs_exact_rel_frobenius": s.vs_exact.rel_frobenius,
            "vs_exact_max_abs": s.vs_exact.max_abs,
            "vs_cache_rel_frobenius": s.vs_cache.rel_frobenius,
            "vs_cache_max_abs": s.vs_cache.max_abs,
        }
        for s in report.decode
    ]
    return pl.DataFrame(rows, schema=schema)
