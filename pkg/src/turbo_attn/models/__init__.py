"""Pydantic models for configuration, workloads and reports."""

from .config import AttentionConfig, RunOptions, SoftmaxMode
from .report import (
    CacheReport,
    DecodeStepReport,
    HeadReport,
    MetricsReport,
    RunReport,
    Timings,
)
from .workload import WorkloadSpec

__all__ = [
    "AttentionConfig",
    "RunOptions",
    "SoftmaxMode",
    "WorkloadSpec",
    "MetricsReport",
    "HeadReport",
    "DecodeStepReport",
    "CacheReport",
    "Timings",
    "RunReport",
]
