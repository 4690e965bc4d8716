"""Pydantic models of a pipeline run report."""

from pydantic import BaseModel, Field

from .config import RunOptions
from .workload import WorkloadSpec


class MetricsReport(BaseModel):
    """Error of one output against a reference."""

    rel_frobenius: float | None  # None when the reference is all zeros
    max_abs: float
    mean_cosine: float
    min_cosine: float


class HeadReport(BaseModel):
    head: int
    priority: float
    gap: float
    std: float
    selector_score: float
    bits: int


class DecodeStepReport(BaseModel):
    """Errors of one decode step, averaged over heads where relevant."""

    step: int
    cache_tokens: int
    vs_exact: MetricsReport  # against exact attention over the full-precision history
    vs_cache: MetricsReport  # against exact attention over the dequantized cache


class CacheReport(BaseModel):
    payload_bytes: int
    metadata_bytes: int
    buffer_bytes: int
    fp16_equivalent_bytes: int
    total_bytes: int
    compression_ratio: float | None


class Timings(BaseModel):
    """Wall-clock seconds; informational only."""

    plan_seconds: float = 0.0
    prefill_seconds: float = 0.0
    decode_seconds: float = 0.0


class RunReport(BaseModel):
    options: RunOptions
    workload: WorkloadSpec
    heads: list[HeadReport] = Field(default_factory=list)
    prefill: MetricsReport
    decode: list[DecodeStepReport] = Field(default_factory=list)
    cache: CacheReport | None = None
    timings: Timings = Field(default_factory=Timings)

    @property
    def mean_decode_rel_frobenius(self) -> float | None:
        values = [s.vs_exact.rel_frobenius for s in self.decode]
        finite = [v for v in values if v is not None]
        return sum(finite) / len(finite) if finite else None

    def deterministic_json(self) -> str:
        """JSON without timing fields; identical for identical seeds and flags."""
        return self.model_dump_json(indent=2, exclude={"timings"})
