"""Pydantic models for attention and run configuration."""

import math
from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from turbo_attn.kv_cache import DEFAULT_BLOCK_SIZE, DEFAULT_BUFFER_SIZE
from turbo_attn.sas import DEFAULT_N_R
from turbo_attn.selectors import SELECTOR_NAMES

DEFAULT_HEAD_DIM = 64


class SoftmaxMode(str, Enum):
    """Exponential used inside the quantized kernels."""

    SAS = "sas"
    EXACT = "exact"


class AttentionConfig(BaseModel):
    """Tile sizes, buffer size, SAS threshold and kernel switches."""

    model_config = ConfigDict(frozen=True)

    d: int = Field(default=DEFAULT_HEAD_DIM, ge=1)
    b_r: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)
    b_c: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)
    n_b: int = Field(default=DEFAULT_BUFFER_SIZE, ge=1)
    n_r: int = Field(default=DEFAULT_N_R, le=-1)
    causal: bool = False
    softmax: SoftmaxMode = SoftmaxMode.SAS
    quantize: bool = True  # False runs every kernel on raw FP values

    @property
    def scale_qk(self) -> float:
        return 1.0 / math.sqrt(self.d)


class RunOptions(BaseModel):
    """Flags of one pipeline run."""

    model_config = ConfigDict(frozen=True)

    b_r: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)
    b_c: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)
    n_b: int = Field(default=DEFAULT_BUFFER_SIZE, ge=1)
    n_r: int = Field(default=DEFAULT_N_R, le=-1)
    causal: bool = False
    softmax: SoftmaxMode = SoftmaxMode.SAS
    # None follows the head plan; a value forces every head to that width
    bits: Literal[2, 4, 8] | None = None
    heads2bit: int | None = Field(default=None, ge=0)  # None means half the heads
    selector: str = "priority"
    oracle_only: bool = False
    steps: int | None = Field(default=None, ge=0)  # None replays every decode step
    random_draw: int = Field(default=0, ge=0)  # rotation of the random selector ranking

    @field_validator("selector")
    @classmethod
    def _known_selector(cls, value: str) -> str:
        if value not in SELECTOR_NAMES:
            raise ValueError(f"Unknown selector {value!r}. Must be one of {list(SELECTOR_NAMES)}")
        return value

    def attention_config(self, d: int) -> AttentionConfig:
        return AttentionConfig(
            d=d,
            b_r=self.b_r,
            b_c=self.b_c,
            n_b=self.n_b,
            n_r=self.n_r,
            causal=self.causal,
            softmax=self.softmax,
        )

    def low_bit_heads(self, heads: int) -> int:
        """Number of 2-bit heads for a workload with `heads` heads."""
        return heads // 2 if self.heads2bit is None else self.heads2bit
