"""Pydantic model of a synthetic workload."""

from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class WorkloadSpec(BaseModel):
    """Gaussian Q/K/V per head with optional outlier channels on chosen heads."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0, lt=2**64)
    n: int = Field(default=256, ge=1)
    d: int = Field(default=64, ge=1)
    heads: int = Field(default=8, ge=1)
    sigma: float = Field(default=1.0, gt=0)
    outlier_heads: list[int] = Field(default_factory=list)
    outlier_channels_per_head: int = Field(default=4, ge=0)
    outlier_magnitude: float = Field(default=8.0, ge=1.0)
    decode_steps: int = Field(default=16, ge=0)

    @model_validator(mode="after")
    def _check_outliers(self) -> Self:
        bad = [h for h in self.outlier_heads if not 0 <= h < self.heads]
        if bad:
            raise ValueError(f"Outlier heads {bad} outside [0, {self.heads})")
        if len(set(self.outlier_heads)) != len(self.outlier_heads):
            raise ValueError(f"Duplicate outlier heads in {self.outlier_heads}")
        if self.outlier_channels_per_head > self.d:
            raise ValueError(
                f"Cannot pick {self.outlier_channels_per_head} outlier channels from d={self.d}"
            )
        return self
