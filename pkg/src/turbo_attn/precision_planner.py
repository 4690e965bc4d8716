"""Head-wise mixed precision: priority = gap x std, lowest-priority heads get 2 bits."""

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_core import MatrixF32

logger = logging.getLogger(__name__)

LOW_BITS = 2
HIGH_BITS = 4
PLAN_BITS = (LOW_BITS, HIGH_BITS)


@dataclass(frozen=True)
class HeadStats:
    """Range statistics of one head's K/V values."""

    head_index: int
    gap: float
    channel_gaps: tuple[float, ...]
    std: float
    priority: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "head_index": self.head_index,
            "gap": self.gap,
            "channel_gaps": list(self.channel_gaps),
            "std": self.std,
            "priority": self.priority,
        }


def head_stats(head_kv: MatrixF32, head_index: int = 0) -> HeadStats:
    """Compute gap, per-channel gaps, their population std and the priority.

    Args:
        head_kv: Tokens x channels matrix of one head
        head_index: Index recorded in the result

    Raises:
        ShapeError: If the matrix is empty
    """
    if head_kv.data.size == 0:
        raise ShapeError("Cannot compute statistics of an empty head")
    values = head_kv.data.astype(np.float64)
    gap = float(values.max() - values.min())
    channel_gaps = values.max(axis=0) - values.min(axis=0)
    std = float(np.std(channel_gaps))
    return HeadStats(
        head_index=head_index,
        gap=gap,
        channel_gaps=tuple(float(g) for g in channel_gaps),
        std=std,
        priority=gap * std,
    )


def head_stats_kv(k: MatrixF32, v: MatrixF32, head_index: int = 0) -> HeadStats:
    """Statistics over the union of a head's K and V rows."""
    if k.cols != v.cols:
        raise ShapeError(f"K has {k.cols} channels but V has {v.cols}")
    return head_stats(MatrixF32(np.vstack([k.data, v.data])), head_index)


@dataclass(frozen=True)
class HeadPrecisionPlan:
    """Bit width per head; exactly n_h heads are 2-bit."""

    bits: tuple[int, ...]
    n_h: int

    def __post_init__(self) -> None:
        if any(b not in PLAN_BITS for b in self.bits):
            raise ConfigError(f"Plan bits must be in {PLAN_BITS}, got {list(self.bits)}")
        if sum(1 for b in self.bits if b == LOW_BITS) != self.n_h:
            raise ConfigError(
                f"Plan {list(self.bits)} does not have exactly {self.n_h} 2-bit heads"
            )

    @property
    def heads(self) -> int:
        return len(self.bits)

    @property
    def low_bit_heads(self) -> tuple[int, ...]:
        return tuple(h for h, b in enumerate(self.bits) if b == LOW_BITS)

    def to_dict(self) -> dict[str, Any]:
        return {"n_h": self.n_h, "bits": list(self.bits)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HeadPrecisionPlan":
        return cls(bits=tuple(int(b) for b in data["bits"]), n_h=int(data["n_h"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HeadPrecisionPlan":
        return cls.from_dict(json.loads(text))


def plan_from_scores(scores: Sequence[float], n_h: int) -> HeadPrecisionPlan:
    """Give 2 bits to the n_h lowest-scoring heads, ties to the lower index.

    Raises:
        ConfigError: If n_h is outside [0, len(scores)]
    """
    heads = len(scores)
    if not 0 <= n_h <= heads:
        raise ConfigError(f"n_h must be in [0, {heads}], got {n_h}")
    order = sorted(range(heads), key=lambda h: (scores[h], h))
    low = set(order[:n_h])
    bits = tuple(LOW_BITS if h in low else HIGH_BITS for h in range(heads))
    return HeadPrecisionPlan(bits=bits, n_h=n_h)


def plan_precision(stats: Sequence[HeadStats], n_h: int) -> HeadPrecisionPlan:
    """Rank heads by priority and compress the lowest n_h to 2 bits.

    Raises:
        ConfigError: If stats are not ordered by head index or n_h is out of range
    """
    if [s.head_index for s in stats] != list(range(len(stats))):
        raise ConfigError("Head statistics must be ordered by head index 0..H-1")
    plan = plan_from_scores([s.priority for s in stats], n_h)
    logger.info(f"Precision plan: 2-bit heads {list(plan.low_bit_heads)} of {plan.heads}")
    return plan
