"""Head selectors for choosing 2-bit heads.

Priority is the planner's own metric; the others are comparison baselines used
by `run --selector` and the heads2bit sweep. Every selector scores heads and
the lowest scores get 2 bits.
"""

from collections.abc import Sequence
from typing import Protocol

import numpy as np

from .errors import ConfigError
from .precision_planner import HeadPrecisionPlan, head_stats_kv, plan_from_scores
from .tensor_core import MatrixF32

ENTROPY_BINS = 64

HeadKV = tuple[MatrixF32, MatrixF32]


class HeadSelector(Protocol):
    """Protocol for head scoring strategies."""

    name: str

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        """Score every head; lower scores are compressed first.

        Args:
            heads: Per-head (K, V) prefill matrices

        Returns:
            One score per head, in head order
        """
        ...


class PrioritySelector:
    name = "priority"

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        return [head_stats_kv(k, v, h).priority for h, (k, v) in enumerate(heads)]


class MinMaxSelector:
    """Whole-head range max - min."""

    name = "minmax"

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        return [head_stats_kv(k, v, h).gap for h, (k, v) in enumerate(heads)]


class VariationSelector:
    """Population std of the per-channel ranges."""

    name = "variation"

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        return [head_stats_kv(k, v, h).std for h, (k, v) in enumerate(heads)]


class EntropySelector:
    """Shannon entropy (nats) of a fixed-bin histogram of the head's values."""

    name = "entropy"

    def __init__(self, bins: int = ENTROPY_BINS) -> None:
        self.bins = bins

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        result = []
        for k, v in heads:
            values = np.concatenate([k.data.ravel(), v.data.ravel()]).astype(np.float64)
            counts, _ = np.histogram(values, bins=self.bins)
            probs = counts[counts > 0] / counts.sum()
            result.append(float(-(probs * np.log(probs)).sum()))
        return result


class RandomSelector:
    """Seeded random ranking.

    Draw r rotates the seeded permutation by r places. Over draws 0..H-1 every
    head takes every rank exactly once, so averaging those draws gives each head
    the 2-bit share a uniform random pick would.
    """

    name = "random"

    def __init__(self, seed: int, draw: int = 0) -> None:
        self.seed = seed
        self.draw = draw

    def scores(self, heads: Sequence[HeadKV]) -> list[float]:
        rng = np.random.default_rng(self.seed)
        ranks = np.roll(rng.permutation(len(heads)), self.draw)
        return [float(s) for s in ranks]


class SelectorRegistry:
    """Registry of available head selectors."""

    def __init__(self) -> None:
        self.selectors: dict[str, HeadSelector] = {}

    def register(self, selector: HeadSelector) -> None:
        self.selectors[selector.name] = selector

    def names(self) -> list[str]:
        return list(self.selectors)

    def get_selector(self, name: str) -> HeadSelector:
        """Look up a selector by name.

        Raises:
            ConfigError: If no selector has that name
        """
        try:
            return self.selectors[name]
        except KeyError:
            raise ConfigError(
                f"Unknown selector {name!r}. Must be one of {self.names()}"
            ) from None


SELECTOR_NAMES = ("priority", "minmax", "variation", "entropy", "random")


def default_registry(seed: int = 0, draw: int = 0) -> SelectorRegistry:
    """Registry holding all built-in selectors; seed and draw drive the random one."""
    registry = SelectorRegistry()
    registry.register(PrioritySelector())
    registry.register(MinMaxSelector())
    registry.register(VariationSelector())
    registry.register(EntropySelector())
    registry.register(RandomSelector(seed, draw))
    return registry


def select_heads(selector: HeadSelector, heads: Sequence[HeadKV], n_h: int) -> HeadPrecisionPlan:
    """Plan precision from a selector's scores."""
    return plan_from_scores(selector.scores(heads), n_h)
