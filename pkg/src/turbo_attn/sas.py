"""Sparse activated softmax: exp(x) for x <= 0 as LUT(integer part) x cubic(fractional part).

Shifted scores below the threshold n_r map to a sentinel table slot holding 0,
which is what makes the resulting probabilities sparse.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import polars as pl

from .errors import ConfigError, ContractViolation, ShapeError
from .tensor_core import MatrixF32

DEFAULT_N_R = -6
# c3, c2, c1, c0 of the e^{-f} fit on [0, 1)
POLY_COEFFS: tuple[float, float, float, float] = (-0.1025, 0.4626, -0.9922, 0.9996)
FIDELITY_CHUNK_ROWS = 10_000


@dataclass(frozen=True, eq=False)
class SasConfig:
    """Threshold, lookup table and polynomial of one SAS instance.

    lut has |n_r| + 2 entries: e^{-i} for i in 0..|n_r| followed by a 0 sentinel.
    """

    n_r: int
    lut: np.ndarray
    poly: tuple[float, float, float, float] = field(default=POLY_COEFFS)

    @property
    def sentinel_index(self) -> int:
        return len(self.lut) - 1


def build_lut(n_r: int = DEFAULT_N_R) -> SasConfig:
    """Build the SAS lookup table for threshold n_r.

    Raises:
        ConfigError: If n_r >= 0
    """
    if n_r >= 0:
        raise ConfigError(f"n_r must be a negative integer, got {n_r}")
    table = np.exp(-np.arange(-n_r + 1, dtype=np.float64))
    lut = np.append(table, 0.0).astype(np.float32)
    lut.setflags(write=False)
    return SasConfig(n_r=n_r, lut=lut)


def _horner(f: np.ndarray, poly: tuple[float, float, float, float]) -> np.ndarray:
    c3, c2, c1, c0 = (float(np.float32(c)) for c in poly)
    return ((c3 * f + c2) * f + c1) * f + c0


def poly_eval(f: float, poly: tuple[float, float, float, float] = POLY_COEFFS) -> float:
    """Cubic approximation of e^{-f} for f in [0, 1].

    f = 1 is accepted so the fit can be checked at the interval end.
    """
    if not 0.0 <= f <= 1.0:
        raise ContractViolation(f"Polynomial argument must lie in [0, 1], got {f}")
    return float(np.float32(_horner(np.float64(f), poly)))


def sas_exp_array(x: np.ndarray, cfg: SasConfig) -> np.ndarray:
    """Vectorised sas_exp; -inf inputs map to 0.

    Raises:
        ContractViolation: If any input is positive or NaN
    """
    values = np.asarray(x, dtype=np.float64)
    if np.isnan(values).any() or (values > 0).any():
        raise ContractViolation("SAS inputs must be max-shifted scores (<= 0)")
    neg = -values
    keep = neg <= -cfg.n_r
    safe = np.where(keep, neg, 0.0)
    whole = np.floor(safe)
    frac = safe - whole
    index = np.where(keep, whole.astype(np.int64), cfg.sentinel_index)
    result = cfg.lut.astype(np.float64)[index] * _horner(frac, cfg.poly)
    return np.where(keep, result, 0.0).astype(np.float32)


def sas_exp(x: float, cfg: SasConfig) -> float:
    """LUT(floor(-x)) * poly(-x - floor(-x)), or 0 below the threshold."""
    if x > 0 or math.isnan(x):
        raise ContractViolation(f"sas_exp needs x <= 0, got {x}")
    return float(sas_exp_array(np.array([x]), cfg)[0])


def sas_softmax_rows(scores: MatrixF32, cfg: SasConfig) -> MatrixF32:
    """Row softmax with SAS exponentials, normalized in FP32."""
    if scores.cols == 0:
        raise ShapeError("Cannot take a softmax over empty rows")
    data = scores.data
    shifted = data - data.max(axis=1, keepdims=True)
    weights = sas_exp_array(shifted, cfg)
    totals = weights.sum(axis=1, keepdims=True, dtype=np.float32)
    return MatrixF32(weights / totals)


def exact_softmax_rows(scores: np.ndarray) -> np.ndarray:
    """FP64 softmax over the last axis."""
    values = np.asarray(scores, dtype=np.float64)
    weights = np.exp(values - values.max(axis=-1, keepdims=True))
    return weights / weights.sum(axis=-1, keepdims=True)


def exp_error_table(lo: float, hi: float, points: int, cfg: SasConfig) -> pl.DataFrame:
    """Grid of (x, sas_exp(x), exp(x), abs_error) for x in [lo, hi].

    Raises:
        ConfigError: If the grid is empty or reaches above 0
    """
    if points < 2 or lo >= hi:
        raise ConfigError(f"Need lo < hi and at least 2 points, got [{lo}, {hi}] x {points}")
    if hi > 0:
        raise ConfigError(f"Grid upper bound must be <= 0, got {hi}")
    x = np.linspace(lo, hi, points)
    approx = sas_exp_array(x, cfg).astype(np.float64)
    exact = np.exp(x)
    return pl.DataFrame(
        {"x": x, "sas_exp": approx, "exp": exact, "abs_error": np.abs(approx - exact)}
    )


@dataclass(frozen=True)
class SoftmaxFidelity:
    rows: int
    length: int
    sigma: float
    max_abs_error: float
    argmax_agreement: float

    def to_dict(self) -> dict[str, float | int]:
        return {
            "rows": self.rows,
            "length": self.length,
            "sigma": self.sigma,
            "max_abs_error": self.max_abs_error,
            "argmax_agreement": self.argmax_agreement,
        }


def softmax_fidelity(
    rows: int, length: int, sigma: float, seed: int, cfg: SasConfig
) -> SoftmaxFidelity:
    """Compare SAS softmax against exact softmax on random N(0, sigma) rows."""
    if rows < 1 or length < 1:
        raise ConfigError(f"Need at least one row and column, got {rows}x{length}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    agree = 0
    done = 0
    while done < rows:
        count = min(FIDELITY_CHUNK_ROWS, rows - done)
        scores = rng.normal(0.0, sigma, size=(count, length)).astype(np.float32)
        approx = sas_softmax_rows(MatrixF32(scores), cfg).data.astype(np.float64)
        exact = exact_softmax_rows(scores)
        worst = max(worst, float(np.abs(approx - exact).max()))
        agree += int((approx.argmax(axis=1) == exact.argmax(axis=1)).sum())
        done += count
    return SoftmaxFidelity(
        rows=rows,
        length=length,
        sigma=sigma,
        max_abs_error=worst,
        argmax_agreement=agree / rows,
    )
