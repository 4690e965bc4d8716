"""Attention kernels and oracles.

    reference_attention     dense FP64 softmax attention
    exact_tiled_attention   online-softmax tiling with exact exp
    turbo_prefill_head      quantized tiled prefill that also builds the head's KV cache
    turbo_decode_head       one decode step over a compressed cache

The quantized kernels keep the online-softmax state (running max m, running
sum l, unnormalized output) in FP64 and take their exponentials from SAS
unless the config asks for exact exp.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from .errors import ConfigError, ShapeError
from .kv_cache import KvCacheHead
from .models.config import AttentionConfig, SoftmaxMode
from .precision_planner import HeadPrecisionPlan
from .quant import GroupAxis, QuantBlockQ1, asym_quant_block, int_dot, sym_quant_int8
from .sas import build_lut, sas_exp_array
from .tensor_core import MatrixF32

logger = logging.getLogger(__name__)

ExpFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    """Attention rows and the per-row logsumexp of the scaled scores."""

    output: MatrixF32
    lse: np.ndarray

    @property
    def rows(self) -> int:
        return self.output.rows


class TileObserver(Protocol):
    """Receives the online-softmax state after every (row tile, column tile) step."""

    def record_tile(
        self,
        head: int,
        row_tile: int,
        col_tile: int,
        scores: np.ndarray,
        probs: np.ndarray,
        m: np.ndarray,
        l_sum: np.ndarray,
    ) -> None: ...


def _check_qkv(q: MatrixF32, k: MatrixF32, v: MatrixF32, causal: bool) -> None:
    if k.rows == 0:
        raise ShapeError("Attention needs at least one key")
    if q.cols != k.cols:
        raise ShapeError(f"Q has {q.cols} channels but K has {k.cols}")
    if k.rows != v.rows:
        raise ShapeError(f"K has {k.rows} rows but V has {v.rows}")
    if causal and q.rows > k.rows:
        raise ShapeError(f"Causal attention needs N_q <= N_k, got {q.rows} > {k.rows}")


def _causal_mask(rows: range, cols: range, offset: int) -> np.ndarray:
    """True where query row r may attend key column c (c <= r + offset)."""
    return np.asarray(cols)[None, :] <= np.asarray(rows)[:, None] + offset


def reference_attention(
    q: MatrixF32, k: MatrixF32, v: MatrixF32, causal: bool = False
) -> AttentionOutput:
    """Dense softmax(Q K^T / sqrt(d)) V in FP64.

    With causal masking the mask is aligned to the last key, so query row i
    sees keys up to i + N_k - N_q.
    """
    _check_qkv(q, k, v, causal)
    scores = q.data.astype(np.float64) @ k.data.astype(np.float64).T / np.sqrt(q.cols)
    if causal:
        allowed = _causal_mask(range(q.rows), range(k.rows), k.rows - q.rows)
        scores = np.where(allowed, scores, -np.inf)
    m = scores.max(axis=1, keepdims=True)
    weights = np.exp(scores - m)
    total = weights.sum(axis=1, keepdims=True)
    out = (weights @ v.data.astype(np.float64)) / total
    lse = (m + np.log(total)).ravel()
    return AttentionOutput(output=MatrixF32(out), lse=lse.astype(np.float32))


class _OnlineSoftmax:
    """Running max, running sum and unnormalized output of one row tile."""

    def __init__(self, rows: int, cols: int, exp_fn: ExpFn):
        self.m = np.full(rows, -np.inf)
        self.l_sum = np.zeros(rows)
        self.acc = np.zeros((rows, cols))
        self.exp_fn = exp_fn

    def probs(self, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exponentials of scores shifted by the updated max, and the rescale factor."""
        m_new = np.maximum(self.m, scores.max(axis=1))
        shift = np.where(np.isneginf(m_new), 0.0, m_new)
        probs = self.exp_fn(scores - shift[:, None])
        alpha = self.exp_fn(self.m - shift)
        self.l_sum = alpha * self.l_sum + probs.sum(axis=1)
        self.m = m_new
        return probs, alpha

    def accumulate(self, alpha: np.ndarray, pv: np.ndarray) -> None:
        self.acc = alpha[:, None] * self.acc + pv

    def finish(self) -> AttentionOutput:
        out = self.acc / self.l_sum[:, None]
        lse = self.m + np.log(self.l_sum)
        return AttentionOutput(output=MatrixF32(out), lse=lse.astype(np.float32))


def _exp_fn(cfg: AttentionConfig) -> ExpFn:
    if cfg.softmax is SoftmaxMode.EXACT:
        return np.exp
    lut = build_lut(cfg.n_r)
    return lambda x: sas_exp_array(x, lut).astype(np.float64)


def exact_tiled_attention(
    q: MatrixF32, k: MatrixF32, v: MatrixF32, cfg: AttentionConfig
) -> AttentionOutput:
    """Online-softmax tiled attention with exact exp; equals reference_attention."""
    _check_qkv(q, k, v, cfg.causal)
    qd = q.data.astype(np.float64)
    kd = k.data.astype(np.float64)
    vd = v.data.astype(np.float64)
    offset = k.rows - q.rows
    outputs, lses = [], []
    for i0 in range(0, q.rows, cfg.b_r):
        rows = range(i0, min(i0 + cfg.b_r, q.rows))
        state = _OnlineSoftmax(len(rows), v.cols, np.exp)
        for j0 in range(0, k.rows, cfg.b_c):
            cols = range(j0, min(j0 + cfg.b_c, k.rows))
            if cfg.causal and cols.start > rows.stop - 1 + offset:
                break
            scores = qd[rows.start : rows.stop] @ kd[cols.start : cols.stop].T * cfg.scale_qk
            if cfg.causal:
                scores = np.where(_causal_mask(rows, cols, offset), scores, -np.inf)
            probs, alpha = state.probs(scores)
            state.accumulate(alpha, probs @ vd[cols.start : cols.stop])
        tile = state.finish()
        outputs.append(tile.output.data)
        lses.append(tile.lse)
    return AttentionOutput(output=MatrixF32(np.vstack(outputs)), lse=np.concatenate(lses))


@dataclass(frozen=True, eq=False)
class _Operand:
    """Integer codes with their scale, or raw floats with scale 1."""

    values: np.ndarray
    scale: float

    @classmethod
    def from_q1(cls, q: QuantBlockQ1) -> "_Operand":
        return cls(q.codes.data, q.scale)

    @classmethod
    def raw(cls, values: np.ndarray) -> "_Operand":
        return cls(values.astype(np.float64), 1.0)


def _scaled_product(a: _Operand, b_values: np.ndarray, b_scale: float) -> np.ndarray:
    """a.scale * b_scale * (a.values @ b_values), integer-accumulated for codes."""
    if np.issubdtype(a.values.dtype, np.integer) and np.issubdtype(b_values.dtype, np.integer):
        return int_dot(a.values, b_values).astype(np.float64) * (a.scale * b_scale)
    return (a.values.astype(np.float64) @ b_values.astype(np.float64)) * (a.scale * b_scale)


def _activation_operand(values: np.ndarray, cfg: AttentionConfig) -> _Operand:
    """Stage-one quantize a query tile or a probability tile over the whole tile."""
    if not cfg.quantize:
        return _Operand.raw(values)
    return _Operand.from_q1(sym_quant_int8(MatrixF32(values)))


def _kv_operand(block: QuantBlockQ1, raw: np.ndarray, cfg: AttentionConfig) -> _Operand:
    return _Operand.from_q1(block) if cfg.quantize else _Operand.raw(raw)


def turbo_prefill_head(
    q: MatrixF32,
    k: MatrixF32,
    v: MatrixF32,
    cfg: AttentionConfig,
    bits: int,
    observer: TileObserver | None = None,
    head: int = 0,
) -> tuple[AttentionOutput, KvCacheHead]:
    """Quantized tiled prefill of one head.

    Each B_c block of K and V is stage-one quantized once; those codes feed the
    kernel and, after stage two at `bits`, the returned cache. The cache's
    universal scales are the largest prefill block scales.
    """
    _check_qkv(q, k, v, cfg.causal)
    if q.cols != cfg.d:
        raise ShapeError(f"Config head dim {cfg.d} does not match Q width {q.cols}")
    exp_fn = _exp_fn(cfg)
    offset = k.rows - q.rows

    k_blocks, v_blocks = [], []
    for j0 in range(0, k.rows, cfg.b_c):
        k_blocks.append(sym_quant_int8(k.slice_rows(j0, j0 + cfg.b_c)))
        v_blocks.append(sym_quant_int8(v.slice_rows(j0, j0 + cfg.b_c)))
    cache = KvCacheHead.init_from_prefill(
        [asym_quant_block(b.codes, bits, b.scale, GroupAxis.CHANNEL) for b in k_blocks],
        [asym_quant_block(b.codes, bits, b.scale, GroupAxis.CHANNEL) for b in v_blocks],
        bits=bits,
        universal_scales=(max(b.scale for b in k_blocks), max(b.scale for b in v_blocks)),
        n_b=cfg.n_b,
        d=k.cols,
    )

    outputs, lses = [], []
    for i, i0 in enumerate(range(0, q.rows, cfg.b_r)):
        rows = range(i0, min(i0 + cfg.b_r, q.rows))
        q_op = _activation_operand(q.data[rows.start : rows.stop], cfg)
        state = _OnlineSoftmax(len(rows), v.cols, exp_fn)
        for j, j0 in enumerate(range(0, k.rows, cfg.b_c)):
            cols = range(j0, min(j0 + cfg.b_c, k.rows))
            if cfg.causal and cols.start > rows.stop - 1 + offset:
                break
            k_op = _kv_operand(k_blocks[j], k.data[cols.start : cols.stop], cfg)
            v_op = _kv_operand(v_blocks[j], v.data[cols.start : cols.stop], cfg)
            scores = _scaled_product(q_op, k_op.values.T, k_op.scale) * cfg.scale_qk
            if cfg.causal:
                scores = np.where(_causal_mask(rows, cols, offset), scores, -np.inf)
            probs, alpha = state.probs(scores)
            p_op = _activation_operand(probs, cfg)
            state.accumulate(alpha, _scaled_product(p_op, v_op.values, v_op.scale))
            if observer is not None:
                observer.record_tile(head, i, j, scores, probs, state.m, state.l_sum)
        tile = state.finish()
        outputs.append(tile.output.data)
        lses.append(tile.lse)

    logger.debug(f"Prefill head {head}: {q.rows}x{k.rows} tokens, {bits}-bit cache")
    result = AttentionOutput(output=MatrixF32(np.vstack(outputs)), lse=np.concatenate(lses))
    return result, cache


def _plan_bits(plan: HeadPrecisionPlan | Sequence[int]) -> tuple[int, ...]:
    return plan.bits if isinstance(plan, HeadPrecisionPlan) else tuple(plan)


def turbo_prefill(
    qs: Sequence[MatrixF32],
    ks: Sequence[MatrixF32],
    vs: Sequence[MatrixF32],
    cfg: AttentionConfig,
    plan: HeadPrecisionPlan | Sequence[int],
    observer: TileObserver | None = None,
) -> tuple[list[AttentionOutput], list[KvCacheHead]]:
    """Run turbo_prefill_head for every head.

    Raises:
        ConfigError: If the head counts of Q, K, V and the plan disagree
    """
    bits = _plan_bits(plan)
    if not len(qs) == len(ks) == len(vs) == len(bits):
        raise ConfigError(
            f"Head counts disagree: Q={len(qs)} K={len(ks)} V={len(vs)} plan={len(bits)}"
        )
    outputs, caches = [], []
    for head, (q, k, v, b) in enumerate(zip(qs, ks, vs, bits, strict=True)):
        out, cache = turbo_prefill_head(q, k, v, cfg, b, observer=observer, head=head)
        outputs.append(out)
        caches.append(cache)
    logger.info(f"Prefill done for {len(bits)} heads with bits {list(bits)}")
    return outputs, caches


def turbo_decode_head(
    q_row: np.ndarray | Sequence[float],
    cache: KvCacheHead,
    cfg: AttentionConfig,
    k_new: np.ndarray | Sequence[float] | None = None,
    v_new: np.ndarray | Sequence[float] | None = None,
) -> AttentionOutput:
    """Attend one query over every cached block, then append (k_new, v_new).

    Flushed blocks are read back to INT8; the buffer is used as stored.

    Raises:
        ConfigError: If the cache is empty
    """
    if cache.token_count == 0:
        raise ConfigError("Cannot decode against an empty cache")
    query = np.asarray(q_row, dtype=np.float32).reshape(1, -1)
    if query.shape[1] != cache.d or cfg.d != cache.d:
        raise ShapeError(
            f"Query width {query.shape[1]} and config d={cfg.d} must match cache d={cache.d}"
        )
    q_op = _activation_operand(query, cfg)
    state = _OnlineSoftmax(1, cache.d, _exp_fn(cfg))
    for (k_codes, k_scale), (v_codes, v_scale) in cache.iter_blocks_q1():
        if cfg.quantize:
            k_op, v_op = _Operand(k_codes.data, k_scale), _Operand(v_codes.data, v_scale)
        else:
            k_op = _Operand.raw(k_codes.data.astype(np.float64) * k_scale)
            v_op = _Operand.raw(v_codes.data.astype(np.float64) * v_scale)
        scores = _scaled_product(q_op, k_op.values.T, k_op.scale) * cfg.scale_qk
        probs, alpha = state.probs(scores)
        pv = _scaled_product(_activation_operand(probs, cfg), v_op.values, v_op.scale)
        state.accumulate(alpha, pv)
    result = state.finish()

    if k_new is not None and v_new is not None:
        cache.push_token(k_new, v_new)
    return result


def turbo_decode(
    q_rows: Sequence[np.ndarray],
    caches: Sequence[KvCacheHead],
    cfg: AttentionConfig,
    k_new: Sequence[np.ndarray] | None = None,
    v_new: Sequence[np.ndarray] | None = None,
) -> list[AttentionOutput]:
    """One decode step over every head."""
    if len(q_rows) != len(caches):
        raise ConfigError(f"{len(q_rows)} query rows for {len(caches)} cache heads")
    results = []
    for head, (q_row, cache) in enumerate(zip(q_rows, caches, strict=True)):
        k_vec = None if k_new is None else k_new[head]
        v_vec = None if v_new is None else v_new[head]
        results.append(turbo_decode_head(q_row, cache, cfg, k_vec, v_vec))
    return results


def concat_heads(outputs: Sequence[AttentionOutput]) -> MatrixF32:
    """Concatenate per-head outputs along channels (no output projection)."""
    if not outputs:
        raise ShapeError("Nothing to concatenate")
    return MatrixF32(np.hstack([o.output.data for o in outputs]))


@dataclass(frozen=True)
class ErrorMetrics:
    rel_frobenius: float | None
    max_abs: float
    cosine_per_row: tuple[float, ...]

    @property
    def mean_cosine(self) -> float:
        return float(np.mean(self.cosine_per_row)) if self.cosine_per_row else 1.0

    @property
    def min_cosine(self) -> float:
        return float(min(self.cosine_per_row)) if self.cosine_per_row else 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rel_frobenius": self.rel_frobenius,
            "max_abs": self.max_abs,
            "mean_cosine": self.mean_cosine,
            "min_cosine": self.min_cosine,
        }


def error_metrics(a: MatrixF32, b: MatrixF32) -> ErrorMetrics:
    """Compare a against the reference b.

    rel_frobenius is None when b is all zeros. Row cosine is 1 when both rows
    are zero and 0 when only one is.

    Raises:
        ShapeError: If shapes differ
    """
    if a.shape != b.shape:
        raise ShapeError(f"Cannot compare {a.shape} with {b.shape}")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    diff = x - y
    ref_norm = float(np.linalg.norm(y))
    rel = None if ref_norm == 0.0 else float(np.linalg.norm(diff)) / ref_norm
    max_abs = float(np.abs(diff).max()) if diff.size else 0.0

    norms_x = np.linalg.norm(x, axis=1)
    norms_y = np.linalg.norm(y, axis=1)
    dots = (x * y).sum(axis=1)
    cosines = []
    for dot, nx, ny in zip(dots, norms_x, norms_y, strict=True):
        if nx == 0.0 and ny == 0.0:
            cosines.append(1.0)
        elif nx == 0.0 or ny == 0.0:
            cosines.append(0.0)
        else:
            cosines.append(float(np.clip(dot / (nx * ny), -1.0, 1.0)))
    return ErrorMetrics(rel_frobenius=rel, max_abs=max_abs, cosine_per_row=tuple(cosines))
