"""Per-head compressed KV cache.

Prefill blocks arrive already stage-two quantized. Decode tokens are quantized
to INT8 with a universal scale fixed at prefill, kept in a buffer of n_b rows,
and stage-two quantized as one new block when the buffer fills up. Flushed
blocks are never re-quantized.

The byte layout of the cache file is documented in docs/cache-format.md;
CacheSizeReport counts exactly those bytes.
"""

import logging
import struct
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .errors import ConfigError, ShapeError, TurboAttnError
from .quant import (
    Q1_CODE_LIMIT,
    GroupAxis,
    Q2Block,
    asym_quant_block,
    dequant_block_to_q1,
    quantize_with_scale,
)
from .tensor_core import MatrixF32, MatrixI8, PackedMatrix, packed_row_bytes
from .tensor_io import TensorFormatError

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 64
DEFAULT_BUFFER_SIZE = 64
CACHE_BITS = (2, 4, 8)

CACHE_MAGIC = b"TQC1"
# magic, bits, token_count, n_b, d, universal_scale_k, universal_scale_v, n_blocks, buffer_tokens
_HEADER = struct.Struct("<4sIQIIffII")
# tokens, parent_scale
_BLOCK_RECORD = struct.Struct("<If")
_GROUP_DTYPE = np.dtype([("scale_int", "<i2"), ("zero_int", "<i2")])
FP16_BYTES = 2

Side = Literal["K", "V"]


class CacheBoundsError(TurboAttnError, IndexError):
    """Block index outside the cache."""

    pass


@dataclass(frozen=True)
class CacheSizeReport:
    """Exact byte accounting of a serialized cache."""

    payload_bytes: int
    metadata_bytes: int
    buffer_bytes: int
    fp16_equivalent_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.metadata_bytes + self.buffer_bytes

    @property
    def compression_ratio(self) -> float | None:
        """FP16 bytes over stored bytes; None for an empty cache."""
        if self.fp16_equivalent_bytes == 0:
            return None
        return self.fp16_equivalent_bytes / self.total_bytes

    def __add__(self, other: "CacheSizeReport") -> "CacheSizeReport":
        return CacheSizeReport(
            payload_bytes=self.payload_bytes + other.payload_bytes,
            metadata_bytes=self.metadata_bytes + other.metadata_bytes,
            buffer_bytes=self.buffer_bytes + other.buffer_bytes,
            fp16_equivalent_bytes=self.fp16_equivalent_bytes + other.fp16_equivalent_bytes,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "payload_bytes": self.payload_bytes,
            "metadata_bytes": self.metadata_bytes,
            "buffer_bytes": self.buffer_bytes,
            "fp16_equivalent_bytes": self.fp16_equivalent_bytes,
            "total_bytes": self.total_bytes,
            "compression_ratio": self.compression_ratio,
        }


EMPTY_REPORT = CacheSizeReport(0, 0, 0, 0)


def _block_sizes(tokens: int, d: int, bits: int) -> tuple[int, int]:
    """(payload, metadata) bytes of one K or V block record."""
    payload = tokens * packed_row_bytes(d, bits)
    metadata = _BLOCK_RECORD.size + d * _GROUP_DTYPE.itemsize
    return payload, metadata


def _head_report(
    block_tokens: Sequence[int], buffer_tokens: int, d: int, bits: int
) -> CacheSizeReport:
    payload = 0
    metadata = _HEADER.size
    for tokens in block_tokens:
        p, m = _block_sizes(tokens, d, bits)
        payload += 2 * p
        metadata += 2 * m
    total_tokens = sum(block_tokens) + buffer_tokens
    return CacheSizeReport(
        payload_bytes=payload,
        metadata_bytes=metadata,
        buffer_bytes=2 * buffer_tokens * d,
        fp16_equivalent_bytes=FP16_BYTES * 2 * total_tokens * d,
    )


def estimate_size_report(
    tokens: int,
    d: int,
    bits_per_head: Sequence[int],
    block_size: int = DEFAULT_BLOCK_SIZE,
    n_b: int = DEFAULT_BUFFER_SIZE,
    decode_tokens: int = 0,
) -> CacheSizeReport:
    """Byte accounting of caches prefilled with `tokens` and decoded `decode_tokens` more.

    Matches KvCacheHead.size_report() of the caches the pipeline would build,
    without building them.
    """
    if tokens < 0 or decode_tokens < 0 or block_size < 1 or n_b < 1 or d < 1:
        raise ConfigError("Token counts must be >= 0; block size, n_b and d must be >= 1")
    full, partial = divmod(tokens, block_size)
    flushed, buffered = divmod(decode_tokens, n_b)
    block_tokens = [block_size] * full + ([partial] if partial else []) + [n_b] * flushed
    report = EMPTY_REPORT
    for bits in bits_per_head:
        report = report + _head_report(block_tokens, buffered, d, bits)
    return report


def _as_row(vec: np.ndarray | Sequence[float], d: int) -> MatrixF32:
    row = np.asarray(vec, dtype=np.float32).reshape(1, -1)
    if row.shape[1] != d:
        raise ShapeError(f"Expected a vector of width {d}, got {row.shape[1]}")
    return MatrixF32(row)


class KvCacheHead:
    """Compressed K/V for one attention head."""

    def __init__(
        self,
        bits: int,
        d: int,
        universal_scale_k: float = 1.0,
        universal_scale_v: float = 1.0,
        n_b: int = DEFAULT_BUFFER_SIZE,
    ):
        if bits not in CACHE_BITS:
            raise ConfigError(f"Cache bit width must be one of {CACHE_BITS}, got {bits}")
        if d < 1 or n_b < 1:
            raise ConfigError(f"d and n_b must be >= 1, got d={d}, n_b={n_b}")
        for scale in (universal_scale_k, universal_scale_v):
            if not (np.isfinite(scale) and scale > 0):
                raise ConfigError(f"Universal scale must be positive and finite, got {scale}")
        self.bits = bits
        self.d = d
        self.n_b = n_b
        self.universal_scale_k = float(np.float32(universal_scale_k))
        self.universal_scale_v = float(np.float32(universal_scale_v))
        self._blocks_k: list[Q2Block] = []
        self._blocks_v: list[Q2Block] = []
        self._buffer_k = np.zeros((n_b, d), dtype=np.int8)
        self._buffer_v = np.zeros((n_b, d), dtype=np.int8)
        self._buffered = 0

    @classmethod
    def init_from_prefill(
        cls,
        q2_blocks_k: Sequence[Q2Block],
        q2_blocks_v: Sequence[Q2Block],
        bits: int,
        universal_scales: tuple[float, float],
        n_b: int = DEFAULT_BUFFER_SIZE,
        d: int | None = None,
    ) -> "KvCacheHead":
        """Build a cache holding the prefill blocks and an empty buffer.

        Raises:
            ConfigError: On mismatched K/V blocks, bit widths or block sizes
        """
        if len(q2_blocks_k) != len(q2_blocks_v):
            raise ConfigError(
                f"K has {len(q2_blocks_k)} blocks but V has {len(q2_blocks_v)}"
            )
        if d is None:
            if not q2_blocks_k:
                raise ConfigError("Head dim d is required for an empty prefill")
            d = q2_blocks_k[0].channels
        for index, (bk, bv) in enumerate(zip(q2_blocks_k, q2_blocks_v, strict=True)):
            if bk.tokens != bv.tokens or bk.channels != d or bv.channels != d:
                raise ConfigError(f"K/V block {index} shapes disagree")
            if bk.bits != bits or bv.bits != bits:
                raise ConfigError(f"Block {index} is {bk.bits}/{bv.bits}-bit, cache is {bits}-bit")
            if bk.axis is not GroupAxis.CHANNEL or bv.axis is not GroupAxis.CHANNEL:
                raise ConfigError("Cache blocks must use channel grouping")
        sizes = [b.tokens for b in q2_blocks_k]
        if len(set(sizes[:-1])) > 1 or (len(sizes) > 1 and sizes[-1] > sizes[0]):
            raise ConfigError(f"Only the last prefill block may be shorter, got sizes {sizes}")

        cache = cls(bits, d, universal_scales[0], universal_scales[1], n_b)
        cache._blocks_k.extend(q2_blocks_k)
        cache._blocks_v.extend(q2_blocks_v)
        logger.debug(f"Cache initialised with {len(sizes)} prefill blocks, {sum(sizes)} tokens")
        return cache

    @property
    def blocks_k(self) -> tuple[Q2Block, ...]:
        return tuple(self._blocks_k)

    @property
    def blocks_v(self) -> tuple[Q2Block, ...]:
        return tuple(self._blocks_v)

    @property
    def flushed_tokens(self) -> int:
        return sum(b.tokens for b in self._blocks_k)

    @property
    def buffered_tokens(self) -> int:
        return self._buffered

    @property
    def token_count(self) -> int:
        return self.flushed_tokens + self._buffered

    @property
    def readable_blocks(self) -> int:
        """Flushed blocks plus the live buffer when it holds tokens."""
        return len(self._blocks_k) + (1 if self._buffered else 0)

    def buffer_codes(self, which: Side) -> MatrixI8:
        buffer = self._buffer_k if which == "K" else self._buffer_v
        return MatrixI8(buffer[: self._buffered])

    def push_token(
        self, k_vec: np.ndarray | Sequence[float], v_vec: np.ndarray | Sequence[float]
    ) -> None:
        """Quantize one token with the universal scales and append it to the buffer.

        Values beyond the universal range clamp to +-119. A full buffer is flushed.
        """
        k_row = _as_row(k_vec, self.d)
        v_row = _as_row(v_vec, self.d)
        k_q = quantize_with_scale(k_row, self.universal_scale_k)
        v_q = quantize_with_scale(v_row, self.universal_scale_v)
        limit = Q1_CODE_LIMIT + 0.5
        clamped = int((np.abs(k_row.data / self.universal_scale_k) >= limit).sum()) + int(
            (np.abs(v_row.data / self.universal_scale_v) >= limit).sum()
        )
        if clamped:
            logger.warning(f"Clamped {clamped} outlier values of token {self.token_count}")

        self._buffer_k[self._buffered] = k_q.codes.data[0]
        self._buffer_v[self._buffered] = v_q.codes.data[0]
        self._buffered += 1
        if self._buffered >= self.n_b:
            self.flush_buffer()

    def flush_buffer(self) -> None:
        """Stage-two quantize the buffered rows into one new block; no-op when empty."""
        if self._buffered == 0:
            return
        block_k = asym_quant_block(
            self.buffer_codes("K"), self.bits, self.universal_scale_k, GroupAxis.CHANNEL
        )
        block_v = asym_quant_block(
            self.buffer_codes("V"), self.bits, self.universal_scale_v, GroupAxis.CHANNEL
        )
        self._blocks_k.append(block_k)
        self._blocks_v.append(block_v)
        logger.debug(f"Flushed {self._buffered} tokens into block {len(self._blocks_k) - 1}")
        self._buffer_k[:] = 0
        self._buffer_v[:] = 0
        self._buffered = 0

    def read_block_q1(self, block_index: int, which: Side) -> tuple[MatrixI8, float]:
        """INT8 codes and scale of a flushed block, or of the live buffer.

        The buffer is addressed as the block after the last flushed one and is
        returned as stored, without a stage-two round trip.

        Raises:
            CacheBoundsError: If the index addresses no block
        """
        if which not in ("K", "V"):
            raise ConfigError(f"which must be 'K' or 'V', got {which!r}")
        blocks = self._blocks_k if which == "K" else self._blocks_v
        if 0 <= block_index < len(blocks):
            block = blocks[block_index]
            return dequant_block_to_q1(block), block.parent_scale
        if block_index == len(blocks) and self._buffered:
            scale = self.universal_scale_k if which == "K" else self.universal_scale_v
            return self.buffer_codes(which), scale
        raise CacheBoundsError(
            f"Block {block_index} out of range; cache has {self.readable_blocks} readable blocks"
        )

    def iter_blocks_q1(self) -> Iterator[tuple[tuple[MatrixI8, float], tuple[MatrixI8, float]]]:
        """Yield ((K codes, K scale), (V codes, V scale)) for every readable block."""
        for index in range(self.readable_blocks):
            yield self.read_block_q1(index, "K"), self.read_block_q1(index, "V")

    def dequantized_kv(self) -> tuple[MatrixF32, MatrixF32]:
        """FP32 K and V exactly as the attention kernels see them."""
        k_parts = [np.zeros((0, self.d), dtype=np.float32)]
        v_parts = [np.zeros((0, self.d), dtype=np.float32)]
        for (k_codes, k_scale), (v_codes, v_scale) in self.iter_blocks_q1():
            k_parts.append(k_codes.data.astype(np.float32) * np.float32(k_scale))
            v_parts.append(v_codes.data.astype(np.float32) * np.float32(v_scale))
        return MatrixF32(np.vstack(k_parts)), MatrixF32(np.vstack(v_parts))

    def size_report(self) -> CacheSizeReport:
        return _head_report([b.tokens for b in self._blocks_k], self._buffered, self.d, self.bits)

    def to_bytes(self) -> bytes:
        """Serialize to the TQC1 per-head layout."""
        parts = [
            _HEADER.pack(
                CACHE_MAGIC,
                self.bits,
                self.token_count,
                self.n_b,
                self.d,
                self.universal_scale_k,
                self.universal_scale_v,
                len(self._blocks_k),
                self._buffered,
            )
        ]
        for bk, bv in zip(self._blocks_k, self._blocks_v, strict=True):
            for block in (bk, bv):
                parts.append(_BLOCK_RECORD.pack(block.tokens, block.parent_scale))
                parts.append(block.codes.data.tobytes())
                groups = np.empty(self.d, dtype=_GROUP_DTYPE)
                groups["scale_int"] = block.scale_int
                groups["zero_int"] = block.zero_int
                parts.append(groups.tobytes())
        parts.append(self._buffer_k[: self._buffered].tobytes())
        parts.append(self._buffer_v[: self._buffered].tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buffer: bytes, offset: int = 0) -> tuple["KvCacheHead", int]:
        """Parse one per-head section starting at `offset`.

        Returns:
            The cache and the offset just past its section

        Raises:
            TensorFormatError: On bad magic, inconsistent header or truncation
        """

        def take(size: int, at: int) -> bytes:
            if at + size > len(buffer):
                raise TensorFormatError("Truncated cache section", len(buffer))
            return buffer[at : at + size]

        header = take(_HEADER.size, offset)
        magic, bits, token_count, n_b, d, usk, usv, n_blocks, buffered = _HEADER.unpack(header)
        if magic != CACHE_MAGIC:
            raise TensorFormatError(f"Bad cache magic {magic!r}", offset)
        if bits not in CACHE_BITS or d < 1 or n_b < 1 or buffered >= n_b:
            raise TensorFormatError(
                f"Invalid cache header bits={bits} d={d} n_b={n_b} buffered={buffered}", offset + 4
            )
        cache = cls(bits, d, usk, usv, n_b)
        at = offset + _HEADER.size
        row_bytes = packed_row_bytes(d, bits)
        for _ in range(n_blocks):
            for blocks in (cache._blocks_k, cache._blocks_v):
                tokens, parent_scale = _BLOCK_RECORD.unpack(take(_BLOCK_RECORD.size, at))
                at += _BLOCK_RECORD.size
                payload = np.frombuffer(take(tokens * row_bytes, at), dtype=np.uint8)
                at += tokens * row_bytes
                groups = np.frombuffer(take(d * _GROUP_DTYPE.itemsize, at), dtype=_GROUP_DTYPE)
                at += d * _GROUP_DTYPE.itemsize
                blocks.append(
                    Q2Block(
                        codes=PackedMatrix(tokens, d, bits, payload.reshape(tokens, row_bytes)),
                        scale_int=groups["scale_int"],
                        zero_int=groups["zero_int"],
                        parent_scale=float(parent_scale),
                    )
                )
        for target in (cache._buffer_k, cache._buffer_v):
            codes = np.frombuffer(take(buffered * d, at), dtype=np.int8).reshape(buffered, d)
            if codes.size and int(np.abs(codes.astype(np.int16)).max()) > Q1_CODE_LIMIT:
                raise TensorFormatError("Buffered codes outside [-119, 119]", at)
            target[:buffered] = codes
            at += buffered * d
        cache._buffered = buffered
        if cache.token_count != token_count:
            raise TensorFormatError(
                f"Header token count {token_count} != stored {cache.token_count}", offset + 8
            )
        return cache, at

    def copy(self) -> "KvCacheHead":
        return KvCacheHead.from_bytes(self.to_bytes())[0]

    def save(self, path: Path | str) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Path | str) -> "KvCacheHead":
        buffer = Path(path).read_bytes()
        cache, end = cls.from_bytes(buffer)
        if end != len(buffer):
            raise TensorFormatError(f"{len(buffer) - end} trailing bytes", end)
        return cache


def save_caches(path: Path | str, caches: Sequence[KvCacheHead]) -> int:
    """Write per-head sections back to back; returns the byte count."""
    data = b"".join(cache.to_bytes() for cache in caches)
    Path(path).write_bytes(data)
    logger.info(f"Wrote {len(caches)} cache heads ({len(data)} bytes) to {path}")
    return len(data)


def load_caches(path: Path | str) -> list[KvCacheHead]:
    buffer = Path(path).read_bytes()
    caches = []
    offset = 0
    while offset < len(buffer):
        cache, offset = KvCacheHead.from_bytes(buffer, offset)
        caches.append(cache)
    return caches


def total_size_report(caches: Sequence[KvCacheHead]) -> CacheSizeReport:
    report = EMPTY_REPORT
    for cache in caches:
        report = report + cache.size_report()
    return report
