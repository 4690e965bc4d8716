"""Per-tile dumps of the prefill online-softmax state.

Every (head, row tile, column tile) step writes four TQT1 files: the scaled
scores S, the unnormalized probabilities P, and the running m and l after the
step (as single-column matrices). Masked scores and not-yet-seen maxima are
-inf in the kernel; they are stored as the most negative finite FP32 value.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .tensor_core import MatrixF32
from .tensor_io import save_tensor

logger = logging.getLogger(__name__)

TRACE_MANIFEST = "trace.json"
FLOAT32_FLOOR = float(np.finfo(np.float32).min)


@dataclass
class TileRecord:
    head: int
    row_tile: int
    col_tile: int
    rows: int
    cols: int
    files: dict[str, str]


def _finite(values: np.ndarray) -> MatrixF32:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    return MatrixF32(np.clip(array, FLOAT32_FLOOR, -FLOAT32_FLOOR))


class TileTraceRecorder:
    """Writes tile dumps under `out_dir` and a JSON manifest describing them."""

    def __init__(self, out_dir: Path | str):
        self.out_dir = Path(out_dir)
        self.records: list[TileRecord] = []

    def record_tile(
        self,
        head: int,
        row_tile: int,
        col_tile: int,
        scores: np.ndarray,
        probs: np.ndarray,
        m: np.ndarray,
        l_sum: np.ndarray,
    ) -> None:
        tile_dir = self.out_dir / f"head{head:02d}"
        tile_dir.mkdir(parents=True, exist_ok=True)
        stem = f"tile_r{row_tile:03d}_c{col_tile:03d}"
        files = {}
        for name, values in (("S", scores), ("P", probs), ("m", m), ("l", l_sum)):
            filename = f"{stem}_{name}.tqt"
            save_tensor(tile_dir / filename, _finite(values))
            files[name] = f"{tile_dir.name}/{filename}"
        self.records.append(
            TileRecord(
                head=head,
                row_tile=row_tile,
                col_tile=col_tile,
                rows=int(scores.shape[0]),
                cols=int(scores.shape[1]),
                files=files,
            )
        )

    def manifest(self, extra: dict[str, Any] | None = None) -> dict[str, Any]:
        return {**(extra or {}), "tiles": [asdict(r) for r in self.records]}

    def write_manifest(self, extra: dict[str, Any] | None = None) -> Path:
        """Write trace.json next to the tile files and return its path."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / TRACE_MANIFEST
        path.write_text(json.dumps(self.manifest(extra), indent=2))
        logger.info(f"Wrote {len(self.records)} tile records to {path}")
        return path
