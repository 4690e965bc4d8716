"""Tests for per-tile trace dumps."""

import json
from pathlib import Path

import numpy as np

from tests.helpers import random_matrix
from turbo_attn.attention import turbo_prefill_head
from turbo_attn.models import AttentionConfig
from turbo_attn.tensor_io import load_matrix_f32
from turbo_attn.trace import FLOAT32_FLOOR, TRACE_MANIFEST, TileTraceRecorder


class TestTileTraceRecorder:
    """Test recording the online-softmax state of every tile."""

    def test_records_every_tile(self, tmp_path: Path, rng: np.random.Generator) -> None:
        q, k, v = (random_matrix(rng, 40, 8) for _ in range(3))
        recorder = TileTraceRecorder(tmp_path / "trace")
        cfg = AttentionConfig(d=8, b_r=16, b_c=32)
        turbo_prefill_head(q, k, v, cfg, bits=4, observer=recorder, head=2)

        assert len(recorder.records) == 3 * 2
        first = recorder.records[0]
        assert (first.head, first.row_tile, first.col_tile) == (2, 0, 0)
        assert (first.rows, first.cols) == (16, 32)
        last = recorder.records[-1]
        assert (last.rows, last.cols) == (8, 8)

        scores = load_matrix_f32(tmp_path / "trace" / first.files["S"])
        m = load_matrix_f32(tmp_path / "trace" / first.files["m"])
        assert scores.shape == (16, 32)
        assert m.shape == (16, 1)
        np.testing.assert_allclose(m.data[:, 0], scores.data.max(axis=1), rtol=1e-6)

    def test_masked_scores_stored_as_floor(self, tmp_path: Path, rng: np.random.Generator) -> None:
        q, k, v = (random_matrix(rng, 8, 4) for _ in range(3))
        recorder = TileTraceRecorder(tmp_path)
        cfg = AttentionConfig(d=4, b_r=8, b_c=8, causal=True)
        turbo_prefill_head(q, k, v, cfg, bits=4, observer=recorder)
        scores = load_matrix_f32(tmp_path / recorder.records[0].files["S"])
        assert scores.data[0, 1] == np.float32(FLOAT32_FLOOR)
        probs = load_matrix_f32(tmp_path / recorder.records[0].files["P"])
        assert probs.data[0, 1] == 0.0

    def test_manifest(self, tmp_path: Path, rng: np.random.Generator) -> None:
        q, k, v = (random_matrix(rng, 10, 4) for _ in range(3))
        recorder = TileTraceRecorder(tmp_path)
        turbo_prefill_head(q, k, v, AttentionConfig(d=4), bits=2, observer=recorder)
        path = recorder.write_manifest({"bits": 2})
        assert path.name == TRACE_MANIFEST
        manifest = json.loads(path.read_text())
        assert manifest["bits"] == 2
        assert len(manifest["tiles"]) == 1
        assert set(manifest["tiles"][0]["files"]) == {"S", "P", "m", "l"}
