"""Tests for synthetic workload generation and storage."""

import json
from pathlib import Path

import numpy as np
import pytest

from turbo_attn.models import WorkloadSpec
from turbo_attn.precision_planner import head_stats_kv
from turbo_attn.tensor_core import MatrixF32
from turbo_attn.tensor_key import build_tensor_key
from turbo_attn.workload import (
    MANIFEST_NAME,
    ManifestError,
    Workload,
    WorkloadStore,
    generate_workload,
    load_workload,
    outlier_channels,
)


class TestGenerateWorkload:
    """Test deterministic generation."""

    def test_files_and_manifest(self, workload_dir: Path, small_spec: WorkloadSpec) -> None:
        store = WorkloadStore(workload_dir)
        assert store.exists()
        assert len(store.list_tensors()) == small_spec.heads * 6
        manifest = store.read_manifest()
        assert manifest["spec"]["seed"] == 7
        assert set(manifest["outlier_channels"]) == {"1", "3"}
        assert "head00/q" in manifest["tensors"]

    def test_same_seed_same_bytes(self, tmp_path: Path, small_spec: WorkloadSpec) -> None:
        a = generate_workload(small_spec, tmp_path / "a")
        b = generate_workload(small_spec, tmp_path / "b")
        for path_a, path_b in zip(a.list_tensors(), b.list_tensors(), strict=True):
            assert path_a.read_bytes() == path_b.read_bytes()
        assert (tmp_path / "a" / MANIFEST_NAME).read_text() == (
            tmp_path / "b" / MANIFEST_NAME
        ).read_text()

    def test_different_seed_differs(self, tmp_path: Path, small_spec: WorkloadSpec) -> None:
        a = generate_workload(small_spec, tmp_path / "a")
        other = small_spec.model_copy(update={"seed": 8})
        b = generate_workload(other, tmp_path / "b")
        key = build_tensor_key(0, "q")
        assert not a.read_tensor(key).bit_equal(b.read_tensor(key))

    def test_outlier_channels_are_scaled(self, small_workload: Workload) -> None:
        channels = outlier_channels(small_workload.spec)[1]
        assert len(channels) == 2
        k = small_workload.k[1].data
        clean = np.delete(k, channels, axis=1)
        assert np.abs(k[:, channels]).std() > 4 * np.abs(clean).std()

    def test_outlier_heads_rank_above_clean_heads(self, small_workload: Workload) -> None:
        priorities = [
            head_stats_kv(k, v, h).priority
            for h, (k, v) in enumerate(zip(small_workload.k, small_workload.v, strict=True))
        ]
        assert min(priorities[1], priorities[3]) > max(priorities[0], priorities[2])

    def test_unit_magnitude_leaves_heads_clean(self, tmp_path: Path) -> None:
        spec = WorkloadSpec(seed=1, n=64, d=8, heads=2, outlier_heads=[1], outlier_magnitude=1.0)
        plain = WorkloadSpec(seed=1, n=64, d=8, heads=2)
        a = load_workload(generate_workload(spec, tmp_path / "a").base_dir)
        b = load_workload(generate_workload(plain, tmp_path / "b").base_dir)
        assert a.k[1].bit_equal(b.k[1])


class TestLoadWorkload:
    """Test loading and validation."""

    def test_shapes(self, small_workload: Workload) -> None:
        assert small_workload.heads == 4
        assert small_workload.q[0].shape == (96, 16)
        assert small_workload.qd[3].shape == (4, 16)

    def test_missing_manifest(self, tmp_path: Path) -> None:
        with pytest.raises(ManifestError, match="No manifest"):
            load_workload(tmp_path)

    def test_missing_tensor(self, workload_dir: Path) -> None:
        (workload_dir / "head02" / "v.tqt").unlink()
        with pytest.raises(ManifestError, match="Missing tensor head02/v"):
            load_workload(workload_dir)

    def test_wrong_shape(self, workload_dir: Path) -> None:
        store = WorkloadStore(workload_dir)
        store.write_tensor(build_tensor_key(0, "k"), MatrixF32.zeros(3, 16))
        with pytest.raises(ManifestError, match="shape"):
            load_workload(workload_dir)

    def test_unknown_format(self, workload_dir: Path) -> None:
        path = workload_dir / MANIFEST_NAME
        manifest = json.loads(path.read_text())
        manifest["format"] = "other/9"
        path.write_text(json.dumps(manifest))
        with pytest.raises(ManifestError, match="format"):
            load_workload(workload_dir)

    def test_unparsable_manifest(self, workload_dir: Path) -> None:
        (workload_dir / MANIFEST_NAME).write_text("{not json")
        with pytest.raises(ManifestError, match="Unparsable"):
            load_workload(workload_dir)


class TestChecksums:
    """Test manifest checksum verification."""

    def test_all_valid(self, workload_dir: Path) -> None:
        results = WorkloadStore(workload_dir).verify_all()
        assert len(results) == 24
        assert all(results.values())

    def test_tampered_file(self, workload_dir: Path) -> None:
        path = workload_dir / "head01" / "k.tqt"
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        store = WorkloadStore(workload_dir)
        assert store.verify_checksum("head01/k") is False
        assert store.verify_checksum("head01/v") is True

    def test_unknown_key(self, workload_dir: Path) -> None:
        assert WorkloadStore(workload_dir).verify_checksum("head09/q") is False

    def test_size(self, workload_dir: Path) -> None:
        store = WorkloadStore(workload_dir)
        assert store.get_size() == sum(p.stat().st_size for p in store.list_tensors())
