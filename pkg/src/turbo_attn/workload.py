"""Synthetic workloads on disk.

A workload directory holds one TQT1 file per head and role plus a JSON
manifest with the generating spec and a SHA-256 checksum per tensor:

    manifest.json
    head00/q.tqt  head00/k.tqt  head00/v.tqt  head00/qd.tqt  head00/kd.tqt  head00/vd.tqt
    head01/...
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .errors import TurboAttnError
from .models.workload import WorkloadSpec
from .tensor_core import MatrixF32
from .tensor_io import encode_tensor, load_matrix_f32
from .tensor_key import DECODE_ROLES, PREFILL_ROLES, TensorKey, build_tensor_key

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "turbo-attn-workload/1"
ROLE_STREAMS = {role: index for index, role in enumerate(PREFILL_ROLES + DECODE_ROLES)}
OUTLIER_STREAM = 99


class ManifestError(TurboAttnError):
    """Workload manifest missing, malformed or inconsistent with the tensors."""

    pass


@dataclass
class TensorEntry:
    """Manifest entry of one stored tensor."""

    path: str
    sha256: str
    rows: int
    cols: int

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TensorEntry":
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "sha256": self.sha256, "rows": self.rows, "cols": self.cols}


class WorkloadStore:
    """Manage the files of one workload directory."""

    def __init__(self, base_dir: Path | str):
        self.base_dir = Path(base_dir)

    @property
    def manifest_path(self) -> Path:
        return self.base_dir / MANIFEST_NAME

    def get_tensor_path(self, key: TensorKey) -> Path:
        return self.base_dir / key.relative_path

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def write_tensor(self, key: TensorKey, matrix: MatrixF32) -> TensorEntry:
        """Write a tensor file and return its manifest entry."""
        path = self.get_tensor_path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = encode_tensor(matrix)
        path.write_bytes(data)
        return TensorEntry(
            path=key.relative_path,
            sha256=self._calculate_hash(data),
            rows=matrix.rows,
            cols=matrix.cols,
        )

    def read_tensor(self, key: TensorKey) -> MatrixF32:
        """Read a tensor file.

        Raises:
            ManifestError: If the file is missing
        """
        path = self.get_tensor_path(key)
        if not path.exists():
            raise ManifestError(f"Missing tensor {key} ({path})")
        return load_matrix_f32(path)

    def write_manifest(
        self, spec: WorkloadSpec, outliers: dict[int, list[int]], entries: dict[str, TensorEntry]
    ) -> None:
        self.base_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": MANIFEST_FORMAT,
            "spec": spec.model_dump(mode="json"),
            "outlier_channels": {str(h): channels for h, channels in sorted(outliers.items())},
            "tensors": {key: entry.to_dict() for key, entry in entries.items()},
        }
        self.manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    def read_manifest(self) -> dict[str, Any]:
        """Load and sanity-check the manifest.

        Raises:
            ManifestError: If it is missing, unparsable or of another format
        """
        if not self.manifest_path.exists():
            raise ManifestError(f"No {MANIFEST_NAME} in {self.base_dir}")
        try:
            manifest: dict[str, Any] = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ManifestError(f"Unparsable manifest {self.manifest_path}: {e}") from e
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ManifestError(f"Unknown manifest format {manifest.get('format')!r}")
        return manifest

    def read_spec(self) -> WorkloadSpec:
        try:
            return WorkloadSpec.model_validate(self.read_manifest()["spec"])
        except (KeyError, ValidationError) as e:
            raise ManifestError(f"Manifest spec is invalid: {e}") from e

    def entries(self) -> dict[str, TensorEntry]:
        raw = self.read_manifest().get("tensors", {})
        return {key: TensorEntry.from_dict(value) for key, value in raw.items()}

    def verify_checksum(self, key: str) -> bool:
        """True when the tensor file exists and matches its recorded checksum."""
        entry = self.entries().get(key)
        if entry is None:
            return False
        path = self.base_dir / entry.path
        if not path.exists():
            return False
        return self._calculate_hash(path.read_bytes()) == entry.sha256

    def verify_all(self) -> dict[str, bool]:
        return {key: self.verify_checksum(key) for key in self.entries()}

    def list_tensors(self) -> list[Path]:
        return sorted(self.base_dir.glob("head*/*.tqt"))

    def get_size(self) -> int:
        return sum(path.stat().st_size for path in self.list_tensors())

    def _calculate_hash(self, data: bytes) -> str:
        return hashlib.sha256(data).hexdigest()


def outlier_channels(spec: WorkloadSpec) -> dict[int, list[int]]:
    """Channels scaled by the outlier magnitude, per outlier head."""
    result = {}
    for head in spec.outlier_heads:
        rng = np.random.default_rng([spec.seed, head, OUTLIER_STREAM])
        picked = rng.choice(spec.d, size=spec.outlier_channels_per_head, replace=False)
        result[head] = sorted(int(c) for c in picked)
    return result


def _role_rows(spec: WorkloadSpec, role: str) -> int:
    return spec.n if role in PREFILL_ROLES else spec.decode_steps


def generate_workload(spec: WorkloadSpec, out_dir: Path | str) -> WorkloadStore:
    """Write a deterministic synthetic workload; identical specs give identical bytes."""
    store = WorkloadStore(out_dir)
    outliers = outlier_channels(spec)
    entries: dict[str, TensorEntry] = {}
    for head in range(spec.heads):
        channels = outliers.get(head, [])
        for role, stream in ROLE_STREAMS.items():
            rng = np.random.default_rng([spec.seed, head, stream])
            data = rng.normal(0.0, spec.sigma, size=(_role_rows(spec, role), spec.d))
            if channels:
                data[:, channels] *= spec.outlier_magnitude
            key = build_tensor_key(head, role)
            entries[key.full_key] = store.write_tensor(key, MatrixF32(data))
    store.write_manifest(spec, outliers, entries)
    logger.info(f"Generated {len(entries)} tensors for {spec.heads} heads in {store.base_dir}")
    return store


@dataclass
class Workload:
    """All tensors of a workload, indexed [head]."""

    spec: WorkloadSpec
    q: list[MatrixF32]
    k: list[MatrixF32]
    v: list[MatrixF32]
    qd: list[MatrixF32]
    kd: list[MatrixF32]
    vd: list[MatrixF32]

    @property
    def heads(self) -> int:
        return len(self.q)


def load_workload(workload_dir: Path | str) -> Workload:
    """Load every tensor listed by the manifest and check shapes against the spec.

    Raises:
        ManifestError: On a missing manifest or tensor, or a shape mismatch
    """
    store = WorkloadStore(workload_dir)
    spec = store.read_spec()
    tensors: dict[str, list[MatrixF32]] = {role: [] for role in ROLE_STREAMS}
    for head in range(spec.heads):
        for role in ROLE_STREAMS:
            key = build_tensor_key(head, role)
            matrix = store.read_tensor(key)
            expected = (_role_rows(spec, role), spec.d)
            if matrix.shape != expected:
                raise ManifestError(f"{key} has shape {matrix.shape}, expected {expected}")
            tensors[role].append(matrix)
    logger.info(f"Loaded workload {store.base_dir}: {spec.heads} heads, {spec.n} tokens")
    return Workload(
        spec=spec,
        q=tensors["q"],
        k=tensors["k"],
        v=tensors["v"],
        qd=tensors["qd"],
        kd=tensors["kd"],
        vd=tensors["vd"],
    )
