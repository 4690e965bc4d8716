"""Pytest configuration and fixtures for turbo-attn tests."""

from pathlib import Path

import numpy as np
import pytest

from turbo_attn.models import WorkloadSpec
from turbo_attn.workload import Workload, generate_workload, load_workload


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator, fresh per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> WorkloadSpec:
    """Small workload with two outlier heads out of four."""
    return WorkloadSpec(
        seed=7,
        n=96,
        d=16,
        heads=4,
        outlier_heads=[1, 3],
        outlier_channels_per_head=2,
        outlier_magnitude=8.0,
        decode_steps=4,
    )


@pytest.fixture
def workload_dir(tmp_path: Path, small_spec: WorkloadSpec) -> Path:
    """Generated workload directory."""
    out = tmp_path / "workload"
    generate_workload(small_spec, out)
    return out


@pytest.fixture
def small_workload(workload_dir: Path) -> Workload:
    return load_workload(workload_dir)
