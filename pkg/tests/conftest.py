"""Test configuration for ensuring the package is importable, plus shared fixtures."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from relational_iqa.imagecore import ImageBuffer  # noqa: E402
from relational_iqa.triplet_synth import EngineConfig, Triplet, generate_triplets, procedural_scene  # noqa: E402


@pytest.fixture
def mid_gray() -> ImageBuffer:
    """16x16 RGB image at 0.5."""
    return ImageBuffer(np.full((3, 16, 16), 0.5))


@pytest.fixture
def scene() -> ImageBuffer:
    """Small deterministic RGB scene."""
    return procedural_scene(24, 24, seed=7)


@pytest.fixture
def isolated_home(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Point RELATIONAL_IQA_HOME at a temp dir and clear the config env var."""
    home = tmp_path / "home"
    monkeypatch.setenv("RELATIONAL_IQA_HOME", str(home))
    monkeypatch.delenv("RELATIONAL_IQA_CONFIG", raising=False)
    return home


@pytest.fixture
def small_triplets() -> list[Triplet]:
    """Three seeded 16x16 triplets over random partitions."""
    return generate_triplets(3, 5, EngineConfig(p_random=1.0), size=16)
