"""Unit-level conftest: RNG and on-disk artifact fixtures."""

from pathlib import Path

import numpy as np
import pytest

from heatwave.persistence import write_segments

FIXTURES_DIR = Path(__file__).parent.parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(20131)


@pytest.fixture
def ecad_file():
    return FIXTURES_DIR / "ecad_sample.txt"


@pytest.fixture
def segments_csv(tmp_path, synthetic_segments):
    path = tmp_path / "segments.csv"
    write_segments(synthetic_segments, path)
    return path
