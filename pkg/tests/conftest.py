"""Root conftest: reference parameters and synthetic summers shared across test modules."""

import numpy as np
import pytest

from heatwave.core_model import ModelParams, SummerSegment
from heatwave.generator import simulate_summers

TRUE_PARAMS = dict(
    a0=0.03, a1=0.75, u=34.0, sigma=2.0, xi=-0.2,
    mu=24.0, sigmaN2=9.0, phi=0.6, alpha=0.6, alpha01=0.7,
)


def _make_params(**overrides) -> ModelParams:
    """Reference parameter set with optional field overrides."""
    return ModelParams(**{**TRUE_PARAMS, **overrides}).validate()


def _simulate_segments(params: ModelParams, n_years: int, n_days: int, seed: int,
                       first_year: int = 1990) -> list[SummerSegment]:
    values, _ = simulate_summers(params, n_days, n_years, np.random.default_rng(seed))
    return [SummerSegment(values[k], year=first_year + k) for k in range(n_years)]


@pytest.fixture
def true_params():
    return _make_params()


@pytest.fixture(scope="session")
def synthetic_segments():
    """22 summers x 92 days simulated at the reference parameters."""
    return _simulate_segments(_make_params(), n_years=22, n_days=92, seed=1234)


@pytest.fixture(scope="session")
def small_segments():
    """Four short summers with two missing days, for quick chain runs."""
    params = _make_params(a0=0.08)
    segments = _simulate_segments(params, n_years=4, n_days=40, seed=99)
    gappy = segments[1].values.copy()
    gappy[[5, 17]] = np.nan
    segments[1] = SummerSegment(gappy, year=segments[1].year)
    return segments
