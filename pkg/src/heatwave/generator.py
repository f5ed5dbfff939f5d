"""Weather generator: simulate summers from fitted parameters, detect heat
waves under three definitions and summarize them.

Day indices on HeatWaveEvent are 0-based positions within the summer.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import config
from .core_model import (
    HEATWAVE,
    NON_HEATWAVE,
    ModelParams,
    SummerSegment,
    conditional_log_cdf,
    gpd_quantile,
    stationary_state_distribution,
)

if TYPE_CHECKING:
    from .inference import PosteriorSample

logger = logging.getLogger("heatwave.generator")

IMPLICIT = "implicit"
HUTH = "huth"
WORST_ANNUAL = "worst_annual"
RULES = (IMPLICIT, HUTH, WORST_ANNUAL)


class SimulationError(RuntimeError):
    """Raised when conditional inversion fails to converge."""


@dataclass(frozen=True)
class HeatWaveEvent:
    start: int
    length: int
    temps: tuple[float, ...]
    rule: str

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("event length must be >= 1")
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.rule == WORST_ANNUAL and self.length != config.WORST_EVENT_WINDOW:
            raise ValueError(f"worst-annual events span {config.WORST_EVENT_WINDOW} days, got {self.length}")

    @property
    def mean_temperature(self) -> float:
        return float(np.mean(self.temps)) if self.temps else float("nan")


@dataclass
class SimulatedSummer:
    values: np.ndarray
    states: np.ndarray
    source_draw: int = -1
    summer_index: int = 0


def expected_event_statistics(a0: float, a1: float, summer_length: int = config.SUMMER_LENGTH) -> dict[str, float]:
    """Event statistics implied by the transition probabilities alone."""
    pi0, pi1 = stationary_state_distribution(a0, a1)
    return {
        "expected_duration": 1.0 / (1.0 - a1),
        "heatwave_fraction": pi1,
        "expected_events": pi1 + (summer_length - 1) * pi0 * a0,
    }


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _margin_median_and_step(state: int, params: ModelParams) -> tuple[float, float]:
    if state == HEATWAVE:
        return float(gpd_quantile(0.5, params.u, params.sigma, params.xi)), params.sigma
    return params.mu, params.sigmaN


def _invert_conditional(v: np.ndarray, y_prev: np.ndarray, s_t: int, s_prev: int,
                        params: ModelParams) -> np.ndarray:
    """Solve F(y | y_prev) = v by bisection, bracket grown geometrically from the margin median."""
    def cdf(y):
        return np.exp(conditional_log_cdf(y, y_prev, s_t, s_prev, params))

    median, step = _margin_median_and_step(s_t, params)
    lo = np.full(v.shape, median - step)
    hi = np.full(v.shape, median + step)
    if s_t == HEATWAVE:
        lo[:] = params.u
        if params.xi < 0:
            hi[:] = params.u - params.sigma / params.xi

    for _ in range(config.BISECTION_MAX_ITER):
        low_bad = cdf(lo) > v
        high_bad = cdf(hi) < v
        if not (low_bad.any() or high_bad.any()):
            break
        lo = np.where(low_bad, median - 2.0 * (median - lo), lo)
        hi = np.where(high_bad, median + 2.0 * (hi - median), hi)
    else:
        raise SimulationError(f"could not bracket conditional quantile for states ({s_prev}, {s_t})")

    for _ in range(config.BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = cdf(mid)
        done = (np.abs(f_mid - v) < config.BISECTION_PROB_TOL) | (hi - lo <= 4 * np.finfo(float).eps * np.abs(mid))
        if done.all():
            return mid
        below = f_mid < v
        lo = np.where(below & ~done, mid, lo)
        hi = np.where(~below & ~done, mid, hi)
    raise SimulationError(
        f"bisection did not converge in {config.BISECTION_MAX_ITER} iterations for states ({s_prev}, {s_t})")


def simulate_summers(params: ModelParams, n_days: int, n_summers: int, rng: np.random.Generator,
                     states: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_summers`` independent summers sharing one parameter set.

    Returns (values, states), both shaped (n_summers, n_days). A fixed
    ``states`` path (length n_days) is used for every summer when given.
    """
    if n_days < 2:
        raise ValueError("n_days must be >= 2")
    if states is None:
        _, pi1 = stationary_state_distribution(params.a0, params.a1)
        draws = rng.random((n_summers, n_days))
        path = np.empty((n_summers, n_days), dtype=np.int8)
        path[:, 0] = draws[:, 0] < pi1
        for t in range(1, n_days):
            p_enter = np.where(path[:, t - 1] == HEATWAVE, params.a1, params.a0)
            path[:, t] = draws[:, t] < p_enter
    else:
        path = np.broadcast_to(np.asarray(states, dtype=np.int8), (n_summers, n_days)).copy()

    uniforms = rng.random((n_summers, n_days))
    values = np.empty((n_summers, n_days))
    first_hot = path[:, 0] == HEATWAVE
    stationary_sd = params.sigmaN / np.sqrt(1.0 - params.phi ** 2)
    values[:, 0] = np.where(
        first_hot,
        gpd_quantile(uniforms[:, 0], params.u, params.sigma, params.xi),
        params.mu + stationary_sd * stats.norm.ppf(uniforms[:, 0]),
    )
    for t in range(1, n_days):
        y_prev = values[:, t - 1]
        for sp in (NON_HEATWAVE, HEATWAVE):
            for st in (NON_HEATWAVE, HEATWAVE):
                mask = (path[:, t - 1] == sp) & (path[:, t] == st)
                if not mask.any():
                    continue
                if sp == NON_HEATWAVE and st == NON_HEATWAVE:
                    mean = params.mu + params.phi * (y_prev[mask] - params.mu)
                    values[mask, t] = mean + params.sigmaN * stats.norm.ppf(uniforms[mask, t])
                else:
                    values[mask, t] = _invert_conditional(uniforms[mask, t], y_prev[mask], st, sp, params)
    return values, path


def simulate_summer(params: ModelParams, n_days: int, rng: np.random.Generator) -> SimulatedSummer:
    values, states = simulate_summers(params, n_days, 1, rng)
    return SimulatedSummer(values=values[0], states=states[0])


def _simulate_draw(draw: int, params: ModelParams, summers_per_draw: int, n_days: int,
                   rng: np.random.Generator) -> list[SimulatedSummer]:
    values, states = simulate_summers(params, n_days, summers_per_draw, rng)
    return [
        SimulatedSummer(values=values[i], states=states[i], source_draw=draw, summer_index=i)
        for i in range(summers_per_draw)
    ]


def posterior_weather_generator(
    samples: Sequence["PosteriorSample"],
    summers_per_draw: int = config.SUMMERS_PER_DRAW,
    rng: np.random.Generator | int = config.DEFAULT_SEED,
    n_days: int = config.SUMMER_LENGTH,
    threads: int = 1,
) -> Iterator[SimulatedSummer]:
    """Stream summers_per_draw simulated summers for every posterior draw, in draw order.

    Draw k is simulated with the k-th child of the seed sequence, so output
    does not depend on ``threads``.
    """
    if not samples:
        raise ValueError("posterior_weather_generator needs at least one sample")
    if isinstance(rng, np.random.Generator):
        children = rng.spawn(len(samples))
    else:
        children = [np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(len(samples))]
    logger.info("Simulating %d summers per draw for %d draws", summers_per_draw, len(samples))

    if threads <= 1:
        for k, sample in enumerate(samples):
            yield from _simulate_draw(k, sample.params, summers_per_draw, n_days, children[k])
        return

    lookahead = 2 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = []
        next_draw = 0
        while next_draw < len(samples) or pending:
            while next_draw < len(samples) and len(pending) < lookahead:
                pending.append(pool.submit(
                    _simulate_draw, next_draw, samples[next_draw].params, summers_per_draw,
                    n_days, children[next_draw]))
                next_draw += 1
            yield from pending.pop(0).result()


# ---------------------------------------------------------------------------
# Heat-wave definitions
# ---------------------------------------------------------------------------

def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of maximal runs of True."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def detect_implicit(states: np.ndarray, values: np.ndarray | None = None) -> list[HeatWaveEvent]:
    """Maximal runs of heat-wave states."""
    states = np.asarray(states)
    events = []
    for start, length in _runs(states == HEATWAVE):
        temps = () if values is None else tuple(float(x) for x in values[start:start + length])
        events.append(HeatWaveEvent(start, length, temps, IMPLICIT))
    return events


def detect_huth(values: np.ndarray, t1: float, t2: float) -> list[HeatWaveEvent]:
    """Huth-style events: inside each run above t2, the longest period
    with at least three days above t1 and a mean above t1 (earliest on ties)."""
    if not t1 > t2:
        raise ValueError(f"T1 ({t1}) must exceed T2 ({t2})")
    values = np.asarray(values, dtype=float)
    events = []
    for run_start, run_length in _runs(values > t2):
        run = values[run_start:run_start + run_length]
        hot = np.concatenate([[0], np.cumsum(run > t1)])
        total = np.concatenate([[0.0], np.cumsum(run)])
        found = None
        for length in range(run_length, 2, -1):
            for i in range(run_length - length + 1):
                j = i + length
                if hot[j] - hot[i] >= 3 and (total[j] - total[i]) / length > t1:
                    found = (i, length)
                    break
            if found:
                break
        if found:
            i, length = found
            start = run_start + i
            events.append(HeatWaveEvent(start, length, tuple(float(x) for x in values[start:start + length]), HUTH))
    return events


def detect_worst_annual(values: np.ndarray) -> HeatWaveEvent:
    """The three-day window with the highest mean daily high; earliest on ties."""
    window = config.WORST_EVENT_WINDOW
    values = np.asarray(values, dtype=float)
    if values.size < window:
        raise ValueError(f"series of length {values.size} is shorter than the window {window}")
    means = np.lib.stride_tricks.sliding_window_view(values, window).mean(axis=1)
    start = int(np.argmax(np.where(np.isnan(means), -np.inf, means)))
    return HeatWaveEvent(start, window, tuple(float(x) for x in values[start:start + window]), WORST_ANNUAL)


def huth_thresholds(segments: Sequence[SummerSegment] | np.ndarray,
                    quantiles: tuple[float, float] = config.HUTH_QUANTILES) -> tuple[float, float]:
    """(T1, T2) as empirical quantiles of the observed series."""
    if isinstance(segments, np.ndarray):
        pooled = segments[~np.isnan(segments)]
    else:
        pooled = np.concatenate([seg.observed for seg in segments])
    t1, t2 = np.quantile(pooled, quantiles)
    return float(t1), float(t2)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class RetrospectiveSummary:
    length_pmf: pd.Series
    count_pmf: pd.Series
    event_temperatures: np.ndarray


def _pmf(values: Sequence[int], name: str) -> pd.Series:
    counts = pd.Series(values, dtype=int).value_counts().sort_index()
    pmf = counts / counts.sum() if len(counts) else counts.astype(float)
    pmf.index.name = name
    return pmf.rename("probability")


def retrospective_summaries(state_draws: Sequence[Sequence[np.ndarray]],
                            segments: Sequence[SummerSegment]) -> RetrospectiveSummary:
    """Pool implicit events of the observed series over posterior state draws."""
    lengths: list[int] = []
    counts: list[int] = []
    temps: list[float] = []
    for draw in state_draws:
        if len(draw) != len(segments):
            raise ValueError("each draw needs one state sequence per observed segment")
        n_events = 0
        for path, seg in zip(draw, segments):
            events = detect_implicit(path, seg.values)
            n_events += len(events)
            for event in events:
                lengths.append(event.length)
                temps.extend(t for t in event.temps if not np.isnan(t))
        counts.append(n_events)
    return RetrospectiveSummary(
        length_pmf=_pmf(lengths, "length"),
        count_pmf=_pmf(counts, "n_events"),
        event_temperatures=np.asarray(temps),
    )


def summarize_definitions(
    summers: Iterable[SimulatedSummer],
    t1: float,
    t2: float,
    recompute_huth: bool = False,
    huth_quantiles: tuple[float, float] = config.HUTH_QUANTILES,
) -> pd.DataFrame:
    """Per draw and rule: events per summer, mean duration, mean event temperature.

    With ``recompute_huth`` the Huth thresholds come from each simulated
    summer instead of the fixed observed values.
    """
    acc = defaultdict(lambda: np.zeros(4))  # summers, events, total length, sum of event means
    for summer in summers:
        if recompute_huth:
            t1, t2 = huth_thresholds(summer.values, huth_quantiles)
        by_rule = {
            IMPLICIT: detect_implicit(summer.states, summer.values),
            HUTH: detect_huth(summer.values, t1, t2),
            WORST_ANNUAL: [detect_worst_annual(summer.values)],
        }
        for rule, events in by_rule.items():
            row = acc[(summer.source_draw, rule)]
            row[0] += 1
            row[1] += len(events)
            row[2] += sum(e.length for e in events)
            row[3] += sum(e.mean_temperature for e in events)

    records = []
    for (draw, rule), (n_summers, n_events, total_length, temp_sum) in sorted(acc.items()):
        records.append({
            "draw": draw,
            "rule": rule,
            "n_summers": int(n_summers),
            "events_per_summer": n_events / n_summers,
            "mean_duration": total_length / n_events if n_events else float("nan"),
            "mean_temperature": temp_sum / n_events if n_events else float("nan"),
        })
    return pd.DataFrame(records, columns=["draw", "rule", "n_summers", "events_per_summer",
                                          "mean_duration", "mean_temperature"])
