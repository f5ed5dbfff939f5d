"""Diagnostics: extremal dependence estimators, PACF, Frechet rank transform
and posterior predictive checks.

Every estimator takes either one series or a sequence of segments and never
pairs days across segment boundaries. Undefined estimates are NaN.
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import islice
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.tsa.ar_model import ar_select_order
from statsmodels.tsa.stattools import levinson_durbin

from . import config
from .core_model import SummerSegment

logger = logging.getLogger("heatwave.diagnostics")


class DiagnosticsError(RuntimeError):
    """Raised when an estimator gets degenerate input."""


SeriesInput = np.ndarray | Sequence[np.ndarray] | Sequence[SummerSegment]


def _segment_arrays(data: SeriesInput) -> list[np.ndarray]:
    if isinstance(data, np.ndarray):
        if data.ndim == 1:
            return [data.astype(float)]
        return [np.asarray(row, dtype=float) for row in data]
    return [np.asarray(s.values if isinstance(s, SummerSegment) else s, dtype=float) for s in data]


# ---------------------------------------------------------------------------
# Extremal dependence
# ---------------------------------------------------------------------------

def chi_hat(values: SeriesInput, u: float, lag: int = 1) -> float:
    """Empirical P(Y_t > u | Y_{t-lag} > u) over within-segment pairs with both days observed."""
    hits = 0
    base = 0
    for y in _segment_arrays(values):
        if y.size <= lag:
            continue
        prev, cur = y[:-lag], y[lag:]
        valid = ~np.isnan(prev) & ~np.isnan(cur) & (prev > u)
        base += int(valid.sum())
        hits += int((valid & (cur > u)).sum())
    return hits / base if base else float("nan")


def chi_curve(values: SeriesInput, grid: Sequence[float] = config.CHI_QUANTILE_GRID,
              lag: int = 1) -> pd.DataFrame:
    """chi_hat at the empirical quantiles of ``grid`` (x-axis on the quantile scale)."""
    grid = np.asarray(grid, dtype=float)
    if np.any((grid <= 0) | (grid >= 1)):
        raise ValueError("quantile grid must lie strictly inside (0, 1)")
    pooled = np.concatenate(_segment_arrays(values))
    thresholds = np.nanquantile(pooled, grid)
    return pd.DataFrame({
        "quantile": grid,
        "threshold": thresholds,
        "chi": [chi_hat(values, u, lag) for u in thresholds],
    })


def extremal_index(values: SeriesInput, u: float) -> float:
    """Intervals estimator of the extremal index from within-segment interexceedance times.

    Uses the small-gap form when no interexceedance time exceeds 2 and the
    bias-corrected form otherwise; the result is clamped to at most 1.
    """
    gaps = []
    for y in _segment_arrays(values):
        exceed = np.flatnonzero(y > u)
        if exceed.size > 1:
            gaps.append(np.diff(exceed))
    if not gaps:
        return float("nan")
    times = np.concatenate(gaps).astype(float)
    if times.max() <= 2:
        theta = 2.0 * times.sum() ** 2 / (times.size * np.sum(times ** 2))
    else:
        theta = 2.0 * np.sum(times - 1.0) ** 2 / (times.size * np.sum((times - 1.0) * (times - 2.0)))
    return float(min(theta, 1.0))


# ---------------------------------------------------------------------------
# Linear dependence
# ---------------------------------------------------------------------------

@dataclass
class PACFResult:
    pacf: np.ndarray  # lags 1..max_lag
    band: float
    n: int

    def to_frame(self) -> pd.DataFrame:
        lags = np.arange(1, self.pacf.size + 1)
        return pd.DataFrame({"lag": lags, "pacf": self.pacf, "band": self.band})


def pooled_autocovariance(values: SeriesInput, max_lag: int) -> tuple[np.ndarray, int]:
    """Biased autocovariances from within-segment products about the pooled mean."""
    segments = _segment_arrays(values)
    pooled = np.concatenate(segments)
    n = int(np.sum(~np.isnan(pooled)))
    mean = np.nanmean(pooled) if n else 0.0
    acov = np.zeros(max_lag + 1)
    for y in segments:
        d = y - mean
        for k in range(min(max_lag, y.size - 1) + 1):
            prod = d[: y.size - k] * d[k:]
            acov[k] += np.nansum(prod)
    return acov / max(n, 1), n


def pacf(values: SeriesInput, max_lag: int = config.PACF_MAX_LAG) -> PACFResult:
    """Partial autocorrelations by Durbin-Levinson on segment-pooled autocovariances.

    Raises:
        DiagnosticsError: On a zero-variance or too-short series.
    """
    acov, n = pooled_autocovariance(values, max_lag)
    if n <= max_lag + 1:
        raise DiagnosticsError(f"need more than {max_lag + 1} observations for {max_lag} lags, got {n}")
    if not acov[0] > 0:
        raise DiagnosticsError("series has zero variance; partial autocorrelations are undefined")
    _, _, partial, _, _ = levinson_durbin(acov, nlags=max_lag, isacov=True)
    return PACFResult(pacf=np.asarray(partial[1:]), band=1.96 / np.sqrt(n), n=n)


def ar_order_by_year(segments: Sequence[SummerSegment], max_order: int = config.AR_MAX_ORDER) -> pd.DataFrame:
    """AR order picked by AIC separately for every complete summer."""
    rows = []
    for seg in segments:
        if seg.n_missing:
            logger.info("Skipping %d in AR order selection: %d missing days", seg.year, seg.n_missing)
            continue
        selected = ar_select_order(seg.values, maxlag=max_order, ic="aic", trend="c")
        lags = selected.ar_lags or []
        rows.append({"year": seg.year, "ar_order": int(max(lags)) if len(lags) else 0})
    return pd.DataFrame(rows, columns=["year", "ar_order"])


# ---------------------------------------------------------------------------
# Frechet scale
# ---------------------------------------------------------------------------

def frechet_rank_transform(values: np.ndarray) -> np.ndarray:
    """z = -1/log(r/(n+1)) with average ranks on ties; NaN stays NaN."""
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    observed = ~np.isnan(values)
    n = int(observed.sum())
    if n:
        ranks = stats.rankdata(values[observed], method="average")
        out[observed] = -1.0 / np.log(ranks / (n + 1.0))
    return out


def lag_pairs(segments: Sequence[SummerSegment], lag: int = 1) -> pd.DataFrame:
    """Within-segment (y_{t-lag}, y_t) pairs on the original and Frechet rank scales."""
    pooled = np.concatenate([seg.values for seg in segments])
    z_pooled = frechet_rank_transform(pooled)
    frames = []
    offset = 0
    for seg in segments:
        n = len(seg)
        z = z_pooled[offset:offset + n]
        offset += n
        if n <= lag:
            continue
        frame = pd.DataFrame({
            "year": seg.year,
            "day_of_season": seg.day_of_season[lag:],
            "y_prev": seg.values[:-lag],
            "y": seg.values[lag:],
            "z_prev": z[:-lag],
            "z": z[lag:],
        })
        frames.append(frame.dropna())
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["year", "day_of_season", "y_prev", "y", "z_prev", "z"])


# ---------------------------------------------------------------------------
# Posterior predictive checks
# ---------------------------------------------------------------------------

def ppc_statistic_names(thresholds: Sequence[float] = config.PPC_THRESHOLDS,
                        lags: Sequence[int] = config.PPC_LAGS) -> list[str]:
    names = ["q0.99", "q0.999", "theta"]
    names += [f"chi{lag}({thr:g})" for lag in lags for thr in thresholds]
    return names


def ppc_statistics(values: SeriesInput, theta_threshold: float,
                   thresholds: Sequence[float] = config.PPC_THRESHOLDS,
                   lags: Sequence[int] = config.PPC_LAGS) -> dict[str, float]:
    """The predictive-check statistic set for one dataset."""
    segments = _segment_arrays(values)
    pooled = np.concatenate(segments)
    pooled = pooled[~np.isnan(pooled)]
    result = {
        "q0.99": float(np.quantile(pooled, 0.99)),
        "q0.999": float(np.quantile(pooled, 0.999)),
        "theta": extremal_index(segments, theta_threshold),
    }
    for lag in lags:
        for thr in thresholds:
            result[f"chi{lag}({thr:g})"] = chi_hat(segments, thr, lag)
    return result


@dataclass
class PPCRow:
    name: str
    observed: float
    lower: float
    upper: float
    inside: bool
    n_replicates: int
    n_excluded: int


@dataclass
class PPCReport:
    rows: list[PPCRow]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.rows]).set_index("name")

    def to_table(self) -> str:
        """Aligned text: statistics as columns, rows lower / observed / upper."""
        frame = self.to_frame()[["lower", "observed", "upper"]].T
        return frame.to_string(float_format=lambda x: f"{x:.3f}", na_rep="NA")

    @property
    def all_inside(self) -> bool:
        return all(r.inside for r in self.rows)


def _ordered_map(fn: Callable, items: Iterable, threads: int) -> Iterator:
    """fn over items in input order, holding at most 2 * threads items in flight."""
    if threads <= 1:
        yield from map(fn, items)
        return
    source = iter(items)
    lookahead = 2 * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = deque(pool.submit(fn, item) for item in islice(source, lookahead))
        while pending:
            result = pending.popleft().result()
            for item in islice(source, 1):
                pending.append(pool.submit(fn, item))
            yield result


def _replicates(summers: Iterable, replicate_size: int) -> Iterator[list[np.ndarray]]:
    """Consecutive blocks of replicate_size summers from the same source draw."""
    buffer: list[np.ndarray] = []
    current_draw = None
    dropped = 0
    for summer in summers:
        if summer.source_draw != current_draw:
            dropped += len(buffer)
            buffer = []
            current_draw = summer.source_draw
        buffer.append(summer.values)
        if len(buffer) == replicate_size:
            yield buffer
            buffer = []
    dropped += len(buffer)
    if dropped:
        logger.info("Dropped %d simulated summers that did not fill a replicate", dropped)


def posterior_predictive_check(
    summers: Iterable,
    observed: Sequence[SummerSegment],
    replicate_size: int = config.PPC_REPLICATE_SUMMERS,
    thresholds: Sequence[float] = config.PPC_THRESHOLDS,
    lags: Sequence[int] = config.PPC_LAGS,
    extremal_quantile: float = config.PPC_EXTREMAL_QUANTILE,
    interval: tuple[float, float] = config.PPC_INTERVAL,
    threads: int = 1,
) -> PPCReport:
    """Compare observed statistics with their distribution over simulated replicate datasets.

    The extremal index threshold is the observed ``extremal_quantile`` quantile,
    held fixed for every replicate. Replicates where a statistic is undefined
    are left out of that statistic's interval and counted in ``n_excluded``.
    """
    pooled_obs = np.concatenate([seg.observed for seg in observed])
    theta_threshold = float(np.quantile(pooled_obs, extremal_quantile))
    observed_stats = ppc_statistics(observed, theta_threshold, thresholds, lags)

    def compute(replicate: list[np.ndarray]) -> dict[str, float]:
        return ppc_statistics(replicate, theta_threshold, thresholds, lags)

    replicate_stats = list(_ordered_map(compute, _replicates(summers, replicate_size), threads))
    if not replicate_stats:
        raise ValueError(f"no complete replicate of {replicate_size} summers in the simulated stream")
    logger.info("Posterior predictive check over %d replicate datasets", len(replicate_stats))

    table = pd.DataFrame(replicate_stats)
    rows = []
    for name in ppc_statistic_names(thresholds, lags):
        column = table[name].to_numpy(dtype=float)
        valid = column[~np.isnan(column)]
        n_excluded = column.size - valid.size
        if n_excluded:
            logger.warning("%s undefined in %d of %d replicates; excluded", name, n_excluded, column.size)
        if valid.size:
            lower, upper = (float(q) for q in np.quantile(valid, interval))
        else:
            lower = upper = float("nan")
        obs = observed_stats[name]
        if np.isnan(obs):
            logger.warning("Observed %s is undefined", name)
        inside = bool(valid.size and not np.isnan(obs) and lower <= obs <= upper)
        rows.append(PPCRow(name, obs, lower, upper, inside, int(valid.size), int(n_excluded)))
    return PPCReport(rows)
