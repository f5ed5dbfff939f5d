"""Preprocess: station file ingestion, JJA extraction and de-seasonalization."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from . import config
from .core_model import SummerSegment

logger = logging.getLogger("heatwave.preprocess")

VALID = "valid"
SUSPECT = "suspect"
MISSING = "missing"

_ECAD_QUALITY = {
    config.ECAD_QUALITY_VALID: VALID,
    config.ECAD_QUALITY_SUSPECT: SUSPECT,
    config.ECAD_QUALITY_MISSING: MISSING,
}


class StationFileError(ValueError):
    """Raised when a station file cannot be parsed; the message names the line."""


class SplineConvergenceError(RuntimeError):
    """Raised when the median spline iterations do not converge."""


@dataclass
class RawStationSeries:
    """Daily maxima in degC with per-day quality labels; missing days are NaN."""

    dates: pd.DatetimeIndex
    tx: np.ndarray
    quality: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.dates = pd.DatetimeIndex(self.dates)
        self.tx = np.asarray(self.tx, dtype=float)
        self.quality = np.asarray(self.quality, dtype=object)
        if not (len(self.dates) == self.tx.size == self.quality.size):
            raise StationFileError(f"{self.source}: dates, values and quality differ in length")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates.asi8) > 0):
            raise StationFileError(f"{self.source}: dates are not strictly increasing")

    def to_series(self) -> pd.Series:
        return pd.Series(self.tx, index=self.dates, name="tx")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _find_ecad_header(lines: list[str]) -> int | None:
    for i, line in enumerate(lines):
        if line.strip().upper().startswith("SOUID"):
            return i
    return None


def parse_ecad(path: str | Path, drop_suspect: bool = True) -> RawStationSeries:
    """Parse an ECA&D blended TX series (SOUID, DATE, TX, Q_TX rows after a free-text header).

    TX is converted from 0.1 degC to degC. Q_TX = 9 and TX = -9999 become
    missing; Q_TX = 1 (suspect) becomes missing too unless ``drop_suspect``
    is False, and is counted either way.

    Raises:
        StationFileError: On a missing header, malformed date or non-numeric field,
            with the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    except OSError as exc:
        raise StationFileError(f"{path}: cannot read file: {exc}") from exc

    header = _find_ecad_header(lines)
    if header is None:
        raise StationFileError(f"{path}: no 'SOUID,DATE,TX,Q_TX' header line found")

    body = "\n".join(lines[header:])
    try:
        frame = pd.read_csv(io.StringIO(body), dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise StationFileError(f"{path}: {exc}") from exc
    frame.columns = [c.strip().upper() for c in frame.columns]
    tx_col = next((c for c in frame.columns if c in ("TX", "TG", "TN")), None)
    q_col = next((c for c in frame.columns if c.startswith("Q_")), None)
    if "DATE" not in frame.columns or tx_col is None or q_col is None:
        raise StationFileError(f"{path}: header line {header + 1} lacks DATE, TX or Q_TX columns")

    frame = frame.apply(lambda col: col.str.strip())
    first_data_line = header + 2
    dates = pd.to_datetime(frame["DATE"], format="%Y%m%d", errors="coerce")
    tx = pd.to_numeric(frame[tx_col], errors="coerce")
    q = pd.to_numeric(frame[q_col], errors="coerce")
    for name, parsed in (("DATE", dates), (tx_col, tx), (q_col, q)):
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise StationFileError(
                f"{path}: line {first_data_line + row}: invalid {name} field {frame[name].iloc[row]!r}")

    q = q.astype(int).to_numpy()
    unknown = ~np.isin(q, list(_ECAD_QUALITY))
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise StationFileError(f"{path}: line {first_data_line + row}: unknown quality code {q[row]}")
    quality = np.array([_ECAD_QUALITY[code] for code in q], dtype=object)
    raw = tx.to_numpy(dtype=float)
    quality[raw == config.ECAD_MISSING_VALUE] = MISSING
    values = raw / config.ECAD_TENTHS

    blank = quality == MISSING
    if drop_suspect:
        blank |= quality == SUSPECT
    values[blank] = np.nan

    series = RawStationSeries(pd.DatetimeIndex(dates), values, quality, source=str(path))
    summary = quality_summary(series)
    logger.info("Parsed %s: %d days, %d suspect, %d missing", path.name,
                summary["n_days"], summary["n_suspect"], summary["n_missing"])
    if summary["n_suspect"]:
        logger.warning("%s: %d suspect values (%s)", path.name, summary["n_suspect"],
                       "set to missing" if drop_suspect else "kept")
    return series


def parse_station_csv(path: str | Path) -> RawStationSeries:
    """Plain two-column CSV: date, value in degC (empty or NA for missing)."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise StationFileError(f"{path}: {exc}") from exc
    if frame.shape[1] != 2:
        raise StationFileError(f"{path}: expected 2 columns (date, value), found {frame.shape[1]}")
    date_col, value_col = frame.columns
    dates = pd.to_datetime(frame[date_col].str.strip(), errors="coerce")
    raw = frame[value_col].str.strip()
    is_missing = raw.isin(["", "NA", "NaN", "nan"])
    values = pd.to_numeric(raw.where(~is_missing), errors="coerce")
    bad_date = np.flatnonzero(dates.isna().to_numpy())
    bad_value = np.flatnonzero((values.isna() & ~is_missing).to_numpy())
    for kind, bad, column in (("date", bad_date, date_col), ("value", bad_value, value_col)):
        if bad.size:
            row = int(bad[0])
            raise StationFileError(f"{path}: line {row + 2}: invalid {kind} {frame[column].iloc[row]!r}")
    quality = np.where(is_missing.to_numpy(), MISSING, VALID).astype(object)
    return RawStationSeries(pd.DatetimeIndex(dates), values.to_numpy(dtype=float), quality, source=str(path))


def load_station_series(path: str | Path, drop_suspect: bool = True) -> RawStationSeries:
    """Dispatch on content: ECA&D layout if a SOUID header is present, else plain CSV."""
    path = Path(path)
    if not path.exists():
        raise StationFileError(f"{path}: file not found")
    with path.open(encoding="utf-8", errors="replace") as handle:
        head = [next(handle, "") for _ in range(200)]
    if _find_ecad_header(head) is not None:
        return parse_ecad(path, drop_suspect=drop_suspect)
    return parse_station_csv(path)


def quality_summary(series: RawStationSeries) -> dict:
    suspect = series.quality == SUSPECT
    return {
        "n_days": int(series.tx.size),
        "n_valid": int(np.sum(series.quality == VALID)),
        "n_suspect": int(suspect.sum()),
        "n_missing": int(np.isnan(series.tx).sum()),
        "suspect_dates": [d.strftime("%Y-%m-%d") for d in series.dates[suspect]],
    }


# ---------------------------------------------------------------------------
# Summer segments
# ---------------------------------------------------------------------------

def extract_jja(series: RawStationSeries, year_from: int = config.DEFAULT_YEAR_FROM,
                year_to: int = config.DEFAULT_YEAR_TO) -> list[SummerSegment]:
    """One 92-day Jun 1 - Aug 31 segment per year; absent dates become missing."""
    if year_to < year_from:
        raise ValueError(f"year range {year_from}-{year_to} is empty")
    by_date = series.to_series()
    segments = []
    for year in range(year_from, year_to + 1):
        days = pd.date_range(pd.Timestamp(year, *config.JJA_START), pd.Timestamp(year, *config.JJA_END), freq="D")
        values = by_date.reindex(days).to_numpy(dtype=float)
        segment = SummerSegment(values, year=year)
        if segment.n_missing > config.MAX_MISSING_FRACTION * len(segment):
            logger.warning("Summer %d: %d of %d days missing", year, segment.n_missing, len(segment))
        segments.append(segment)
    logger.info("Extracted %d summers (%d-%d), %d missing days", len(segments), year_from, year_to,
                sum(s.n_missing for s in segments))
    return segments


# ---------------------------------------------------------------------------
# Seasonal median spline
# ---------------------------------------------------------------------------

def _spline_knots(n_days: int, num_interior: int, degree: int) -> np.ndarray:
    """Equally spaced knots on [1, n_days] padded by ``degree`` knots on each side."""
    inner = np.linspace(1.0, float(n_days), num_interior + 2)
    dx = inner[1] - inner[0]
    return np.concatenate((
        inner[0] - dx * np.arange(degree, 0, -1),
        inner,
        inner[-1] + dx * np.arange(1, degree + 1),
    ))


def _design_matrix(days: np.ndarray, n_days: int) -> np.ndarray:
    knots = _spline_knots(n_days, config.SPLINE_INTERIOR_KNOTS, config.SPLINE_DEGREE)
    return BSpline.design_matrix(np.asarray(days, dtype=float), knots, config.SPLINE_DEGREE).toarray()


def _difference_penalty(n_basis: int) -> np.ndarray:
    d = np.diff(np.eye(n_basis), n=2, axis=0)
    return d.T @ d


def _median_spline_coefficients(basis: np.ndarray, y: np.ndarray, smoothing: float) -> np.ndarray:
    """IRLS for sum |r| + smoothing * ||D2 c||^2 with |r| ~ sqrt(r^2 + eps^2)."""
    penalty = smoothing * _difference_penalty(basis.shape[1])
    weights = np.ones_like(y)
    coefs = np.zeros(basis.shape[1])
    for iteration in range(1, config.SPLINE_MAX_ITER + 1):
        bw = basis * weights[:, None]
        new = np.linalg.solve(basis.T @ bw + penalty, bw.T @ y)
        if np.max(np.abs(new - coefs)) < config.SPLINE_TOL:
            logger.debug("Median spline converged in %d iterations (smoothing %g)", iteration, smoothing)
            return new
        coefs = new
        residual = y - basis @ coefs
        weights = 1.0 / np.sqrt(residual ** 2 + config.SPLINE_ABS_EPS ** 2)
    raise SplineConvergenceError(
        f"median spline did not converge in {config.SPLINE_MAX_ITER} iterations (smoothing {smoothing:g})")


def _observed_pairs(day_index: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    day_index = np.asarray(day_index, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = ~np.isnan(values)
    return day_index[keep], values[keep]


def select_smoothing_by_cv(day_index: np.ndarray, values: np.ndarray,
                           grid: Sequence[float] = config.SPLINE_SMOOTHING_GRID,
                           folds: int = config.SPLINE_CV_FOLDS,
                           n_days: int = config.SUMMER_LENGTH) -> float:
    """Smoothing parameter minimizing held-out mean absolute error (smallest on ties)."""
    days, y = _observed_pairs(day_index, values)
    basis = _design_matrix(days, n_days)
    fold_of = np.arange(y.size) % folds
    losses = []
    for smoothing in grid:
        errors = []
        for k in range(folds):
            test = fold_of == k
            coefs = _median_spline_coefficients(basis[~test], y[~test], smoothing)
            errors.append(np.abs(y[test] - basis[test] @ coefs))
        losses.append(float(np.mean(np.concatenate(errors))))
    best = float(grid[int(np.argmin(losses))])
    logger.info("Selected smoothing %g by %d-fold CV (losses %s)", best, folds,
                ", ".join(f"{loss:.4f}" for loss in losses))
    return best


def fit_seasonal_quantile_spline(day_index: np.ndarray, values: np.ndarray,
                                 smoothing: float | None = None,
                                 n_days: int = config.SUMMER_LENGTH) -> np.ndarray:
    """Median-regression P-spline of values on day of season; returns the curve at days 1..n_days.

    Args:
        day_index: Day of season (1-based) of each value, pooled across years.
        values: Temperatures; NaN entries are ignored.
        smoothing: Penalty weight; chosen by cross-validation when None.

    Raises:
        SplineConvergenceError: If IRLS does not converge.
    """
    days, y = _observed_pairs(day_index, values)
    if y.size == 0:
        raise ValueError("no observed values to fit the seasonal curve to")
    if smoothing is None:
        smoothing = select_smoothing_by_cv(days, y, n_days=n_days)
    coefs = _median_spline_coefficients(_design_matrix(days, n_days), y, smoothing)
    return _design_matrix(np.arange(1, n_days + 1), n_days) @ coefs


def pooled_by_day(segments: Sequence[SummerSegment]) -> tuple[np.ndarray, np.ndarray]:
    """(day_of_season, value) pooled over segments, missing days included as NaN."""
    return (np.concatenate([seg.day_of_season for seg in segments]),
            np.concatenate([seg.values for seg in segments]))


def deseasonalize(segments: Sequence[SummerSegment], curve: np.ndarray) -> list[SummerSegment]:
    """y - curve(day) + overall median of the observed values; missing stays missing."""
    curve = np.asarray(curve, dtype=float)
    overall_median = float(np.median(np.concatenate([seg.observed for seg in segments])))
    out = []
    for seg in segments:
        adjusted = seg.values - curve[seg.day_of_season - 1] + overall_median
        out.append(SummerSegment(adjusted, seg.missing_mask.copy(), seg.year, seg.day_of_season.copy()))
    return out
