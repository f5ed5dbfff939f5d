"""Persistence: CSV/JSON artifacts exchanged between pipeline stages."""

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__, config
from .core_model import PARAM_NAMES, ModelParams, SummerSegment
from .generator import detect_implicit
from .inference import PosteriorSample

logger = logging.getLogger("heatwave.persistence")

CURRENT_SCHEMA_VERSION = config.OUTPUT_SCHEMA_VERSION

SEGMENT_COLUMNS = ["year", "day_of_season", "value", "missing"]
CURVE_COLUMNS = ["day_of_season", "curve"]
SAMPLE_COLUMNS = [*PARAM_NAMES, "log_posterior"]
STATE_PROBABILITY_COLUMNS = ["year", "day_of_season", "value", "inclusion_count", "p_heatwave"]
RUN_LENGTH_COLUMNS = ["draw", "year", "start_day", "length"]
SUMMER_COLUMNS = ["draw_index", "summer_index", "day", "value", "state"]


class ArtifactFormatError(ValueError):
    """Raised when an input artifact is missing columns or holds malformed values."""


def ensure_output_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    logger.info("Output directory ensured at %s", path)
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Atomic CSV write: 17 significant digits, NA for undefined values."""
    path = Path(path)
    temp_file = path.with_name(path.name + ".tmp")
    frame.to_csv(temp_file, index=False, float_format="%.17g", na_rep="NA", lineterminator="\n")
    temp_file.replace(path)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def write_json(data: dict, path: Path) -> Path:
    path = Path(path)
    temp_file = path.with_name(path.name + ".tmp")
    with open(temp_file, "w", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    temp_file.replace(path)
    return path


def save_resolved_config(resolved: dict, out_dir: Path) -> Path:
    """Echo the resolved run configuration with version stamps into ``out_dir``."""
    payload = {"schema_version": CURRENT_SCHEMA_VERSION, "version": __version__, "config": resolved}
    return write_json(payload, Path(out_dir) / "resolved_config.json")


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ArtifactFormatError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, na_values=["NA"], keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ArtifactFormatError(f"{path}: {exc}") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ArtifactFormatError(f"{path}: missing columns {missing}")
    return frame


# ---------------------------------------------------------------------------
# Segments and seasonal curve
# ---------------------------------------------------------------------------

def segments_to_frame(segments: Sequence[SummerSegment]) -> pd.DataFrame:
    return pd.DataFrame({
        "year": np.concatenate([np.full(len(s), s.year) for s in segments]),
        "day_of_season": np.concatenate([s.day_of_season for s in segments]),
        "value": np.concatenate([s.values for s in segments]),
        "missing": np.concatenate([s.missing_mask.astype(int) for s in segments]),
    }, columns=SEGMENT_COLUMNS)


def write_segments(segments: Sequence[SummerSegment], path: Path) -> Path:
    return write_csv(segments_to_frame(segments), path)


def read_segments(path: Path) -> list[SummerSegment]:
    frame = _read_csv(path, SEGMENT_COLUMNS)
    try:
        years = frame["year"].astype(int)
        days = frame["day_of_season"].astype(int)
        missing = frame["missing"].astype(int).astype(bool)
        values = pd.to_numeric(frame["value"], errors="raise").astype(float)
    except (ValueError, TypeError) as exc:
        raise ArtifactFormatError(f"{path}: {exc}") from exc
    segments = []
    for year in pd.unique(years):
        rows = (years == year).to_numpy()
        order = np.argsort(days[rows].to_numpy(), kind="stable")
        try:
            segments.append(SummerSegment(
                values[rows].to_numpy()[order],
                missing[rows].to_numpy()[order],
                year=int(year),
                day_of_season=days[rows].to_numpy()[order],
            ))
        except ValueError as exc:
            raise ArtifactFormatError(f"{path}: {exc}") from exc
    logger.info("Read %d segments from %s", len(segments), path)
    return segments


def write_curve(curve: np.ndarray, path: Path) -> Path:
    frame = pd.DataFrame({"day_of_season": np.arange(1, len(curve) + 1), "curve": curve})
    return write_csv(frame, path)


def read_curve(path: Path) -> np.ndarray:
    frame = _read_csv(path, CURVE_COLUMNS).sort_values("day_of_season")
    return frame["curve"].to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------

def write_samples(samples: Sequence[PosteriorSample], path: Path) -> Path:
    rows = [{**s.params.as_dict(), "log_posterior": s.log_posterior} for s in samples]
    return write_csv(pd.DataFrame(rows, columns=SAMPLE_COLUMNS), path)


def read_samples(path: Path) -> list[PosteriorSample]:
    """Parameter draws only; states come from the run-length file."""
    frame = _read_csv(path, SAMPLE_COLUMNS)
    if frame.empty:
        raise ArtifactFormatError(f"{path}: no samples")
    samples = []
    for row in frame.itertuples(index=False):
        record = row._asdict()
        try:
            params = ModelParams.from_mapping(record).validate()
        except ValueError as exc:
            raise ArtifactFormatError(f"{path}: {exc}") from exc
        samples.append(PosteriorSample(params=params, states=[], imputed=[],
                                       log_posterior=float(record["log_posterior"])))
    return samples


def write_state_probabilities(segments: Sequence[SummerSegment], inclusion_counts: Sequence[np.ndarray],
                              n_samples: int, path: Path) -> Path:
    frame = segments_to_frame(segments).drop(columns="missing")
    counts = np.concatenate(inclusion_counts)
    frame["inclusion_count"] = counts
    frame["p_heatwave"] = counts / max(n_samples, 1)
    return write_csv(frame[STATE_PROBABILITY_COLUMNS], path)


def write_run_lengths(samples: Sequence[PosteriorSample], segments: Sequence[SummerSegment],
                      path: Path) -> Path:
    """One row per implicit event per draw; start_day is the 1-based day of season."""
    rows = []
    for draw, sample in enumerate(samples):
        for seg, states in zip(segments, sample.states):
            for event in detect_implicit(states):
                rows.append((draw, seg.year, int(seg.day_of_season[event.start]), event.length))
    return write_csv(pd.DataFrame(rows, columns=RUN_LENGTH_COLUMNS), path)


def read_run_lengths(path: Path, segments: Sequence[SummerSegment], n_draws: int) -> list[list[np.ndarray]]:
    """Rebuild per-draw state sequences aligned to ``segments`` from run-length records."""
    frame = _read_csv(path, RUN_LENGTH_COLUMNS)
    index_of_year = {seg.year: k for k, seg in enumerate(segments)}
    draws = [[np.zeros(len(seg), dtype=np.int8) for seg in segments] for _ in range(n_draws)]
    for row in frame.itertuples(index=False):
        if not 0 <= row.draw < n_draws or row.year not in index_of_year:
            raise ArtifactFormatError(f"{path}: record {tuple(row)} does not match the samples and segments")
        seg = segments[index_of_year[row.year]]
        start = int(np.searchsorted(seg.day_of_season, row.start_day))
        draws[row.draw][index_of_year[row.year]][start:start + row.length] = 1
    return draws


def write_acceptance(acceptance: dict[str, float], scales: dict[str, float], path: Path) -> Path:
    frame = pd.DataFrame({
        "parameter": list(acceptance),
        "acceptance_rate": list(acceptance.values()),
        "proposal_scale": [scales.get(name, float("nan")) for name in acceptance],
    })
    return write_csv(frame, path)


def write_trace(trace: np.ndarray, path: Path) -> Path:
    frame = pd.DataFrame({"iteration": np.arange(len(trace)), "log_posterior": trace})
    return write_csv(frame, path)


def summers_to_frame(summers) -> pd.DataFrame:
    frames = [
        pd.DataFrame({
            "draw_index": s.source_draw,
            "summer_index": s.summer_index,
            "day": np.arange(1, s.values.size + 1),
            "value": s.values,
            "state": s.states.astype(int),
        })
        for s in summers
    ]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SUMMER_COLUMNS)
