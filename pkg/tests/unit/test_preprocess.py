"""Unit tests for heatwave.preprocess: station parsing, JJA extraction and the seasonal spline."""

import logging

import numpy as np
import pandas as pd
import pytest

from heatwave import config
from heatwave.core_model import SummerSegment
from heatwave.preprocess import (
    MISSING,
    SUSPECT,
    VALID,
    RawStationSeries,
    SplineConvergenceError,
    StationFileError,
    _design_matrix,
    deseasonalize,
    extract_jja,
    fit_seasonal_quantile_spline,
    load_station_series,
    parse_ecad,
    parse_station_csv,
    pooled_by_day,
    quality_summary,
    select_smoothing_by_cv,
)


def _replace_line(source, target, line_number, text):
    lines = source.read_text().splitlines()
    lines[line_number - 1] = text
    target.write_text("\n".join(lines) + "\n")
    return target


def _daily_series(start, end, values=None):
    dates = pd.date_range(start, end, freq="D")
    tx = np.full(len(dates), 25.0) if values is None else values
    return RawStationSeries(dates, tx, np.full(len(dates), VALID, dtype=object))


# ===================================================================
# ECA&D parsing
# ===================================================================


class TestParseEcad:
    def test_values_in_degrees(self, ecad_file):
        series = parse_ecad(ecad_file)
        by_date = series.to_series()
        assert by_date[pd.Timestamp("2003-08-10")] == pytest.approx(39.4)
        assert by_date[pd.Timestamp("2003-06-01")] == pytest.approx(24.6)
        assert len(series.dates) == 96

    def test_missing_codes(self, ecad_file):
        series = parse_ecad(ecad_file)
        by_date = series.to_series()
        assert np.isnan(by_date[pd.Timestamp("2003-07-04")])
        assert np.isnan(by_date[pd.Timestamp("2003-07-20")])
        quality = pd.Series(series.quality, index=series.dates)
        assert quality[pd.Timestamp("2003-07-04")] == MISSING
        assert quality[pd.Timestamp("2003-07-25")] == SUSPECT

    def test_suspect_dropped_by_default(self, ecad_file):
        by_date = parse_ecad(ecad_file).to_series()
        assert np.isnan(by_date[pd.Timestamp("2003-07-25")])

    def test_suspect_kept_on_request(self, ecad_file):
        by_date = parse_ecad(ecad_file, drop_suspect=False).to_series()
        assert by_date[pd.Timestamp("2003-07-25")] == pytest.approx(25.0)

    def test_quality_summary(self, ecad_file):
        summary = quality_summary(parse_ecad(ecad_file))
        assert summary["n_days"] == 96
        assert summary["n_suspect"] == 1
        assert summary["n_missing"] == 3
        assert summary["suspect_dates"] == ["2003-07-25"]

    def test_malformed_date_names_line(self, ecad_file, tmp_path):
        bad = _replace_line(ecad_file, tmp_path / "bad.txt", 92, "111446,2003081X,  394,    0")
        with pytest.raises(StationFileError, match="line 92"):
            parse_ecad(bad)

    def test_non_numeric_value_names_line(self, ecad_file, tmp_path):
        bad = _replace_line(ecad_file, tmp_path / "bad.txt", 30, "111446,20030609,  2x4,    0")
        with pytest.raises(StationFileError, match="line 30"):
            parse_ecad(bad)

    def test_unknown_quality_code(self, ecad_file, tmp_path):
        bad = _replace_line(ecad_file, tmp_path / "bad.txt", 40, "111446,20030619,  250,    5")
        with pytest.raises(StationFileError, match="line 40"):
            parse_ecad(bad)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "noheader.txt"
        path.write_text("just some text\n")
        with pytest.raises(StationFileError, match="header"):
            parse_ecad(path)


class TestPlainCsv:
    def test_parse(self, tmp_path):
        path = tmp_path / "station.csv"
        path.write_text("date,tx\n2003-06-01,24.6\n2003-06-02,\n2003-06-03,NA\n")
        series = parse_station_csv(path)
        assert series.tx[0] == pytest.approx(24.6)
        assert np.isnan(series.tx[1:]).all()
        assert list(series.quality) == [VALID, MISSING, MISSING]

    def test_bad_value_line(self, tmp_path):
        path = tmp_path / "station.csv"
        path.write_text("date,tx\n2003-06-01,24.6\n2003-06-02,hot\n")
        with pytest.raises(StationFileError, match="line 3"):
            parse_station_csv(path)

    def test_dispatch(self, tmp_path, ecad_file):
        path = tmp_path / "station.csv"
        path.write_text("date,tx\n2003-06-01,24.6\n2003-06-02,25.0\n")
        assert load_station_series(path).source == str(path)
        assert len(load_station_series(ecad_file).dates) == 96

    def test_missing_file(self, tmp_path):
        with pytest.raises(StationFileError, match="not found"):
            load_station_series(tmp_path / "absent.csv")

    def test_unordered_dates(self):
        with pytest.raises(StationFileError):
            RawStationSeries(pd.to_datetime(["2003-06-02", "2003-06-01"]), [1.0, 2.0], [VALID, VALID])


# ===================================================================
# JJA extraction
# ===================================================================


class TestExtractJJA:
    def test_from_fixture(self, ecad_file):
        segments = extract_jja(parse_ecad(ecad_file), 2003, 2003)
        assert len(segments) == 1
        assert len(segments[0]) == config.SUMMER_LENGTH
        assert segments[0].n_missing == 3
        assert segments[0].values[0] == pytest.approx(24.6)

    @pytest.mark.parametrize("year", [1999, 2000])
    def test_leap_and_common_years(self, year):
        series = _daily_series(f"{year}-01-01", f"{year}-12-31")
        segments = extract_jja(series, year, year)
        assert len(segments[0]) == 92
        assert segments[0].n_missing == 0

    def test_years_outside_record_are_missing(self, caplog):
        series = _daily_series("2000-06-01", "2000-08-31")
        with caplog.at_level(logging.WARNING, logger="heatwave.preprocess"):
            segments = extract_jja(series, 2000, 2001)
        assert segments[1].n_missing == 92
        assert any("2001" in r.message for r in caplog.records)

    def test_empty_range(self):
        with pytest.raises(ValueError):
            extract_jja(_daily_series("2000-06-01", "2000-08-31"), 2001, 2000)


# ===================================================================
# Seasonal median spline
# ===================================================================


class TestSeasonalSpline:
    def test_constant_input(self):
        days = np.tile(np.arange(1, 93), 5)
        curve = fit_seasonal_quantile_spline(days, np.full(days.size, 27.0), smoothing=1.0)
        assert curve.shape == (92,)
        np.testing.assert_allclose(curve, 27.0, atol=1e-6)

    def test_sinusoid_small_penalty(self):
        days = np.tile(np.arange(1, 93), 3).astype(float)
        truth = lambda d: 25.0 + 3.0 * np.sin(np.pi * (d - 1) / 91.0)
        curve = fit_seasonal_quantile_spline(days, truth(days), smoothing=1e-2)
        np.testing.assert_allclose(curve, truth(np.arange(1, 93)), atol=0.05)

    def test_robust_to_one_outlier(self, rng):
        days = np.tile(np.arange(1, 93), 10).astype(float)
        base = 25.0 + 3.0 * np.sin(np.pi * (days - 1) / 91.0) + rng.normal(scale=1.0, size=days.size)
        spiked = base.copy()
        spiked[45] += 60.0

        clean = fit_seasonal_quantile_spline(days, base, smoothing=10.0)
        robust = fit_seasonal_quantile_spline(days, spiked, smoothing=10.0)

        basis = _design_matrix(days, 92)
        grid_basis = _design_matrix(np.arange(1, 93), 92)
        d2 = np.diff(np.eye(basis.shape[1]), n=2, axis=0)
        penalty = 10.0 * d2.T @ d2

        def l2_curve(y):
            return grid_basis @ np.linalg.solve(basis.T @ basis + penalty, basis.T @ y)

        l2_shift = np.max(np.abs(l2_curve(spiked) - l2_curve(base)))
        l1_shift = np.max(np.abs(robust - clean))
        assert l1_shift < 0.1 * l2_shift

    def test_missing_values_ignored(self):
        days = np.tile(np.arange(1, 93), 2)
        values = np.full(days.size, 26.0)
        values[::7] = np.nan
        curve = fit_seasonal_quantile_spline(days, values, smoothing=1.0)
        np.testing.assert_allclose(curve, 26.0, atol=1e-6)

    def test_non_convergence_raises(self, monkeypatch, rng):
        monkeypatch.setattr(config, "SPLINE_MAX_ITER", 1)
        days = np.tile(np.arange(1, 93), 2).astype(float)
        with pytest.raises(SplineConvergenceError):
            fit_seasonal_quantile_spline(days, rng.normal(25.0, 3.0, size=days.size), smoothing=1.0)

    def test_cv_picks_grid_value(self, rng):
        days = np.tile(np.arange(1, 93), 4).astype(float)
        values = 25.0 + 2.0 * np.cos(np.pi * days / 92.0) + rng.normal(size=days.size)
        grid = (0.1, 10.0, 1000.0)
        assert select_smoothing_by_cv(days, values, grid=grid) in grid

    def test_no_observations(self):
        with pytest.raises(ValueError):
            fit_seasonal_quantile_spline(np.arange(1, 93), np.full(92, np.nan), smoothing=1.0)


class TestDeseasonalize:
    def test_constant_series_unchanged(self):
        segments = [SummerSegment(np.full(92, 24.0), year=y) for y in (2000, 2001)]
        curve = fit_seasonal_quantile_spline(*pooled_by_day(segments), smoothing=1.0)
        out = deseasonalize(segments, curve)
        for before, after in zip(segments, out):
            np.testing.assert_allclose(after.values, before.values, atol=1e-6)

    def test_missing_stays_missing(self, small_segments):
        n_days = len(small_segments[0])
        curve = np.linspace(0.0, 1.0, n_days)
        out = deseasonalize(small_segments, curve)
        assert out[1].n_missing == small_segments[1].n_missing
        assert np.isnan(out[1].values[5])
        assert out[0].year == small_segments[0].year

    def test_seasonal_trend_removed(self, rng):
        season = 22.0 + 6.0 * np.sin(np.pi * np.arange(92) / 91.0)
        segments = [SummerSegment(season + rng.normal(scale=2.0, size=92), year=1990 + k) for k in range(22)]
        curve = fit_seasonal_quantile_spline(*pooled_by_day(segments), smoothing=10.0)
        adjusted = deseasonalize(segments, curve)
        residual_curve = fit_seasonal_quantile_spline(*pooled_by_day(adjusted), smoothing=10.0)
        assert np.max(np.abs(residual_curve - residual_curve.mean())) < 0.2
