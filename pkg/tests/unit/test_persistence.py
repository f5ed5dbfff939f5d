"""Unit tests for heatwave.persistence: artifact writers and readers."""

import json

import numpy as np
import pandas as pd
import pytest

from heatwave import __version__
from heatwave.core_model import SummerSegment
from heatwave.inference import PosteriorSample
from heatwave.persistence import (
    ArtifactFormatError,
    read_curve,
    read_run_lengths,
    read_samples,
    read_segments,
    save_resolved_config,
    summers_to_frame,
    write_csv,
    write_curve,
    write_run_lengths,
    write_samples,
    write_segments,
    write_state_probabilities,
)
from tests.conftest import _make_params


class TestWriteCsv:
    def test_na_and_full_precision(self, tmp_path):
        path = write_csv(pd.DataFrame({"x": [1.0 / 3.0, np.nan]}), tmp_path / "out.csv")
        lines = path.read_text().splitlines()
        assert lines == ["x", "0.33333333333333331", "NA"]

    def test_no_temporary_file_left(self, tmp_path):
        write_csv(pd.DataFrame({"x": [1]}), tmp_path / "out.csv")
        assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


class TestResolvedConfig:
    def test_version_stamps(self, tmp_path):
        path = save_resolved_config({"seed": 7}, tmp_path)
        payload = json.loads(path.read_text())
        assert payload["version"] == __version__
        assert payload["schema_version"] == "1.0"
        assert payload["config"] == {"seed": 7}


class TestSegments:
    def test_round_trip_keeps_missing_days(self, tmp_path, small_segments):
        path = write_segments(small_segments, tmp_path / "segments.csv")
        restored = read_segments(path)
        assert [s.year for s in restored] == [s.year for s in small_segments]
        for before, after in zip(small_segments, restored):
            np.testing.assert_array_equal(after.missing_mask, before.missing_mask)
            np.testing.assert_array_equal(after.values, before.values)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "segments.csv"
        path.write_text("year,day_of_season,value\n2000,1,20.0\n")
        with pytest.raises(ArtifactFormatError, match="missing"):
            read_segments(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "segments.csv"
        path.write_text("year,day_of_season,value,missing\n2000,1,warm,0\n2000,2,20.0,0\n")
        with pytest.raises(ArtifactFormatError):
            read_segments(path)

    def test_absent_file(self, tmp_path):
        with pytest.raises(ArtifactFormatError, match="not found"):
            read_segments(tmp_path / "absent.csv")


class TestCurve:
    def test_round_trip(self, tmp_path):
        curve = np.linspace(20.0, 25.0, 92)
        np.testing.assert_array_equal(read_curve(write_curve(curve, tmp_path / "curve.csv")), curve)


class TestSamples:
    def test_parameters_round_trip(self, tmp_path):
        samples = [PosteriorSample(_make_params(u=34.0 + k), [], [], -100.0 - k) for k in range(3)]
        restored = read_samples(write_samples(samples, tmp_path / "samples.csv"))
        assert [s.params for s in restored] == [s.params for s in samples]
        assert [s.log_posterior for s in restored] == [-100.0, -101.0, -102.0]

    def test_invalid_parameters_rejected(self, tmp_path):
        samples = [PosteriorSample(_make_params(), [], [], 0.0)]
        path = write_samples(samples, tmp_path / "samples.csv")
        frame = pd.read_csv(path)
        frame["sigma"] = -1.0
        frame.to_csv(path, index=False)
        with pytest.raises(ArtifactFormatError):
            read_samples(path)

    def test_empty_file(self, tmp_path):
        path = write_samples([], tmp_path / "samples.csv")
        with pytest.raises(ArtifactFormatError, match="no samples"):
            read_samples(path)


class TestStateArtifacts:
    def test_run_lengths_rebuild_state_paths(self, tmp_path):
        segments = [SummerSegment(np.arange(10.0), year=2000), SummerSegment(np.arange(8.0), year=2001)]
        paths = [
            [np.array([0, 1, 1, 0, 0, 0, 1, 1, 1, 0]), np.zeros(8, dtype=int)],
            [np.zeros(10, dtype=int), np.array([1, 1, 0, 0, 0, 0, 0, 1])],
        ]
        samples = [PosteriorSample(_make_params(), p, [], 0.0) for p in paths]
        path = write_run_lengths(samples, segments, tmp_path / "run_lengths.csv")

        frame = pd.read_csv(path)
        assert frame["start_day"].tolist() == [2, 7, 1, 8]
        rebuilt = read_run_lengths(path, segments, n_draws=2)
        for draw_in, draw_out in zip(paths, rebuilt):
            for a, b in zip(draw_in, draw_out):
                np.testing.assert_array_equal(a, b)

    def test_run_lengths_reject_unknown_year(self, tmp_path):
        segments = [SummerSegment(np.arange(10.0), year=2000)]
        path = tmp_path / "run_lengths.csv"
        path.write_text("draw,year,start_day,length\n0,1999,1,2\n")
        with pytest.raises(ArtifactFormatError):
            read_run_lengths(path, segments, n_draws=1)

    def test_state_probabilities(self, tmp_path, small_segments):
        counts = [np.full(len(s), 5) for s in small_segments]
        path = write_state_probabilities(small_segments, counts, 10, tmp_path / "p.csv")
        frame = pd.read_csv(path, na_values=["NA"], keep_default_na=False)
        assert np.allclose(frame["p_heatwave"], 0.5)
        assert frame["value"].isna().sum() == 2


class TestSummersFrame:
    def test_layout(self):
        from heatwave.generator import SimulatedSummer

        summers = [SimulatedSummer(np.array([20.0, 21.0]), np.array([0, 1]), source_draw=3, summer_index=k)
                   for k in range(2)]
        frame = summers_to_frame(summers)
        assert list(frame.columns) == ["draw_index", "summer_index", "day", "value", "state"]
        assert frame["day"].tolist() == [1, 2, 1, 2]
        assert frame["state"].tolist() == [0, 1, 0, 1]
