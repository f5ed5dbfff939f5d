"""End-to-end tests for the heatwave command line on small inputs."""

import json
import logging

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from heatwave import config
from heatwave.cli import EXIT_INPUT_ERROR, EXIT_NUMERIC_ERROR, EXIT_OK, RunConfig, main
from heatwave.core_model import SummerSegment
from heatwave.persistence import write_segments


@pytest.fixture(autouse=True)
def isolated_logging(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "LOG_DIR", tmp_path / "logs")
    yield
    logger = logging.getLogger("heatwave")
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


@pytest.fixture
def fitted_dir(tmp_path, segments_csv):
    out = tmp_path / "fit"
    code = main(["fit", "--segments", str(segments_csv), "--out", str(out),
                 "--iterations", "20", "--burnin", "10", "--thin", "2", "--seed", "5"])
    assert code == EXIT_OK
    return out


class TestRunConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"sed": 1})

    def test_nested_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"mcmc": {"iterations": 10}})

    def test_burnin_must_be_shorter(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"mcmc": {"n_iterations": 10, "n_burnin": 10}})

    def test_config_file_then_flags(self, tmp_path, segments_csv):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({"seed": 1, "mcmc": {"n_iterations": 20, "n_burnin": 10, "thinning": 5}}))
        out = tmp_path / "out"
        code = main(["fit", "--config", str(cfg_path), "--segments", str(segments_csv), "--out", str(out),
                     "--seed", "9"])
        assert code == EXIT_OK
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["config"]["seed"] == 9
        assert resolved["config"]["mcmc"]["thinning"] == 5
        assert len(pd.read_csv(out / "samples.csv")) == 2

    def test_bad_config_file(self, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text("{not json")
        assert main(["fit", "--config", str(cfg_path), "--out", str(tmp_path)]) == EXIT_INPUT_ERROR


class TestPreprocess:
    def test_fixture_station(self, ecad_file, tmp_path):
        out = tmp_path / "pre"
        code = main(["preprocess", str(ecad_file), "--years", "2003-2003", "--smoothing", "1.0",
                     "--out", str(out)])
        assert code == EXIT_OK
        segments = pd.read_csv(out / "segments.csv", na_values=["NA"], keep_default_na=False)
        assert len(segments) == 92
        assert segments["missing"].sum() == 3
        assert len(pd.read_csv(out / "seasonal_curve.csv")) == 92
        summary = json.loads((out / "quality_summary.json").read_text())
        assert summary["n_suspect"] == 1

    def test_malformed_file(self, ecad_file, tmp_path):
        lines = ecad_file.read_text().splitlines()
        lines[91] = "111446,2003081X,  394,    0"
        bad = tmp_path / "bad.txt"
        bad.write_text("\n".join(lines) + "\n")
        assert main(["preprocess", str(bad), "--out", str(tmp_path / "pre")]) == EXIT_INPUT_ERROR

    def test_missing_input(self, tmp_path):
        assert main(["preprocess", "--out", str(tmp_path / "pre")]) == EXIT_INPUT_ERROR

    def test_failed_parse_leaves_no_run_directory(self, ecad_file, tmp_path):
        lines = ecad_file.read_text().splitlines()
        lines[91] = "111446,2003081X,  394,    0"
        bad = tmp_path / "bad.txt"
        bad.write_text("\n".join(lines) + "\n")
        out = tmp_path / "pre"
        assert main(["preprocess", str(bad), "--out", str(out)]) == EXIT_INPUT_ERROR
        assert not out.exists()


class TestFit:
    def test_outputs(self, fitted_dir):
        samples = pd.read_csv(fitted_dir / "samples.csv")
        assert len(samples) == 5
        probs = pd.read_csv(fitted_dir / "state_probabilities.csv", na_values=["NA"], keep_default_na=False)
        assert probs["p_heatwave"].between(0.0, 1.0).all()
        assert len(probs) == 22 * 92
        for name in ("run_lengths.csv", "acceptance.csv", "trace.csv", "posterior_summary.csv"):
            assert (fitted_dir / name).exists()
        assert len(pd.read_csv(fitted_dir / "trace.csv")) == 20

    def test_constant_series_is_numeric_error(self, tmp_path):
        path = write_segments([SummerSegment(np.full(92, 25.0), year=2000 + k) for k in range(3)],
                              tmp_path / "flat.csv")
        code = main(["fit", "--segments", str(path), "--out", str(tmp_path / "fit"),
                     "--iterations", "20", "--burnin", "10"])
        assert code == EXIT_NUMERIC_ERROR


class TestSimulate:
    def test_definitions_and_retrospective(self, fitted_dir, segments_csv, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--samples", str(fitted_dir / "samples.csv"), "--segments", str(segments_csv),
                     "--summers-per-draw", "4", "--write-summers", "--out", str(out)])
        assert code == EXIT_OK
        by_draw = pd.read_csv(out / "definitions_by_draw.csv", na_values=["NA"], keep_default_na=False)
        assert len(by_draw) == 5 * 3
        assert set(pd.read_csv(out / "definitions_summary.csv")["rule"]) == {"huth", "implicit", "worst_annual"}
        assert len(pd.read_csv(out / "simulated_summers.csv")) == 5 * 4 * 92
        length_pmf = pd.read_csv(out / "retrospective_length_pmf.csv")
        assert length_pmf["probability"].sum() == pytest.approx(1.0)

    def test_missing_samples(self, segments_csv, tmp_path):
        code = main(["simulate", "--samples", str(tmp_path / "none.csv"), "--segments", str(segments_csv),
                     "--out", str(tmp_path / "sim")])
        assert code == EXIT_INPUT_ERROR


class TestDiagnose:
    def test_without_samples(self, segments_csv, tmp_path):
        out = tmp_path / "diag"
        assert main(["diagnose", "--segments", str(segments_csv), "--out", str(out)]) == EXIT_OK
        chi = pd.read_csv(out / "chi_curve.csv", na_values=["NA"], keep_default_na=False)
        assert set(chi["lag"]) == {1, 5}
        assert len(pd.read_csv(out / "pacf.csv")) == config.PACF_MAX_LAG
        assert len(pd.read_csv(out / "ar_order.csv")) == 22
        assert not (out / "ppc_report.csv").exists()

    def test_with_samples(self, fitted_dir, segments_csv, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({"diagnostics": {"replicate_size": 6, "replicates_per_draw": 2}}))
        out = tmp_path / "diag"
        code = main(["diagnose", "--config", str(cfg_path), "--segments", str(segments_csv),
                     "--samples", str(fitted_dir / "samples.csv"), "--out", str(out)])
        assert code == EXIT_OK
        report = pd.read_csv(out / "ppc_report.csv", na_values=["NA"], keep_default_na=False)
        assert len(report) == 9
        assert (report["n_replicates"] + report["n_excluded"] == 10).all()
        assert "observed" in (out / "ppc_table.txt").read_text()


# ===================================================================
# Reproducibility
# ===================================================================


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def _command_args(command, request, tmp_path):
    segments_csv = request.getfixturevalue("segments_csv")
    if command == "preprocess":
        return ["preprocess", str(request.getfixturevalue("ecad_file")), "--years", "2003-2003"]
    if command == "fit":
        return ["fit", "--segments", str(segments_csv), "--iterations", "20", "--burnin", "10",
                "--thin", "2", "--seed", "5"]
    samples = str(request.getfixturevalue("fitted_dir") / "samples.csv")
    if command == "simulate":
        return ["simulate", "--samples", samples, "--segments", str(segments_csv),
                "--summers-per-draw", "4", "--write-summers", "--seed", "3"]
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"diagnostics": {"replicate_size": 6, "replicates_per_draw": 2}}))
    return ["diagnose", "--config", str(cfg_path), "--segments", str(segments_csv),
            "--samples", samples, "--seed", "3"]


class TestReproducibility:
    @pytest.mark.parametrize("command", ["preprocess", "fit", "simulate", "diagnose"])
    def test_rerun_is_byte_identical(self, command, request, tmp_path):
        out = tmp_path / f"{command}_out"
        args = _command_args(command, request, tmp_path) + ["--out", str(out)]

        assert main(args) == EXIT_OK
        first = _snapshot(out)
        assert "resolved_config.json" in first and len(first) > 1

        assert main(args) == EXIT_OK
        second = _snapshot(out)
        assert second.keys() == first.keys()
        for name in first:
            assert second[name] == first[name], name
