"""Command-line interface: preprocess, fit, simulate and diagnose stages with file-based interchange."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator  # noqa: E402

from . import __version__, config  # noqa: E402
from .core_model import InvalidParameterError  # noqa: E402
from .diagnostics import (  # noqa: E402
    DiagnosticsError,
    ar_order_by_year,
    chi_curve,
    extremal_index,
    lag_pairs,
    pacf,
    posterior_predictive_check,
)
from .generator import (  # noqa: E402
    SimulationError,
    huth_thresholds,
    posterior_weather_generator,
    retrospective_summaries,
    summarize_definitions,
)
from .inference import (  # noqa: E402
    MCMCConfig,
    PriorSpec,
    SamplerInitializationError,
    StateSamplingError,
    posterior_summary,
    run_chain,
)
from .logging_config import setup_logging  # noqa: E402
from .persistence import (  # noqa: E402
    ArtifactFormatError,
    ensure_output_dir,
    read_run_lengths,
    read_samples,
    read_segments,
    save_resolved_config,
    summers_to_frame,
    write_acceptance,
    write_csv,
    write_curve,
    write_json,
    write_run_lengths,
    write_samples,
    write_segments,
    write_state_probabilities,
    write_trace,
)
from .preprocess import (  # noqa: E402
    SplineConvergenceError,
    StationFileError,
    deseasonalize,
    extract_jja,
    fit_seasonal_quantile_spline,
    load_station_series,
    pooled_by_day,
    quality_summary,
    select_smoothing_by_cv,
)

logger = logging.getLogger("heatwave.cli")

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3

NUMERIC_ERRORS = (
    SamplerInitializationError,
    StateSamplingError,
    SimulationError,
    SplineConvergenceError,
    DiagnosticsError,
)
INPUT_ERRORS = (
    StationFileError,
    ArtifactFormatError,
    ValidationError,
    InvalidParameterError,
    FileNotFoundError,
    ValueError,
)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PriorSettings(_Section):
    u_center: Optional[float] = None
    u_sd: float = Field(config.U_PRIOR_SD, gt=0)
    log_sigma: tuple[float, float] = config.LOG_SIGMA_PRIOR
    mu: tuple[float, float] = config.MU_PRIOR
    log_sigmaN2: tuple[float, float] = config.LOG_SIGMA_N2_PRIOR
    a0_beta: tuple[float, float] = config.TRANSITION_BETA_PRIOR
    a1_beta: tuple[float, float] = config.TRANSITION_BETA_PRIOR


class MCMCSettings(_Section):
    n_iterations: PositiveInt = config.N_ITERATIONS
    n_burnin: int = Field(config.N_BURNIN, ge=0)
    thinning: PositiveInt = config.THINNING
    adaptation_window: PositiveInt = config.ADAPTATION_WINDOW
    target_acceptance: float = Field(config.TARGET_ACCEPTANCE, gt=0, lt=1)

    @model_validator(mode="after")
    def _burnin_shorter_than_run(self):
        if self.n_burnin >= self.n_iterations:
            raise ValueError(f"n_burnin ({self.n_burnin}) must be < n_iterations ({self.n_iterations})")
        return self


class GeneratorSettings(_Section):
    summers_per_draw: PositiveInt = config.SUMMERS_PER_DRAW
    write_summers: bool = False
    recompute_huth: bool = False
    huth_quantiles: tuple[float, float] = config.HUTH_QUANTILES


class DiagnosticsSettings(_Section):
    thresholds: tuple[float, ...] = config.PPC_THRESHOLDS
    lags: tuple[int, ...] = config.PPC_LAGS
    replicate_size: PositiveInt = config.PPC_REPLICATE_SUMMERS
    replicates_per_draw: PositiveInt = 1
    extremal_quantile: float = Field(config.PPC_EXTREMAL_QUANTILE, gt=0, lt=1)
    chi_grid: tuple[float, ...] = config.CHI_QUANTILE_GRID
    pacf_max_lag: PositiveInt = config.PACF_MAX_LAG


class RunConfig(_Section):
    inputs: list[Path] = Field(default_factory=list)
    segments: Optional[Path] = None
    samples: Optional[Path] = None
    out: Path = Path("heatwave-out")
    year_from: int = config.DEFAULT_YEAR_FROM
    year_to: int = config.DEFAULT_YEAR_TO
    drop_suspect: bool = True
    smoothing: Optional[float] = Field(None, gt=0)
    seed: int = config.DEFAULT_SEED
    threads: PositiveInt = max(config.THREADS, 1)
    priors: PriorSettings = Field(default_factory=PriorSettings)
    mcmc: MCMCSettings = Field(default_factory=MCMCSettings)
    generator: GeneratorSettings = Field(default_factory=GeneratorSettings)
    diagnostics: DiagnosticsSettings = Field(default_factory=DiagnosticsSettings)

    @model_validator(mode="after")
    def _ordered_years(self):
        if self.year_to < self.year_from:
            raise ValueError(f"year range {self.year_from}-{self.year_to} is empty")
        return self

    def segments_path(self) -> Path:
        return self.segments or self.out / "segments.csv"

    def samples_path(self) -> Path:
        return self.samples or self.out / "samples.csv"


def _parse_years(text: str) -> tuple[int, int]:
    try:
        first, _, last = text.partition("-")
        return int(first), int(last or first)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected YEAR or YEAR-YEAR, got {text!r}") from exc


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < command-line flags."""
    data: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ArtifactFormatError(f"{path}: config file not found") from exc
        except json.JSONDecodeError as exc:
            raise ArtifactFormatError(f"{path}: invalid JSON: {exc}") from exc

    def put(section: Optional[str], key: str, value):
        if value is None:
            return
        target = data.setdefault(section, {}) if section else data
        target[key] = value

    put(None, "seed", args.seed)
    put(None, "out", args.out)
    put(None, "threads", args.threads)
    put(None, "segments", getattr(args, "segments", None))
    put(None, "samples", getattr(args, "samples", None))
    if getattr(args, "input", None):
        data["inputs"] = [args.input]
    if getattr(args, "years", None):
        data["year_from"], data["year_to"] = args.years
    put(None, "smoothing", getattr(args, "smoothing", None))
    if getattr(args, "keep_suspect", False):
        data["drop_suspect"] = False
    put("mcmc", "n_iterations", getattr(args, "iterations", None))
    put("mcmc", "n_burnin", getattr(args, "burnin", None))
    put("mcmc", "thinning", getattr(args, "thin", None))
    put("priors", "u_sd", getattr(args, "u_prior_sd", None))
    put("generator", "summers_per_draw", getattr(args, "summers_per_draw", None))
    if getattr(args, "write_summers", False):
        put("generator", "write_summers", True)
    if getattr(args, "recompute_huth", False):
        put("generator", "recompute_huth", True)
    return RunConfig.model_validate(data)


def _start_run(cfg: RunConfig, command: str) -> Path:
    out = ensure_output_dir(cfg.out)
    save_resolved_config({"command": command, **cfg.model_dump(mode="json")}, out)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> int:
    if len(cfg.inputs) != 1:
        raise ValueError("preprocess needs exactly one station file")
    series = load_station_series(cfg.inputs[0], drop_suspect=cfg.drop_suspect)
    segments = extract_jja(series, cfg.year_from, cfg.year_to)
    days, values = pooled_by_day(segments)
    smoothing = cfg.smoothing if cfg.smoothing is not None else select_smoothing_by_cv(days, values)
    curve = fit_seasonal_quantile_spline(days, values, smoothing)
    adjusted = deseasonalize(segments, curve)

    out = _start_run(cfg, "preprocess")
    write_segments(adjusted, out / "segments.csv")
    write_curve(curve, out / "seasonal_curve.csv")
    write_json({"smoothing": smoothing, **quality_summary(series)}, out / "quality_summary.json")
    print(f"{len(adjusted)} summers, {sum(s.n_missing for s in adjusted)} missing days -> {out}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    segments = read_segments(cfg.segments_path())
    out = _start_run(cfg, "fit")
    prior_kwargs = cfg.priors.model_dump(exclude_none=True)
    prior = PriorSpec.from_segments(segments, **prior_kwargs)
    mcmc = MCMCConfig(seed=cfg.seed, **cfg.mcmc.model_dump())
    result = run_chain(segments, prior, mcmc, progress=sys.stderr.isatty())

    write_samples(result.samples, out / "samples.csv")
    write_state_probabilities(segments, result.state_inclusion_counts, result.n_samples,
                              out / "state_probabilities.csv")
    write_run_lengths(result.samples, segments, out / "run_lengths.csv")
    write_acceptance(result.acceptance_rates, result.proposal_scales, out / "acceptance.csv")
    write_trace(result.log_posterior_trace, out / "trace.csv")
    write_csv(posterior_summary(result.samples).reset_index(), out / "posterior_summary.csv")

    print(f"{result.n_samples} posterior draws -> {out}")
    print("Acceptance rates (post burn-in):")
    for name, rate in result.acceptance_rates.items():
        print(f"  {name:<10} {rate:.3f}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    samples_path = cfg.samples_path()
    samples = read_samples(samples_path)
    segments = read_segments(cfg.segments_path())
    out = _start_run(cfg, "simulate")
    gen = cfg.generator
    t1, t2 = huth_thresholds(segments, gen.huth_quantiles)
    logger.info("Huth thresholds from observations: T1=%.3f T2=%.3f", t1, t2)

    summers = posterior_weather_generator(samples, gen.summers_per_draw, cfg.seed, threads=cfg.threads)
    kept: list = []
    if gen.write_summers:
        summers = _tee(summers, kept)
    by_draw = summarize_definitions(summers, t1, t2, recompute_huth=gen.recompute_huth,
                                    huth_quantiles=gen.huth_quantiles)
    write_csv(by_draw, out / "definitions_by_draw.csv")
    overall = (by_draw.groupby("rule", sort=True)[["events_per_summer", "mean_duration", "mean_temperature"]]
               .mean().reset_index())
    write_csv(overall, out / "definitions_summary.csv")
    if gen.write_summers:
        write_csv(summers_to_frame(kept), out / "simulated_summers.csv")

    run_lengths = samples_path.parent / "run_lengths.csv"
    if run_lengths.exists():
        draws = read_run_lengths(run_lengths, segments, len(samples))
        retro = retrospective_summaries(draws, segments)
        write_csv(retro.length_pmf.reset_index(), out / "retrospective_length_pmf.csv")
        write_csv(retro.count_pmf.reset_index(), out / "retrospective_count_pmf.csv")
        write_csv(pd.DataFrame({"value": retro.event_temperatures}), out / "retrospective_event_temperatures.csv")
    else:
        logger.warning("No run-length file next to %s; skipping retrospective summaries", samples_path)

    print(f"{len(samples) * gen.summers_per_draw} summers simulated from {len(samples)} draws -> {out}")
    return EXIT_OK


def _tee(stream, sink: list):
    for item in stream:
        sink.append(item)
        yield item


def cmd_diagnose(cfg: RunConfig) -> int:
    segments = read_segments(cfg.segments_path())
    out = _start_run(cfg, "diagnose")
    diag = cfg.diagnostics
    curves = [chi_curve(segments, diag.chi_grid, lag).assign(lag=lag) for lag in diag.lags]
    write_csv(pd.concat(curves, ignore_index=True)[["lag", "quantile", "threshold", "chi"]],
              out / "chi_curve.csv")
    pooled = np.concatenate([s.observed for s in segments])
    thresholds = np.quantile(pooled, diag.chi_grid)
    write_csv(pd.DataFrame({
        "quantile": diag.chi_grid,
        "threshold": thresholds,
        "theta": [extremal_index(segments, u) for u in thresholds],
    }), out / "extremal_index.csv")
    write_csv(pacf(segments, diag.pacf_max_lag).to_frame(), out / "pacf.csv")
    write_csv(lag_pairs(segments), out / "lag_pairs.csv")
    write_csv(ar_order_by_year(segments), out / "ar_order.csv")

    if cfg.samples is not None:
        samples = read_samples(cfg.samples)
        summers = posterior_weather_generator(
            samples, diag.replicate_size * diag.replicates_per_draw, cfg.seed, threads=cfg.threads)
        report = posterior_predictive_check(
            summers, segments, diag.replicate_size, diag.thresholds, diag.lags,
            diag.extremal_quantile, threads=cfg.threads)
        write_csv(report.to_frame().reset_index(), out / "ppc_report.csv")
        table = report.to_table()
        (out / "ppc_table.txt").write_text(table + "\n")
        print(table)
    print(f"Diagnostics for {len(segments)} summers -> {out}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="heatwave", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="station file -> de-seasonalized summers")
    p.add_argument("input", nargs="?", help="ECA&D or date,value CSV file")
    p.add_argument("--years", type=_parse_years, help="e.g. 1990-2011")
    p.add_argument("--smoothing", type=float, help="spline penalty (default: cross-validated)")
    p.add_argument("--keep-suspect", action="store_true", help="keep Q_TX=1 values")

    p = sub.add_parser("fit", parents=[common], help="run the MCMC sampler")
    p.add_argument("--segments")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--u-prior-sd", type=float)

    p = sub.add_parser("simulate", parents=[common], help="weather generator and heat-wave definitions")
    p.add_argument("--samples")
    p.add_argument("--segments")
    p.add_argument("--summers-per-draw", type=int)
    p.add_argument("--write-summers", action="store_true")
    p.add_argument("--recompute-huth", action="store_true")

    p = sub.add_parser("diagnose", parents=[common], help="exploratory diagnostics and predictive checks")
    p.add_argument("--segments")
    p.add_argument("--samples")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose)
    try:
        cfg = load_run_config(args)
        logger.info("Running %s with output directory %s", args.command, cfg.out)
        return COMMANDS[args.command](cfg)
    except NUMERIC_ERRORS as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC_ERROR
    except INPUT_ERRORS as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
