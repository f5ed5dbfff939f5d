"""Inference: block Gibbs sampler with FFBS state draws, conjugate transition
updates, adaptive Metropolis parameter updates and missing-value imputation.

Sweep order per iteration (fixed):
    impute missing days -> FFBS states per segment -> (a0, a1)
    -> Metropolis over METROPOLIS_ORDER.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats
from tqdm import tqdm

from . import config
from .core_model import (
    HEATWAVE,
    NON_HEATWAVE,
    PARAM_NAMES,
    ModelParams,
    SummerSegment,
    conditional_log_density,
    emission_log_table,
    initial_log_density,
    log_transition_matrix,
    segment_log_likelihood,
    stationary_state_distribution,
)

logger = logging.getLogger("heatwave.inference")

METROPOLIS_ORDER = ("u", "sigma", "xi", "mu", "sigmaN2", "phi", "alpha", "alpha01")

INITIAL_PROPOSAL_SCALES = {
    "u": 0.1,
    "sigma": 0.1,
    "xi": 0.2,
    "mu": 0.1,
    "sigmaN2": 0.05,
    "phi": 0.1,
    "alpha": 0.2,
    "alpha01": 0.2,
}

_ADAPTATION_GAIN = 2.0


class SamplerInitializationError(RuntimeError):
    """Raised when the chain cannot start from a finite log posterior."""


class StateSamplingError(RuntimeError):
    """Raised when no latent state is feasible for some day."""


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters. ``u_center`` comes from data (see from_segments)."""

    u_center: float
    u_sd: float = config.U_PRIOR_SD
    log_sigma: tuple[float, float] = config.LOG_SIGMA_PRIOR
    xi_bounds: tuple[float, float] = config.XI_BOUNDS
    mu: tuple[float, float] = config.MU_PRIOR
    log_sigmaN2: tuple[float, float] = config.LOG_SIGMA_N2_PRIOR
    a0_beta: tuple[float, float] = config.TRANSITION_BETA_PRIOR
    a1_beta: tuple[float, float] = config.TRANSITION_BETA_PRIOR

    def __post_init__(self):
        values = [self.u_center, self.u_sd, *self.log_sigma, *self.xi_bounds, *self.mu,
                  *self.log_sigmaN2, *self.a0_beta, *self.a1_beta]
        if not np.all(np.isfinite(values)):
            raise ValueError("prior hyperparameters must be finite")
        if min(self.u_sd, self.log_sigma[1], self.mu[1], self.log_sigmaN2[1]) <= 0:
            raise ValueError("prior standard deviations must be positive")
        if min(*self.a0_beta, *self.a1_beta) <= 0:
            raise ValueError("Beta prior parameters must be positive")

    @classmethod
    def from_segments(cls, segments: Sequence[SummerSegment], **overrides) -> "PriorSpec":
        """Center the threshold prior on the pooled empirical 0.98 quantile."""
        pooled = np.concatenate([seg.observed for seg in segments])
        if pooled.size == 0:
            raise ValueError("no observed values to center the threshold prior on")
        center = float(np.quantile(pooled, config.THRESHOLD_QUANTILE))
        return cls(u_center=overrides.pop("u_center", center), **overrides)


@dataclass(frozen=True)
class MCMCConfig:
    n_iterations: int = config.N_ITERATIONS
    n_burnin: int = config.N_BURNIN
    thinning: int = config.THINNING
    seed: int = config.DEFAULT_SEED
    adaptation_window: int = config.ADAPTATION_WINDOW
    target_acceptance: float = config.TARGET_ACCEPTANCE

    def __post_init__(self):
        if self.n_iterations < 1 or self.n_burnin < 0:
            raise ValueError("n_iterations must be >= 1 and n_burnin >= 0")
        if self.n_burnin >= self.n_iterations:
            raise ValueError(f"n_burnin ({self.n_burnin}) must be < n_iterations ({self.n_iterations})")
        if self.thinning < 1 or self.adaptation_window < 1:
            raise ValueError("thinning and adaptation_window must be >= 1")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")


@dataclass
class PosteriorSample:
    params: ModelParams
    states: list[np.ndarray]
    imputed: list[np.ndarray]  # values at each segment's missing indices
    log_posterior: float
    iteration: int = 0


@dataclass
class ChainResult:
    samples: list[PosteriorSample]
    acceptance_rates: dict[str, float]
    proposal_scales: dict[str, float]
    log_posterior_trace: np.ndarray
    state_inclusion_counts: list[np.ndarray]
    years: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def state_probabilities(self) -> list[np.ndarray]:
        """Per-day posterior P(S_t = 1) for every segment."""
        n = max(self.n_samples, 1)
        return [counts / n for counts in self.state_inclusion_counts]

    def parameter_frame(self) -> pd.DataFrame:
        rows = [{**s.params.as_dict(), "log_posterior": s.log_posterior} for s in self.samples]
        return pd.DataFrame(rows, columns=[*PARAM_NAMES, "log_posterior"])


# ---------------------------------------------------------------------------
# Prior and parameter transforms
# ---------------------------------------------------------------------------

def log_prior(params: ModelParams, prior: PriorSpec) -> float:
    """Log prior density on the natural parameter scale; -inf outside the support."""
    lo, hi = prior.xi_bounds
    if not (0 < params.a0 < 1 and 0 < params.a1 < 1 and 0 < params.phi < 1
            and 0 < params.alpha <= 1 and 0 < params.alpha01 <= 1
            and params.sigma > 0 and params.sigmaN2 > 0 and lo < params.xi < hi):
        return -np.inf
    log_sigma = np.log(params.sigma)
    log_s2 = np.log(params.sigmaN2)
    total = (
        stats.norm.logpdf(log_sigma, *prior.log_sigma) - log_sigma
        + stats.norm.logpdf(log_s2, *prior.log_sigmaN2) - log_s2
        - np.log(hi - lo)
        + stats.norm.logpdf(params.u, prior.u_center, prior.u_sd)
        + stats.norm.logpdf(params.mu, *prior.mu)
        + stats.beta.logpdf(params.a0, *prior.a0_beta)
        + stats.beta.logpdf(params.a1, *prior.a1_beta)
    )
    return float(total)


def sample_prior(prior: PriorSpec, rng: np.random.Generator) -> ModelParams:
    """One parameter set drawn from the prior that log_prior evaluates."""
    lo, hi = prior.xi_bounds
    return ModelParams(
        a0=float(rng.beta(*prior.a0_beta)),
        a1=float(rng.beta(*prior.a1_beta)),
        u=float(rng.normal(prior.u_center, prior.u_sd)),
        sigma=float(np.exp(rng.normal(*prior.log_sigma))),
        xi=float(rng.uniform(lo, hi)),
        mu=float(rng.normal(*prior.mu)),
        sigmaN2=float(np.exp(rng.normal(*prior.log_sigmaN2))),
        phi=float(rng.uniform()),
        alpha=float(1.0 - rng.uniform()),
        alpha01=float(1.0 - rng.uniform()),
    ).validate()


class _Transform(NamedTuple):
    forward: Callable[[float], float]
    inverse: Callable[[float], float]
    log_jacobian: Callable[[float], float]  # log |d theta / d eta|


def _interval_transform(lo: float, hi: float) -> _Transform:
    width = hi - lo
    return _Transform(
        forward=lambda x: float(special.logit((x - lo) / width)),
        inverse=lambda eta: float(lo + width * special.expit(eta)),
        log_jacobian=lambda eta: float(np.log(width) - np.logaddexp(0.0, eta) - np.logaddexp(0.0, -eta)),
    )


_IDENTITY = _Transform(lambda x: float(x), lambda eta: float(eta), lambda eta: 0.0)
_LOG = _Transform(lambda x: float(np.log(x)), lambda eta: float(np.exp(eta)), lambda eta: float(eta))
_UNIT = _interval_transform(0.0, 1.0)

TRANSFORMS: dict[str, _Transform] = {
    "u": _IDENTITY,
    "mu": _IDENTITY,
    "sigma": _LOG,
    "sigmaN2": _LOG,
    "phi": _UNIT,
    "alpha": _UNIT,
    "alpha01": _UNIT,
    "xi": _interval_transform(*config.XI_BOUNDS),
}


# ---------------------------------------------------------------------------
# Pooled likelihood over segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _SegmentLayout:
    """Offsets of segments inside the pooled value/state arrays."""

    starts: np.ndarray
    lengths: np.ndarray
    prev_idx: np.ndarray
    cur_idx: np.ndarray

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "_SegmentLayout":
        lengths = np.asarray(lengths, dtype=int)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        cur = np.concatenate([np.arange(s + 1, s + n) for s, n in zip(starts, lengths)])
        return cls(starts=starts, lengths=lengths, prev_idx=cur - 1, cur_idx=cur)

    def split(self, pooled: np.ndarray) -> list[np.ndarray]:
        return [pooled[s:s + n].copy() for s, n in zip(self.starts, self.lengths)]


def _pooled_log_likelihood(values: np.ndarray, states: np.ndarray,
                           layout: _SegmentLayout, params: ModelParams) -> float:
    log_pi = np.log(stationary_state_distribution(params.a0, params.a1))
    first_states = states[layout.starts]
    init = initial_log_density(values[layout.starts], params)
    total = np.sum(log_pi[first_states] + init[np.arange(first_states.size), first_states])
    prev, cur = layout.prev_idx, layout.cur_idx
    total += np.sum(conditional_log_density(values[cur], values[prev], states[cur], states[prev], params))
    total += np.sum(log_transition_matrix(params.a0, params.a1)[states[prev], states[cur]])
    return float(total)


def log_posterior(filled_values: Sequence[np.ndarray], states: Sequence[np.ndarray],
                  params: ModelParams, prior: PriorSpec) -> float:
    """Unnormalized log posterior recomputed from scratch, segment by segment."""
    lp = log_prior(params, prior)
    if not np.isfinite(lp):
        return -np.inf
    ll = 0.0
    for values, path in zip(filled_values, states):
        ll += segment_log_likelihood(SummerSegment(values), path, params)
    return lp + ll


# ---------------------------------------------------------------------------
# Latent states
# ---------------------------------------------------------------------------

def ffbs_sample_states(segment: SummerSegment, params: ModelParams,
                       rng: np.random.Generator) -> np.ndarray:
    """Exact draw of the state path given a fully observed (or imputed) segment.

    The emission of day t depends on (s_{t-1}, s_t), so the forward pass
    marginalizes s_{t-1} with the pairwise emission inside the sum and the
    backward pass samples s_{t-1} | s_t from alpha_{t-1} * A * emission.

    Raises:
        ValueError: If the segment still has missing values.
        StateSamplingError: If some day admits no state.
    """
    if segment.n_missing:
        raise ValueError(f"segment {segment.year} has missing values; impute before sampling states")
    return _ffbs(segment.values, params, rng, label=str(segment.year))


def _ffbs(values: np.ndarray, params: ModelParams, rng: np.random.Generator, label: str = "") -> np.ndarray:
    n_days = values.size
    log_a = log_transition_matrix(params.a0, params.a1)
    log_pi = np.log(stationary_state_distribution(params.a0, params.a1))
    table = emission_log_table(values, params)
    draws = rng.random(n_days)

    log_alpha = np.empty((n_days, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        start = log_pi + initial_log_density(values[0], params)
        norm = special.logsumexp(start)
        if not np.isfinite(norm):
            raise StateSamplingError(f"segment {label}: no feasible state on day index 0")
        log_alpha[0] = start - norm
        for t in range(1, n_days):
            joint = log_alpha[t - 1][:, None] + log_a + table[t - 1]
            row = special.logsumexp(joint, axis=0)
            norm = special.logsumexp(row)
            if not np.isfinite(norm):
                raise StateSamplingError(f"segment {label}: no feasible state on day index {t}")
            log_alpha[t] = row - norm

        states = np.empty(n_days, dtype=np.int8)
        states[-1] = draws[-1] < np.exp(log_alpha[-1, HEATWAVE])
        for t in range(n_days - 2, -1, -1):
            nxt = states[t + 1]
            w = log_alpha[t] + log_a[:, nxt] + table[t][:, nxt]
            states[t] = draws[t] < np.exp(w[HEATWAVE] - special.logsumexp(w))
    return states


def count_transitions(state_sequences: Sequence[np.ndarray]) -> np.ndarray:
    """counts[i, j] = number of within-segment i -> j transitions."""
    counts = np.zeros((2, 2), dtype=int)
    for states in state_sequences:
        states = np.asarray(states, dtype=int)
        np.add.at(counts, (states[:-1], states[1:]), 1)
    return counts


def update_transition_probs(state_sequences: Sequence[np.ndarray], prior: PriorSpec,
                            rng: np.random.Generator) -> tuple[float, float]:
    """Conjugate Beta draws of (a0, a1) from pooled transition counts."""
    n = count_transitions(state_sequences)
    a0 = rng.beta(prior.a0_beta[0] + n[0, 1], prior.a0_beta[1] + n[0, 0])
    a1 = rng.beta(prior.a1_beta[0] + n[1, 1], prior.a1_beta[1] + n[1, 0])
    return float(a0), float(a1)


# ---------------------------------------------------------------------------
# Missing values
# ---------------------------------------------------------------------------

def _interpolate_missing(segment: SummerSegment) -> np.ndarray:
    values = segment.values.copy()
    missing = segment.missing_mask
    if missing.any():
        observed_idx = np.flatnonzero(~missing)
        values[missing] = np.interp(np.flatnonzero(missing), observed_idx, values[observed_idx])
    return values


def _gaussian_full_conditional(values: np.ndarray, t: int, params: ModelParams) -> tuple[float, float]:
    mu, phi, s2 = params.mu, params.phi, params.sigmaN2
    if t == 0:
        return mu + phi * (values[1] - mu), s2
    if t == values.size - 1:
        return mu + phi * (values[t - 1] - mu), s2
    mean = mu + phi * ((values[t - 1] - mu) + (values[t + 1] - mu)) / (1.0 + phi ** 2)
    return mean, s2 / (1.0 + phi ** 2)


def _imputation_log_target(y: float, values: np.ndarray, t: int, states: np.ndarray,
                           params: ModelParams) -> float:
    if t == 0:
        lp = initial_log_density(y, params)[states[0]]
    else:
        lp = conditional_log_density(y, values[t - 1], states[t], states[t - 1], params)
    if t < values.size - 1:
        lp = lp + conditional_log_density(values[t + 1], y, states[t + 1], states[t], params)
    return float(lp)


def impute_missing(segment: SummerSegment, states: np.ndarray, params: ModelParams,
                   rng: np.random.Generator, current: np.ndarray | None = None) -> np.ndarray:
    """Redraw every missing day from its full conditional given neighbours and states.

    All-Gaussian neighbourhoods are drawn exactly; anything involving the
    copula takes one random-walk Metropolis step from the current value.
    Returns the filled series; observed days are untouched.
    """
    values = _interpolate_missing(segment) if current is None else np.array(current, dtype=float)
    states = np.asarray(states, dtype=int)
    last = values.size - 1
    for t in np.flatnonzero(segment.missing_mask):
        neighbours_gaussian = (
            states[t] == NON_HEATWAVE
            and (t == 0 or states[t - 1] == NON_HEATWAVE)
            and (t == last or states[t + 1] == NON_HEATWAVE)
        )
        if neighbours_gaussian:
            mean, var = _gaussian_full_conditional(values, t, params)
            values[t] = rng.normal(mean, np.sqrt(var))
            continue
        scale = params.sigma if states[t] == HEATWAVE else params.sigmaN
        proposal = values[t] + scale * rng.standard_normal()
        log_u = np.log(rng.random())
        current_lp = _imputation_log_target(values[t], values, t, states, params)
        proposal_lp = _imputation_log_target(proposal, values, t, states, params)
        if np.isfinite(proposal_lp) and log_u < proposal_lp - current_lp:
            values[t] = proposal
    return values


# ---------------------------------------------------------------------------
# Chain state and Metropolis updates
# ---------------------------------------------------------------------------

@dataclass
class ChainState:
    params: ModelParams
    values: np.ndarray  # pooled, missing days filled
    states: np.ndarray  # pooled
    layout: _SegmentLayout
    prior: PriorSpec
    proposal_scales: dict[str, float] = field(default_factory=lambda: dict(INITIAL_PROPOSAL_SCALES))
    log_likelihood: float = 0.0
    log_prior: float = 0.0
    accepted: dict[str, int] = field(default_factory=lambda: {n: 0 for n in METROPOLIS_ORDER})
    proposed: dict[str, int] = field(default_factory=lambda: {n: 0 for n in METROPOLIS_ORDER})

    @classmethod
    def at(cls, segments: Sequence[SummerSegment], params: ModelParams,
           states: Sequence[np.ndarray], prior: PriorSpec) -> "ChainState":
        """Chain positioned at ``params`` and ``states``; missing days start interpolated."""
        chain = cls(
            params=params,
            values=np.concatenate([_interpolate_missing(seg) for seg in segments]),
            states=np.concatenate([np.asarray(path, dtype=np.int8) for path in states]),
            layout=_SegmentLayout.from_lengths([len(seg) for seg in segments]),
            prior=prior,
        )
        chain.refresh()
        return chain

    @property
    def log_posterior(self) -> float:
        return self.log_likelihood + self.log_prior

    def refresh(self) -> float:
        self.log_likelihood = _pooled_log_likelihood(self.values, self.states, self.layout, self.params)
        self.log_prior = log_prior(self.params, self.prior)
        return self.log_posterior

    def segment_values(self) -> list[np.ndarray]:
        return self.layout.split(self.values)

    def segment_states(self) -> list[np.ndarray]:
        return self.layout.split(self.states)


def metropolis_update(param_name: str, chain: ChainState, rng: np.random.Generator) -> float:
    """One random-walk step for ``param_name`` on its transformed scale.

    Returns the parameter value after the step (the proposal if accepted).
    """
    if param_name not in TRANSFORMS:
        raise ValueError(f"{param_name!r} is not updated by Metropolis")
    transform = TRANSFORMS[param_name]
    current = getattr(chain.params, param_name)
    eta = transform.forward(current)
    eta_new = eta + chain.proposal_scales[param_name] * rng.standard_normal()
    log_u = np.log(rng.random())
    chain.proposed[param_name] += 1

    proposal = chain.params.replace(**{param_name: transform.inverse(eta_new)})
    lp_new = log_prior(proposal, chain.prior)
    if not np.isfinite(lp_new):
        return current
    ll_new = _pooled_log_likelihood(chain.values, chain.states, chain.layout, proposal)
    if not np.isfinite(ll_new):
        return current
    log_ratio = (ll_new + lp_new + transform.log_jacobian(eta_new)) - (
        chain.log_likelihood + chain.log_prior + transform.log_jacobian(eta))
    if log_u < log_ratio:
        chain.params = proposal
        chain.log_likelihood = ll_new
        chain.log_prior = lp_new
        chain.accepted[param_name] += 1
    return getattr(chain.params, param_name)


def _transition_update(chain: ChainState, rng: np.random.Generator) -> bool:
    """Conjugate draw used as an independence proposal, corrected for the stationary start."""
    a0, a1 = update_transition_probs(chain.segment_states(), chain.prior, rng)
    log_u = np.log(rng.random())
    first = chain.states[chain.layout.starts].astype(int)
    old_pi = np.log(stationary_state_distribution(chain.params.a0, chain.params.a1))
    new_pi = np.log(stationary_state_distribution(a0, a1))
    if log_u < np.sum(new_pi[first]) - np.sum(old_pi[first]):
        chain.params = chain.params.replace(a0=a0, a1=a1)
        return True
    return False


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _gpd_pwm(excesses: np.ndarray) -> tuple[float, float]:
    """(sigma, xi) by probability-weighted moments on threshold excesses."""
    x = np.sort(excesses)
    n = x.size
    m0 = x.mean()
    m1 = np.sum(x * (n - np.arange(1, n + 1))) / (n * (n - 1))
    xi = 2.0 - m0 / (m0 - 2.0 * m1)
    sigma = 2.0 * m0 * m1 / (m0 - 2.0 * m1)
    return float(sigma), float(xi)


def initialize_chain(segments: Sequence[SummerSegment], prior: PriorSpec) -> ChainState:
    """Starting point in a finite-likelihood region.

    u at the prior center, states by thresholding at u, the AR(1) part by
    moments of the sub-threshold days, the GPD part by probability-weighted
    moments of the excesses, both dependence parameters at 0.7.

    Raises:
        SamplerInitializationError: If the starting log posterior is not finite.
    """
    if not segments:
        raise ValueError("run_chain needs at least one segment")
    u = prior.u_center
    layout = _SegmentLayout.from_lengths([len(seg) for seg in segments])
    values = np.concatenate([_interpolate_missing(seg) for seg in segments])
    observed = ~np.concatenate([seg.missing_mask for seg in segments])
    states = (values > u).astype(np.int8)

    below = values[observed & (values <= u)]
    excesses = values[observed & (values > u)] - u
    if below.size < 3 or excesses.size < 2:
        raise SamplerInitializationError(
            f"threshold u={u:.3f} leaves {below.size} days below and {excesses.size} above; "
            "check de-seasonalization and units (degrees C)")

    mu = float(below.mean())
    prev, cur = layout.prev_idx, layout.cur_idx
    usable = observed[prev] & observed[cur] & (values[prev] <= u) & (values[cur] <= u)
    phi = 0.5
    if usable.sum() > 2:
        phi = float(np.corrcoef(values[prev][usable], values[cur][usable])[0, 1])
    phi = float(np.clip(np.nan_to_num(phi, nan=0.5), 0.05, 0.95))
    sigmaN2 = float(below.var()) * (1.0 - phi ** 2)

    sigma, xi = _gpd_pwm(excesses) if excesses.size > 2 else (float(excesses.mean()), 0.0)
    if not (np.isfinite(sigma) and sigma > 0 and np.isfinite(xi)):
        sigma, xi = float(excesses.mean()), 0.0
    xi = float(np.clip(xi, -0.45, 0.45))
    if xi < 0 and sigma / -xi <= excesses.max():
        sigma = -xi * excesses.max() * 1.05

    n = count_transitions(layout.split(states))
    a0 = (n[0, 1] + 1.0) / (n[0, 0] + n[0, 1] + 2.0)
    a1 = (n[1, 1] + 1.0) / (n[1, 0] + n[1, 1] + 2.0)

    params = ModelParams(
        a0=a0, a1=a1, u=u, sigma=sigma, xi=xi, mu=mu, sigmaN2=max(sigmaN2, 1e-6), phi=phi,
        alpha=config.INITIAL_DEPENDENCE, alpha01=config.INITIAL_DEPENDENCE,
    )
    chain = ChainState.at(segments, params, layout.split(states), prior)
    if not np.isfinite(chain.log_posterior):
        raise SamplerInitializationError(
            f"initial log posterior is not finite at {params}; "
            "check de-seasonalization and units (degrees C)")
    logger.info("Chain initialized: %s", {k: round(v, 4) for k, v in params.as_dict().items()})
    return chain


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def _adapt_scales(chain: ChainState, window_counts: dict[str, int], window: int,
                  n_adaptations: int, target: float) -> None:
    gain = _ADAPTATION_GAIN / np.sqrt(n_adaptations)
    for name in METROPOLIS_ORDER:
        rate = window_counts[name] / window
        chain.proposal_scales[name] *= float(np.exp(gain * (rate - target)))
    logger.debug("Adapted proposal scales: %s", chain.proposal_scales)


def gibbs_sweep(chain: ChainState, segments: Sequence[SummerSegment], rng: np.random.Generator) -> bool:
    """One sweep in the fixed order. Returns whether the (a0, a1) draw was accepted."""
    layout = chain.layout
    windows = [slice(start, start + n) for start, n in zip(layout.starts, layout.lengths)]
    for seg, window in zip(segments, windows):
        if seg.n_missing:
            chain.values[window] = impute_missing(
                seg, chain.states[window], chain.params, rng, current=chain.values[window])

    for seg, window in zip(segments, windows):
        chain.states[window] = _ffbs(chain.values[window], chain.params, rng, label=str(seg.year))

    accepted = _transition_update(chain, rng)
    chain.refresh()

    for name in METROPOLIS_ORDER:
        metropolis_update(name, chain, rng)
    return accepted


def run_chain(segments: Sequence[SummerSegment], prior: PriorSpec, mcmc: MCMCConfig,
              progress: bool = False) -> ChainResult:
    """Run one chain; deterministic given ``mcmc.seed``."""
    rng = np.random.default_rng(mcmc.seed)
    chain = initialize_chain(segments, prior)
    layout = chain.layout
    logger.info(
        "Running chain: %d segments, %d missing days, %d iterations (%d burn-in, thin %d)",
        len(segments), sum(seg.n_missing for seg in segments),
        mcmc.n_iterations, mcmc.n_burnin, mcmc.thinning,
    )

    samples: list[PosteriorSample] = []
    trace = np.empty(mcmc.n_iterations)
    inclusion = [np.zeros(n, dtype=int) for n in layout.lengths]
    window_start = dict(chain.accepted)
    n_adaptations = 0
    transition_accepted = 0
    post_burnin_start: dict[str, int] = {}
    post_burnin_proposed: dict[str, int] = {}

    for it in tqdm(range(mcmc.n_iterations), disable=not progress, desc="MCMC", unit="it"):
        transition_accepted += gibbs_sweep(chain, segments, rng)

        if it < mcmc.n_burnin and (it + 1) % mcmc.adaptation_window == 0:
            n_adaptations += 1
            window_counts = {n: chain.accepted[n] - window_start[n] for n in METROPOLIS_ORDER}
            _adapt_scales(chain, window_counts, mcmc.adaptation_window, n_adaptations,
                          mcmc.target_acceptance)
            window_start = dict(chain.accepted)
            logger.info("Iteration %d acceptance: %s", it + 1,
                        {n: round(c / mcmc.adaptation_window, 3) for n, c in window_counts.items()})
        if it + 1 == mcmc.n_burnin:
            post_burnin_start = dict(chain.accepted)
            post_burnin_proposed = dict(chain.proposed)

        trace[it] = chain.log_posterior
        if it >= mcmc.n_burnin and (it - mcmc.n_burnin) % mcmc.thinning == 0:
            state_paths = chain.segment_states()
            filled = chain.segment_values()
            samples.append(PosteriorSample(
                params=chain.params,
                states=state_paths,
                imputed=[v[seg.missing_mask] for v, seg in zip(filled, segments)],
                log_posterior=chain.log_posterior,
                iteration=it,
            ))
            for counts, path in zip(inclusion, state_paths):
                counts += path

    acceptance = {}
    for name in METROPOLIS_ORDER:
        proposed = chain.proposed[name] - post_burnin_proposed.get(name, 0)
        accepted = chain.accepted[name] - post_burnin_start.get(name, 0)
        acceptance[name] = accepted / proposed if proposed else float("nan")
    acceptance["a0_a1"] = transition_accepted / mcmc.n_iterations
    logger.info("Post burn-in acceptance: %s", {k: round(v, 3) for k, v in acceptance.items()})

    return ChainResult(
        samples=samples,
        acceptance_rates=acceptance,
        proposal_scales=dict(chain.proposal_scales),
        log_posterior_trace=trace,
        state_inclusion_counts=inclusion,
        years=[seg.year for seg in segments],
    )


def posterior_summary(samples: Sequence[PosteriorSample],
                      summer_length: int = config.SUMMER_LENGTH) -> pd.DataFrame:
    """Mean and 5/50/95% quantiles per parameter, plus derived event statistics."""
    from .generator import expected_event_statistics

    frame = pd.DataFrame([s.params.as_dict() for s in samples], columns=list(PARAM_NAMES))
    derived = [expected_event_statistics(s.params.a0, s.params.a1, summer_length) for s in samples]
    frame["expected_duration"] = [d["expected_duration"] for d in derived]
    frame["expected_events"] = [d["expected_events"] for d in derived]
    summary = pd.DataFrame({
        "mean": frame.mean(),
        "q05": frame.quantile(0.05),
        "q50": frame.quantile(0.50),
        "q95": frame.quantile(0.95),
    })
    summary.index.name = "parameter"
    return summary
