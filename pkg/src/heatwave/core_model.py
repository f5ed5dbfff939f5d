"""Core model: densities, transforms and likelihoods of the two-state switching model.

Pure evaluation only: nothing here draws random numbers or touches files.

State 1 (heat wave) days follow a generalized Pareto distribution above the
threshold u; consecutive heat-wave days, and the days on either side of a
transition, are tied together through the bivariate logistic extreme value
distribution on the unit Frechet scale. State 0 days follow a Gaussian AR(1).

Bivariate density derivation
----------------------------
With z_j = -1/log F_j(y_j) and C(y1, y2) = exp(-V(z1, z2)),
V = (z1^(-1/a) + z2^(-1/a))^a, differentiating C in y1 and y2 gives

    f(y1, y2) = K1 K2 (V1 V2 - V12) exp(-V)

where V_j = z_j^(-1/a-1) V^(1-1/a) is minus dV/dz_j,
V12 = (1 - 1/a) (z1 z2)^(-1/a-1) V^(1-2/a) (<= 0) is d2V/dz1dz2, and
K_j = dz_j/dy_j = f_j(y_j) z_j^2 exp(1/z_j) is the full Jacobian of the
margin (Gaussian margin: phi((y-mu)/sigma_N) / sigma_N; GPD margin:
(1/sigma) (1 - F_j)^(1+xi)). The bracket simplifies to
(z1 z2)^(-1/a-1) V^(1-2/a) (V + 1/a - 1), which is what is evaluated below.
The finite-difference tests in tests/unit/test_core_model.py check this
expression against the mixed second difference of the CDF.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import special, stats

from . import config

logger = logging.getLogger("heatwave.core_model")

PARAM_NAMES = ("a0", "a1", "u", "sigma", "xi", "mu", "sigmaN2", "phi", "alpha", "alpha01")

# Heat-wave state labels; a StateSequence is an integer array of these.
NON_HEATWAVE = 0
HEATWAVE = 1
StateSequence = np.ndarray

_LOG_CDF_CEILING = -1e-300


class InvalidParameterError(ValueError):
    """Raised when a ModelParams field lies outside its admissible range."""


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector of the switching model."""

    a0: float
    a1: float
    u: float
    sigma: float
    xi: float
    mu: float
    sigmaN2: float
    phi: float
    alpha: float
    alpha01: float

    @property
    def sigmaN(self) -> float:
        return float(np.sqrt(self.sigmaN2))

    def dependence(self, s_prev: int, s_t: int) -> float:
        """Logistic dependence parameter for a pair of adjacent states."""
        return self.alpha if (s_prev == HEATWAVE and s_t == HEATWAVE) else self.alpha01

    def validate(self) -> "ModelParams":
        problems = []
        for name in PARAM_NAMES:
            if not np.isfinite(getattr(self, name)):
                problems.append(f"{name} is not finite")
        for name in ("a0", "a1"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                problems.append(f"{name}={value} not in (0, 1)")
        if not 0.0 <= self.phi < 1.0:
            problems.append(f"phi={self.phi} not in [0, 1)")
        for name in ("alpha", "alpha01"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                problems.append(f"{name}={value} not in (0, 1]")
        if not self.sigma > 0:
            problems.append(f"sigma={self.sigma} must be positive")
        if not self.sigmaN2 > 0:
            problems.append(f"sigmaN2={self.sigmaN2} must be positive")
        lo, hi = config.XI_BOUNDS
        if not lo < self.xi < hi:
            problems.append(f"xi={self.xi} not in ({lo}, {hi})")
        if problems:
            raise InvalidParameterError("; ".join(problems))
        return self

    def replace(self, **changes: float) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "ModelParams":
        return cls(**{name: float(values[name]) for name in PARAM_NAMES})


@dataclass
class SummerSegment:
    """One contiguous summer of daily values; the Markov structure lives inside it.

    Missing days carry NaN in ``values`` and True in ``missing_mask``.
    """

    values: np.ndarray
    missing_mask: np.ndarray | None = None
    year: int = 0
    day_of_season: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if self.missing_mask is None:
            mask = np.isnan(values)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool) | np.isnan(values)
        if values.ndim != 1 or values.size < 2:
            raise ValueError(f"segment {self.year}: need a 1-D series of length >= 2")
        if mask.shape != values.shape:
            raise ValueError(f"segment {self.year}: missing_mask length does not match values")
        values[mask] = np.nan
        self.values = values
        self.missing_mask = mask
        if self.day_of_season is None:
            self.day_of_season = np.arange(1, values.size + 1)
        self.year = int(self.year)

    def __len__(self) -> int:
        return self.values.size

    @property
    def n_missing(self) -> int:
        return int(self.missing_mask.sum())

    @property
    def observed(self) -> np.ndarray:
        return self.values[~self.missing_mask]

    def with_values(self, values: np.ndarray) -> "SummerSegment":
        """Same year and missingness pattern, new values (missing days stay NaN)."""
        return SummerSegment(values, self.missing_mask.copy(), self.year, self.day_of_season.copy())


# ---------------------------------------------------------------------------
# Generalized Pareto margin
# ---------------------------------------------------------------------------

def _shape(xi: float) -> float:
    """GPD shape handed to scipy; |xi| below the limit uses the exponential tail."""
    return 0.0 if abs(xi) < config.XI_EXPONENTIAL_LIMIT else float(xi)


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, accurate at both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def gpd_log_density(y, u: float, sigma: float, xi: float):
    """GPD log density; -inf outside the support (a sentinel, not an error)."""
    return np.asarray(stats.genpareto.logpdf(y, _shape(xi), loc=u, scale=sigma), dtype=float)[()]


def gpd_log_survival(y, u: float, sigma: float, xi: float):
    """log P(Y > y | Y > u)."""
    return np.asarray(stats.genpareto.logsf(y, _shape(xi), loc=u, scale=sigma), dtype=float)[()]


def gpd_log_cdf(y, u: float, sigma: float, xi: float):
    # from the survival: log(cdf) rounds to 0 deep in the tail, and the Frechet scale needs it
    y = np.asarray(y, dtype=float)
    log_cdf = _log1mexp(gpd_log_survival(y, u, sigma, xi))
    return np.where(y <= u, -np.inf, log_cdf)[()]


def gpd_cdf(y, u: float, sigma: float, xi: float):
    return np.asarray(stats.genpareto.cdf(y, _shape(xi), loc=u, scale=sigma), dtype=float)[()]


def gpd_quantile(p, u: float, sigma: float, xi: float):
    return np.asarray(stats.genpareto.ppf(p, _shape(xi), loc=u, scale=sigma), dtype=float)[()]


# ---------------------------------------------------------------------------
# Unit Frechet transforms
# ---------------------------------------------------------------------------

def _frechet_from_log_cdf(log_cdf) -> np.ndarray:
    log_cdf = np.asarray(log_cdf, dtype=float)
    with np.errstate(divide="ignore"):
        z = np.where(log_cdf < 0, -1.0 / np.where(log_cdf < 0, log_cdf, -1.0), np.inf)
    return np.where(np.isneginf(log_cdf), 0.0, z)[()]


def frechet_from_gpd(y, u: float, sigma: float, xi: float):
    """z = -1/log F_GPD(y); y == u maps to the limit z = 0."""
    return _frechet_from_log_cdf(gpd_log_cdf(y, u, sigma, xi))


def frechet_from_normal(y, mu: float, sigmaN2: float):
    """z = -1/log Phi((y - mu)/sigma_N), using log_ndtr for the deep lower tail."""
    w = (np.asarray(y, dtype=float) - mu) / np.sqrt(sigmaN2)
    return _frechet_from_log_cdf(special.log_ndtr(w))


# ---------------------------------------------------------------------------
# Logistic extreme value dependence
# ---------------------------------------------------------------------------

def _logistic_log_v(log_z1, log_z2, alpha: float):
    """log V with V = (z1^(-1/alpha) + z2^(-1/alpha))^alpha, stable as alpha -> 0."""
    return alpha * np.logaddexp(-np.asarray(log_z1) / alpha, -np.asarray(log_z2) / alpha)


def logistic_bivariate_cdf(z1, z2, alpha: float):
    """G(z1, z2) = exp(-(z1^(-1/alpha) + z2^(-1/alpha))^alpha)."""
    with np.errstate(divide="ignore"):
        log_v = _logistic_log_v(np.log(z1), np.log(z2), alpha)
    return np.exp(-np.exp(log_v))[()]


def _margin_log_terms(y, state: int, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(log f, log F) of the copula margin for one state."""
    y = np.asarray(y, dtype=float)
    if state == HEATWAVE:
        return (
            np.asarray(gpd_log_density(y, params.u, params.sigma, params.xi)),
            np.asarray(gpd_log_cdf(y, params.u, params.sigma, params.xi)),
        )
    w = (y - params.mu) / params.sigmaN
    return stats.norm.logpdf(w) - np.log(params.sigmaN), special.log_ndtr(w)


def marginal_log_density(y, state: int, params: ModelParams):
    """Density of the margin used inside the copula (also the divisor of the conditional)."""
    return _margin_log_terms(y, state, params)[0][()]


def _log_frechet_terms(log_cdf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(-log F, log z) with F clamped away from 0 and 1."""
    clamped = np.clip(log_cdf, config.LOG_CDF_FLOOR, _LOG_CDF_CEILING)
    neg_log_cdf = -clamped
    return neg_log_cdf, -np.log(neg_log_cdf)


def _copula_log_density(lf1, lF1, lf2, lF2, alpha: float) -> np.ndarray:
    a = 1.0 / alpha
    support = np.isfinite(lf1) & np.isfinite(lf2)
    with np.errstate(all="ignore"):
        nl1, lz1 = _log_frechet_terms(lF1)
        nl2, lz2 = _log_frechet_terms(lF2)
        log_v = _logistic_log_v(lz1, lz2, alpha)
        v = np.exp(log_v)
        log_k = lf1 + nl1 + 2.0 * lz1 + lf2 + nl2 + 2.0 * lz2
        log_bracket = -(a + 1.0) * (lz1 + lz2) + (1.0 - 2.0 * a) * log_v + np.log(v + a - 1.0)
        out = log_k + log_bracket - v
    return np.where(support, out, -np.inf)


def bivariate_log_density(y1, y2, s1: int, s2: int, params: ModelParams):
    """Joint log density of (y1, y2) under the logistic model with state margins."""
    if s1 == NON_HEATWAVE and s2 == NON_HEATWAVE:
        raise ValueError("state pair (0, 0) has no copula density; it is the AR(1) case")
    lf1, lF1 = _margin_log_terms(y1, s1, params)
    lf2, lF2 = _margin_log_terms(y2, s2, params)
    return _copula_log_density(lf1, lF1, lf2, lF2, params.dependence(s1, s2))[()]


def _pair_conditional(y_t, y_prev, s_t: int, s_prev: int, params: ModelParams) -> np.ndarray:
    if s_prev == NON_HEATWAVE and s_t == NON_HEATWAVE:
        mean = params.mu + params.phi * (y_prev - params.mu)
        return stats.norm.logpdf(y_t, loc=mean, scale=params.sigmaN)
    lf_prev, lF_prev = _margin_log_terms(y_prev, s_prev, params)
    lf_t, lF_t = _margin_log_terms(y_t, s_t, params)
    joint = _copula_log_density(lf_prev, lF_prev, lf_t, lF_t, params.dependence(s_prev, s_t))
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(lf_prev), joint - lf_prev, -np.inf)


def conditional_log_density(y_t, y_prev, s_t, s_prev, params: ModelParams):
    """log f(y_t | y_prev, s_t, s_prev); states may be scalars or arrays."""
    y_t, y_prev, s_t, s_prev = np.broadcast_arrays(
        np.asarray(y_t, dtype=float), np.asarray(y_prev, dtype=float),
        np.asarray(s_t, dtype=int), np.asarray(s_prev, dtype=int),
    )
    out = np.full(y_t.shape, -np.inf)
    for sp in (NON_HEATWAVE, HEATWAVE):
        for st in (NON_HEATWAVE, HEATWAVE):
            mask = (s_prev == sp) & (s_t == st)
            if mask.any():
                out[mask] = _pair_conditional(y_t[mask], y_prev[mask], st, sp, params)
    return out[()]


def conditional_log_cdf(y_t, y_prev, s_t: int, s_prev: int, params: ModelParams):
    """log F(y_t | y_prev) for one state pair.

    Copula pairs use dC/dy_prev divided by the margin density of y_prev:
    log F = -V + (1 - 1/a) (log z_prev + log V) - log F_prev(y_prev).
    """
    y_t = np.asarray(y_t, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float)
    if s_prev == NON_HEATWAVE and s_t == NON_HEATWAVE:
        mean = params.mu + params.phi * (y_prev - params.mu)
        return stats.norm.logcdf(y_t, loc=mean, scale=params.sigmaN)[()]
    alpha = params.dependence(s_prev, s_t)
    a = 1.0 / alpha
    _, lF_prev = _margin_log_terms(y_prev, s_prev, params)
    _, lF_t = _margin_log_terms(y_t, s_t, params)
    with np.errstate(all="ignore"):
        nl1, lz1 = _log_frechet_terms(lF_prev)
        _, lz2 = _log_frechet_terms(lF_t)
        log_v = _logistic_log_v(lz1, lz2, alpha)
        out = -np.exp(log_v) + (1.0 - a) * (lz1 + log_v) + nl1
        out = np.minimum(out, 0.0)
    out = np.where(np.isneginf(lF_t), -np.inf, out)
    out = np.where(lF_t == 0.0, 0.0, out)
    return out[()]


# ---------------------------------------------------------------------------
# Latent chain and path likelihood
# ---------------------------------------------------------------------------

def stationary_state_distribution(a0: float, a1: float) -> tuple[float, float]:
    """Stationary (pi0, pi1) of the two-state chain; segments start from it."""
    pi1 = a0 / (1.0 + a0 - a1)
    return 1.0 - pi1, pi1


def transition_matrix(a0: float, a1: float) -> np.ndarray:
    return np.array([[1.0 - a0, a0], [1.0 - a1, a1]])


def log_transition_matrix(a0: float, a1: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.array([[np.log1p(-a0), np.log(a0)], [np.log1p(-a1), np.log(a1)]])


def initial_log_density(y1, params: ModelParams) -> np.ndarray:
    """[log f(y1 | s1=0), log f(y1 | s1=1)] along the last axis.

    State 0 uses the stationary AR(1) margin N(mu, sigmaN2 / (1 - phi^2)).
    """
    y1 = np.asarray(y1, dtype=float)
    stationary_sd = params.sigmaN / np.sqrt(1.0 - params.phi ** 2)
    return np.stack([
        stats.norm.logpdf(y1, loc=params.mu, scale=stationary_sd),
        np.asarray(gpd_log_density(y1, params.u, params.sigma, params.xi)),
    ], axis=-1)


def emission_log_table(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """table[t-1, s_prev, s_t] = log f(y_t | y_{t-1}, s_t, s_prev) for t = 1..T-1."""
    values = np.asarray(values, dtype=float)
    y_prev, y_t = values[:-1], values[1:]
    table = np.empty((values.size - 1, 2, 2))
    for sp in (NON_HEATWAVE, HEATWAVE):
        for st in (NON_HEATWAVE, HEATWAVE):
            table[:, sp, st] = _pair_conditional(y_t, y_prev, st, sp, params)
    return table


def path_log_likelihood(values: np.ndarray, states: StateSequence, params: ModelParams) -> float:
    """log p(y, s | theta) for one fully observed path (states included)."""
    values = np.asarray(values, dtype=float)
    states = np.asarray(states, dtype=int)
    log_pi = np.log(stationary_state_distribution(params.a0, params.a1))
    total = log_pi[states[0]] + initial_log_density(values[0], params)[states[0]]
    if values.size > 1:
        total += np.sum(conditional_log_density(values[1:], values[:-1], states[1:], states[:-1], params))
        total += np.sum(log_transition_matrix(params.a0, params.a1)[states[:-1], states[1:]])
    return float(total)


def segment_log_likelihood(segment: SummerSegment, states: StateSequence, params: ModelParams) -> float:
    """Complete-data log likelihood of one summer; -inf if a state-1 day sits below u."""
    if segment.n_missing:
        raise ValueError(f"segment {segment.year} has {segment.n_missing} missing values; impute first")
    if len(states) != len(segment):
        raise ValueError(f"segment {segment.year}: {len(states)} states for {len(segment)} days")
    return path_log_likelihood(segment.values, states, params)
