"""
Stage 2: turn per-hour conditional risks into semester infection risk.

Each draw samples vaccine efficacy, masking effectiveness and campus
prevalence from their priors. The stage-1 ``eta`` for the sampled efficacy
pair is scaled for masking and then compounded over a semester of class
hours. The distribution over draws is reported per role.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
import typing

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DegenerateInputError

ROLES = ("student", "faculty", "graduate", "faculty_unvaccinated", "graduate_unvaccinated")
QUANTILE_LEVELS = (0.05, 0.5, 0.95)
Z_975 = 1.96

# semester length used by the prevalence model
SEMESTER_WEEKS = 14
INFECTIOUS_DAYS = 3.5


@dataclass(frozen=True, eq=False)
class DiscretePrior:
    """Finite support with unnormalised positive weights."""

    values: tuple
    weights: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        weights = tuple(float(w) for w in self.weights)
        if not values or len(values) != len(weights):
            raise ConfigError("discrete prior needs matching, non-empty values and weights")
        if any(not w > 0 for w in weights):
            raise ConfigError("discrete prior weights must be strictly positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_pairs(cls, pairs) -> "DiscretePrior":
        pairs = list(pairs)
        return cls(tuple(v for v, _ in pairs), tuple(w for _, w in pairs))

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights)
        return w / w.sum()

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(self.probabilities)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        return np.asarray(self.values)[idx]

    def to_pairs(self) -> list:
        return [[v, w] for v, w in zip(self.values, self.weights)]


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    sd: float
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.sd >= 0:
            raise ConfigError(f"sd must be non-negative, got {self.sd!r}")
        if not self.low <= self.mean <= self.high:
            raise ConfigError(f"mean {self.mean!r} lies outside [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Rejection sampling; the truncation mass is tiny for the default prior."""
        out = self.mean + self.sd * rng.standard_normal(size)
        bad = (out < self.low) | (out > self.high)
        while bad.any():
            out[bad] = self.mean + self.sd * rng.standard_normal(int(bad.sum()))
            bad = (out < self.low) | (out > self.high)
        return out


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma!r}")

    @property
    def mode(self) -> float:
        return math.exp(self.mu - self.sigma ** 2)

    def quantile(self, z: float) -> float:
        return math.exp(self.mu + z * self.sigma)

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return np.exp(self.mu + self.sigma * z)


def lognormal_from_mode_quantile(mode: float, quantile: float, z: float = Z_975) -> LogNormal:
    """Lognormal with the given mode and upper quantile at standard score ``z``.

    Solves ``log q = mu + z*sigma`` with ``log mode = mu - sigma**2``.
    """
    if not 0 < mode < quantile:
        raise ConfigError("need 0 < mode < quantile")
    sigma = (-z + math.sqrt(z * z + 4 * math.log(quantile / mode))) / 2
    return LogNormal(math.log(mode) + sigma ** 2, sigma)


def prevalence_from_infections(n_infections, n_ug: float, weeks: float = SEMESTER_WEEKS,
                               infectious_days: float = INFECTIOUS_DAYS):
    """Average fraction of undergraduates infectious on a given day."""
    if not n_ug > 0 or not weeks > 0 or not infectious_days > 0:
        raise ConfigError("n_ug, weeks and infectious_days must be positive")
    if np.any(np.asarray(n_infections) < 0):
        raise ConfigError("n_infections must be non-negative")
    return n_infections * infectious_days / (n_ug * weeks * 7)


def prevalence_prior(mode_infections: float = 750.0, q975_infections: float = 2000.0,
                     n_ug: float = 15000, weeks: float = SEMESTER_WEEKS,
                     infectious_days: float = INFECTIOUS_DAYS) -> LogNormal:
    """Prevalence prior implied by a lognormal prior on semester infections."""
    infections = lognormal_from_mode_quantile(mode_infections, q975_infections)
    shift = math.log(prevalence_from_infections(1.0, n_ug, weeks, infectious_days))
    return LogNormal(infections.mu + shift, infections.sigma)


VE_SOURCE_SUPPORT = ((0.0, 469), (0.50, 96898), (0.71, 4938))
VE_SUSCEPTIBLE_SUPPORT = ((0.40, 199411), (0.42, 22064), (0.66, 2840),
                          (0.76, 21179), (0.79, 53679), (0.88, 15871))


@dataclass(frozen=True)
class PriorSet:
    ve_source: DiscretePrior = DiscretePrior.from_pairs(VE_SOURCE_SUPPORT)
    ve_susceptible: DiscretePrior = DiscretePrior.from_pairs(VE_SUSCEPTIBLE_SUPPORT)
    masking: TruncatedNormal = TruncatedNormal(0.855, 0.0536)
    prevalence: LogNormal = LogNormal(-6.157, 0.413)

    def __post_init__(self):
        for name in ("ve_source", "ve_susceptible"):
            if any(not 0 <= v <= 1 for v in getattr(self, name).values):
                raise ConfigError(f"{name} support must lie in [0, 1]")
        if self.masking.low < 0 or self.masking.high > 1:
            raise ConfigError("masking effectiveness must be truncated within [0, 1]")

    def ve_pairs(self) -> list:
        return [(s, t) for s in self.ve_source.values for t in self.ve_susceptible.values]


@dataclass(frozen=True)
class PopulationModel:
    n_ug: int = 15000
    n_faculty: int = 850
    n_graduate: int = 3120
    beta_faculty: float = 2 / 3
    tau_ug: float = 315.0
    n0: int = 50
    beta_masked: float = 1.0
    vax_rate: float = 0.9

    def __post_init__(self):
        for name in ("n_ug", "n_faculty", "n_graduate", "tau_ug", "n0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        for name in ("beta_faculty", "beta_masked", "vax_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)!r}")

    def replace(self, **changes) -> "PopulationModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ParameterDraws:
    """Columns of sampled parameters; row ``i`` is draw ``i``."""

    ve_source: np.ndarray
    ve_susceptible: np.ndarray
    masking: np.ndarray
    prevalence: np.ndarray

    def __len__(self):
        return len(self.prevalence)

    def __getitem__(self, i) -> "ParameterDraw":
        return ParameterDraw(float(self.ve_source[i]), float(self.ve_susceptible[i]),
                             float(self.masking[i]), float(self.prevalence[i]))


@dataclass(frozen=True)
class ParameterDraw:
    ve_source: float
    ve_susceptible: float
    masking: float
    prevalence: float


def _sample_block(priors: PriorSet, rng: np.random.Generator, size: int) -> ParameterDraws:
    # fixed draw order; rejection sampling goes last so it cannot shift the others
    u_src = rng.random(size)
    u_sus = rng.random(size)
    z_prev = rng.standard_normal(size)
    return ParameterDraws(
        priors.ve_source.from_uniform(u_src),
        priors.ve_susceptible.from_uniform(u_sus),
        priors.masking.sample(rng, size),
        priors.prevalence.from_normal(z_prev),
    )


def sample_draw(priors: PriorSet, rng: np.random.Generator) -> ParameterDraw:
    return _sample_block(priors, rng, 1)[0]


def sample_draws(priors: PriorSet, n: int, seed: int) -> ParameterDraws:
    """``n`` draws, generated in blocks with one substream per block."""
    if n < 1:
        raise ConfigError("n_samples must be at least 1")
    # full blocks are always drawn so that a shorter run is a prefix of a longer one
    blocks = [_sample_block(priors, rngmod.substream(seed, rngmod.STAGE_SEMESTER, b), rngmod.SEMESTER_BLOCK)
              for b in range(len(rngmod.block_sizes(n, rngmod.SEMESTER_BLOCK)))]
    return ParameterDraws(*(np.concatenate([getattr(b, f.name) for b in blocks])[:n]
                            for f in dataclasses.fields(ParameterDraws)))


def mask_adjust(eta, beta_masked: float, m):
    """Scale a per-hour risk for a masked fraction ``beta_masked`` with effectiveness ``m``."""
    return eta * (beta_masked * (1 - m) + (1 - beta_masked))


def _compound(x, tau, linearized: bool):
    x = np.asarray(x, dtype=float)
    if np.any(x >= 1):
        raise DegenerateInputError("per-hour risk reached 1; the compounded form is undefined")
    out = x * tau if linearized else -np.expm1(tau * np.log1p(-x))
    return float(out) if out.ndim == 0 else out


def risk_student(eta_adj, n0: int, p, tau_ug: float, linearized: bool = False):
    """Semester risk ``1 - (1 - eta*(n0-1)*p)**tau`` (or its first-order form)."""
    return _compound(np.asarray(eta_adj) * (n0 - 1) * np.asarray(p), tau_ug, linearized)


def risk_instructor(eta_adj, n0: int, p, tau_role: float, linearized: bool = False):
    """Semester risk for an instructor teaching ``tau_role`` hours to classes of ``n0``."""
    p_any = -np.expm1(n0 * np.log1p(-np.asarray(p, dtype=float)))
    return _compound(np.asarray(eta_adj) * p_any, tau_role, linearized)


def instructor_hours(role: str, pop: PopulationModel) -> float:
    base = pop.n_ug * pop.tau_ug / pop.n0
    if role == "faculty":
        return base * pop.beta_faculty / pop.n_faculty
    if role == "graduate":
        return base * (1 - pop.beta_faculty) / pop.n_graduate
    raise ConfigError(f"instructor role must be 'faculty' or 'graduate', got {role!r}")


def _ve_key(density: str, ve_source: float, ve_susceptible: float) -> tuple:
    return (density, round(float(ve_source), 6), round(float(ve_susceptible), 6))


@dataclass(frozen=True)
class EtaRow:
    density: str
    ve_source: float
    ve_susceptible: float
    eta_student: float
    eta_instructor: float
    eta_instructor_unvaccinated: float
    replications: int = 0


class EtaTable:
    """Immutable stage-1 lookup keyed by ``(density, ve_source, ve_susceptible)``."""

    def __init__(self, rows):
        self._rows = tuple(rows)
        self._index = {}
        for row in self._rows:
            key = _ve_key(row.density, row.ve_source, row.ve_susceptible)
            if key in self._index:
                raise ConfigError(f"duplicate eta entry for {key}")
            self._index[key] = row

    @property
    def rows(self) -> tuple:
        return self._rows

    def __len__(self):
        return len(self._rows)

    def lookup(self, density: str, ve_source: float, ve_susceptible: float) -> EtaRow:
        try:
            return self._index[_ve_key(density, ve_source, ve_susceptible)]
        except KeyError:
            raise ConfigError(f"eta table has no entry for density={density!r}, "
                              f"ve_source={ve_source!r}, ve_susceptible={ve_susceptible!r}") from None

    def columns(self, density: str, ve_source: np.ndarray, ve_susceptible: np.ndarray) -> tuple:
        """Vectorised lookup: three eta arrays aligned with the VE arrays."""
        pairs, inverse = np.unique(np.column_stack([ve_source, ve_susceptible]), axis=0,
                                   return_inverse=True)
        rows = [self.lookup(density, s, t) for s, t in pairs]
        inverse = inverse.ravel()
        return tuple(np.array([getattr(r, name) for r in rows])[inverse]
                     for name in ("eta_student", "eta_instructor", "eta_instructor_unvaccinated"))


@dataclass(frozen=True, eq=False)
class RiskDistribution:
    role: str
    samples: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r}")
        samples = np.asarray(self.samples, dtype=float)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def quantiles(self) -> tuple:
        return tuple(float(q) for q in np.quantile(self.samples, QUANTILE_LEVELS))

    def summary(self) -> dict:
        q05, q50, q95 = self.quantiles
        return {"q05": q05, "q50": q50, "q95": q95, "mean": float(self.samples.mean()),
                "n_samples": int(self.samples.size)}


@dataclass(frozen=True, eq=False)
class SemesterResult:
    draws: ParameterDraws
    distributions: dict   # role -> RiskDistribution

    def summary(self) -> dict:
        return {role: dist.summary() for role, dist in self.distributions.items()}


def run_distribution(eta_table: EtaTable, density: str, n_samples: int = 100_000, seed: int = 0,
                     priors: PriorSet = PriorSet(), population: PopulationModel = PopulationModel(),
                     linearized: bool = False) -> SemesterResult:
    """Sample the priors and compute every role's semester risk for each draw."""
    draws = sample_draws(priors, n_samples, seed)
    eta_s, eta_i, eta_u = eta_table.columns(density, draws.ve_source, draws.ve_susceptible)
    factor = mask_adjust(1.0, population.beta_masked, draws.masking)
    p, n0 = draws.prevalence, population.n0
    tau_fac = instructor_hours("faculty", population)
    tau_grad = instructor_hours("graduate", population)
    samples = {
        "student": risk_student(eta_s * factor, n0, p, population.tau_ug, linearized),
        "faculty": risk_instructor(eta_i * factor, n0, p, tau_fac, linearized),
        "graduate": risk_instructor(eta_i * factor, n0, p, tau_grad, linearized),
        "faculty_unvaccinated": risk_instructor(eta_u * factor, n0, p, tau_fac, linearized),
        "graduate_unvaccinated": risk_instructor(eta_u * factor, n0, p, tau_grad, linearized),
    }
    return SemesterResult(draws, {role: RiskDistribution(role, np.atleast_1d(samples[role]))
                                  for role in ROLES})
