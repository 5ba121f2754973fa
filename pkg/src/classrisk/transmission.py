"""
Per-pair and per-room transmission probabilities.

Two routes are modelled. Short-range droplet transmission depends on the
distance and bearing of the susceptible person relative to the source, who
emits into a cone of directions opening towards the front of the room.
Long-range aerosol transmission treats the room as well mixed, so seat
position plays no part in it.

Both routes map a dose to a probability with the exponential dose-response
``P = 1 - exp(-c * D)``. Distances are in metres and durations in hours
throughout; the short-range scale ``c2`` is only meaningful in those units.

Everything here is pure. Functions accept numpy arrays wherever a scalar
geometry argument is accepted, which is how the classroom simulator builds
its seat-by-seat risk tables.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
import typing

import numpy as np

from .errors import ConfigError, DomainError

_VectorisedFloat = typing.Union[float, np.ndarray]

#: Droplet deposition law is fitted on this range of distances (m).
R_MIN = 0.04
R_MAX = 10.8

#: Source viral load is 10**k copies/mL with these probabilities.
VIRAL_LOAD_EXPONENTS = (5, 6, 7, 8, 9, 10, 11)
VIRAL_LOAD_WEIGHTS = (0.12, 0.22, 0.3, 0.23, 0.103, 0.0236, 0.0034)
#: Load at which ``breathing_emission_rate`` is quoted.
NOMINAL_LOAD_EXPONENT = 8

ACTIVITY_MULTIPLIERS = {"breathing": 1.0, "talking": 5.0, "singing": 20.0}
DEFAULT_VENT_FACTORS = ((0.0, 1.0), (1.0, 0.5), (3.0, 0.25))


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")


def _check_positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class TransmissionParams:
    """Scalar constants of the transmission model.

    ``ve_source`` scales the dose emitted by a vaccinated source;
    ``ve_susceptible`` scales the infection probability of a vaccinated
    susceptible person. ``vent_factors`` maps air changes per hour to the
    multiplier applied to the aerosol dose.
    """

    c2: float = 0.0135
    alpha: float = math.radians(15.0)
    kappa_mask_calib: float = 0.8
    variant_multiplier: float = 2.4
    ve_source: float = 0.0
    ve_susceptible: float = 0.0
    id50_copies: float = 1440.0
    breathing_emission_rate: float = 3300.0
    inhalation_rate: float = 0.54
    activity_multiplier: float = 1.0
    vent_factors: tuple = DEFAULT_VENT_FACTORS

    def __post_init__(self):
        # c2 == 0 is allowed so that the droplet route can be switched off
        if not self.c2 >= 0:
            raise ConfigError(f"c2 must be non-negative, got {self.c2!r}")
        if not 0.0 <= self.alpha <= math.pi / 2:
            raise ConfigError(f"alpha must lie in [0, pi/2] radians, got {self.alpha!r}")
        for name in ("kappa_mask_calib", "ve_source", "ve_susceptible"):
            _check_fraction(name, getattr(self, name))
        if not self.variant_multiplier >= 0:
            raise ConfigError("variant_multiplier must be non-negative")
        for name in ("id50_copies", "breathing_emission_rate", "inhalation_rate"):
            _check_positive(name, getattr(self, name))
        if not self.activity_multiplier >= 0:
            raise ConfigError("activity_multiplier must be non-negative")
        factors = tuple((float(a), float(f)) for a, f in self.vent_factors)
        for ach, factor in factors:
            if ach < 0 or not 0 <= factor <= 1:
                raise ConfigError(f"invalid ventilation factor {factor!r} for ach={ach!r}")
        object.__setattr__(self, "vent_factors", factors)

    def vent_factor(self, ach: float) -> float:
        for known, factor in self.vent_factors:
            if math.isclose(known, ach, rel_tol=0.0, abs_tol=1e-12):
                return factor
        known = ", ".join(f"{a:g}" for a, _ in self.vent_factors)
        raise ConfigError(f"no ventilation factor configured for ach={ach!r} (known: {known})")

    def replace(self, **changes) -> "TransmissionParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RelativePosition:
    """Susceptible person relative to the source.

    ``theta`` is measured counterclockwise from the source's right-hand
    direction, so a source facing the front of the room faces ``pi/2``.
    """

    r: _VectorisedFloat
    theta: _VectorisedFloat

    def __post_init__(self):
        if np.any(np.asarray(self.r) <= 0):
            raise DomainError("distance r must be strictly positive")

    @classmethod
    def from_offset(cls, dx: _VectorisedFloat, dy: _VectorisedFloat) -> "RelativePosition":
        """Build from the susceptible's offset, with +y the source's facing direction."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        r = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        if r.ndim == 0:
            return cls(float(r), float(theta))
        return cls(r, theta)


@dataclass(frozen=True)
class RoomEnvironment:
    volume: float
    ach: float = 1.0
    duration: float = 1.0

    def __post_init__(self):
        if not self.volume > 0:
            raise ConfigError(f"room volume must be strictly positive, got {self.volume!r}")
        if not self.duration > 0:
            raise ConfigError(f"duration must be strictly positive, got {self.duration!r}")
        if not self.ach >= 0:
            raise ConfigError(f"ach must be non-negative, got {self.ach!r}")


def dose_response(dose: _VectorisedFloat, scale: float = 1.0) -> _VectorisedFloat:
    """Exponential dose-response ``1 - exp(-scale * dose)``."""
    return -np.expm1(-scale * np.asarray(dose, dtype=float))


def phi_deposit(r: _VectorisedFloat) -> _VectorisedFloat:
    """Fraction of emitted droplets that travel at least ``r`` metres.

    The log law is clamped to [0, 1]; it is taken as 1 below ``R_MIN`` and
    0 beyond ``R_MAX``.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > 0)):
        raise DomainError("phi_deposit requires r > 0")
    with np.errstate(divide="ignore"):
        phi = -0.1819 * np.log(r_arr) + 0.43276
    phi = np.where(r_arr < R_MIN, 1.0, np.where(r_arr > R_MAX, 0.0, np.clip(phi, 0.0, 1.0)))
    return float(phi) if phi.ndim == 0 else phi


def in_cone(theta: _VectorisedFloat, alpha: float) -> typing.Union[bool, np.ndarray]:
    """Whether bearing ``theta`` lies in the cone ``[-alpha, pi + alpha]``.

    The test is done on the angular deviation from the facing direction
    ``pi/2`` so that bearings reported on either side of the branch cut at
    ``-pi`` are handled the same way.
    """
    theta = np.asarray(theta, dtype=float)
    deviation = np.abs(np.remainder(theta - np.pi / 2 + np.pi, 2 * np.pi) - np.pi)
    # small slack so that mirrored bearings on the cone edge agree despite rounding
    inside = deviation <= np.pi / 2 + alpha + 1e-12
    return bool(inside) if inside.ndim == 0 else inside


def short_range_dose(pos: RelativePosition, T: float, params: TransmissionParams,
                     apply_calib_mask: bool = False) -> _VectorisedFloat:
    """Exponent of the droplet dose-response, ``c2 * 1{cone} * phi(r)/r * kappa * T``."""
    kappa = params.kappa_mask_calib if apply_calib_mask else 1.0
    r = np.asarray(pos.r, dtype=float)
    reception = np.where(in_cone(pos.theta, params.alpha), phi_deposit(r) / r, 0.0)
    dose = params.c2 * reception * kappa * T
    return float(dose) if np.ndim(dose) == 0 else dose


def short_range_prob(pos: RelativePosition, T: float, params: TransmissionParams,
                     apply_calib_mask: bool = False) -> _VectorisedFloat:
    prob = dose_response(short_range_dose(pos, T, params, apply_calib_mask))
    return float(prob) if np.ndim(prob) == 0 else prob


def aerosol_dose(k: int, env: RoomEnvironment, params: TransmissionParams) -> float:
    """Virus copies inhaled over ``env.duration`` from a source with load ``10**k``.

    Emission scales linearly with viral load relative to the nominal load at
    which ``breathing_emission_rate`` is quoted.
    """
    if k not in VIRAL_LOAD_EXPONENTS:
        raise DomainError(f"viral load exponent must be one of {VIRAL_LOAD_EXPONENTS}, got {k!r}")
    emitted = (params.breathing_emission_rate * params.activity_multiplier
               * 10.0 ** (k - NOMINAL_LOAD_EXPONENT) * env.duration)
    return emitted * params.vent_factor(env.ach) * params.inhalation_rate / env.volume


def aerosol_prob(env: RoomEnvironment, params: TransmissionParams, dose_scale: float = 1.0) -> float:
    """Well-mixed room infection probability averaged over the viral-load mixture.

    ``dose_scale`` multiplies every dose before the dose-response map; the
    pair model uses it for a vaccinated source.
    """
    total = 0.0
    for k, w in zip(VIRAL_LOAD_EXPONENTS, VIRAL_LOAD_WEIGHTS):
        total += w * float(dose_response(aerosol_dose(k, env, params) * dose_scale,
                                         1.0 / params.id50_copies))
    return total


def pair_risk(pos: typing.Optional[RelativePosition], env: RoomEnvironment,
              params: TransmissionParams, source_vaccinated, susceptible_vaccinated
              ) -> _VectorisedFloat:
    """Infection probability of one susceptible person over ``env.duration``.

    Pass ``pos=None`` for the instructor, who is exposed to aerosol only.
    The vaccination flags may be booleans or boolean arrays broadcastable
    against ``pos``.
    """
    source_vaccinated = np.asarray(source_vaccinated, dtype=bool)
    susceptible_vaccinated = np.asarray(susceptible_vaccinated, dtype=bool)
    src_scale = np.where(source_vaccinated, 1.0 - params.ve_source, 1.0)

    # the aerosol term takes only two values, so evaluate it per source status
    long_unvax = aerosol_prob(env, params)
    long_vax = aerosol_prob(env, params, 1.0 - params.ve_source)
    long = np.where(source_vaccinated, long_vax, long_unvax)

    if pos is None:
        combined = long
    else:
        short = dose_response(short_range_dose(pos, env.duration, params) * src_scale)
        combined = np.maximum(short, long)

    combined = combined * np.where(susceptible_vaccinated, 1.0 - params.ve_susceptible, 1.0)
    risk = np.clip(combined * params.variant_multiplier, 0.0, 1.0)
    return float(risk) if np.ndim(risk) == 0 else risk
