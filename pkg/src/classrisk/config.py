"""
Scenario files.

A scenario is a TOML document. Every key is optional except the seed, which
may instead come from the command line or the environment. Unknown keys are
rejected. Distances are in metres; a key with an ``_ft`` suffix (for
example ``seat_width_ft``) is accepted in place of its metric twin and
converted at 0.3048 m/ft. Durations are in hours.

Example::

    seed = 20210901
    density = "fully_dense"
    seating_policy = "unrestricted"

    [population]
    vax_rate = 0.9
    beta_masked = 1.0

    [environment]
    ach = 1
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
import typing

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import rng as rngmod
from .calibration import default_alpha_grid, default_c2_grid
from .classroom import (CEILING_HEIGHT, DENSITY_LABELS, FOOT, POLICIES, SEAT_WIDTH, SeatingPlan,
                        generate_seating, load_seating_plan)
from .errors import ConfigError
from .semester import DiscretePrior, LogNormal, PopulationModel, PriorSet, TruncatedNormal, prevalence_prior
from .transmission import ACTIVITY_MULTIPLIERS, DEFAULT_VENT_FACTORS, RoomEnvironment, TransmissionParams

_TOP = {"seed", "density", "densities", "seating_policy", "replications", "n_samples",
        "output_dir", "use_calibration", "linearized"}
_SECTIONS = {
    "population": {"n_ug", "n_faculty", "n_graduate", "beta_faculty", "tau_ug", "n0",
                   "beta_masked", "vax_rate"},
    "priors": {"ve_source", "ve_susceptible", "masking_mean", "masking_sd", "prevalence_mu",
               "prevalence_sigma", "infections_mode", "infections_q975"},
    "environment": {"ach", "activity", "duration", "volume", "vent_factors"},
    "transmission": {"c2", "alpha_deg", "variant_multiplier", "id50_copies",
                     "breathing_emission_rate", "inhalation_rate", "kappa_mask_calib"},
    "seating": {"plan_file", "seat_width", "ceiling_height", "n_seats"},
    "calibration": {"alpha_max_deg", "alpha_step_deg", "c2_min", "c2_max", "c2_step"},
}
_LENGTH_KEYS = {("seating", "seat_width"), ("seating", "ceiling_height")}


@dataclass(frozen=True)
class CalibrationGrid:
    alpha_max_deg: float = 15.0
    alpha_step_deg: float = 1.0
    c2_min: float = 1e-4
    c2_max: float = 0.05
    c2_step: float = 1e-4

    def alpha_grid(self):
        return default_alpha_grid(self.alpha_max_deg, self.alpha_step_deg)

    def c2_grid(self):
        return default_c2_grid(self.c2_min, self.c2_max, self.c2_step)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    density: str = "fully_dense"
    densities: tuple = DENSITY_LABELS
    seating_policy: str = "unrestricted"
    replications: int = 500
    n_samples: int = 100_000
    output_dir: typing.Optional[str] = None
    use_calibration: bool = True
    linearized: bool = False
    population: PopulationModel = PopulationModel()
    priors: PriorSet = PriorSet()
    transmission: TransmissionParams = TransmissionParams()
    calibration: CalibrationGrid = CalibrationGrid()
    ach: float = 1.0
    duration: float = 1.0
    volume: typing.Optional[float] = None
    activity: str = "breathing"
    plan_file: typing.Optional[str] = None
    seat_width: float = SEAT_WIDTH
    ceiling_height: float = CEILING_HEIGHT
    n_seats: typing.Optional[int] = None
    # normalised document the config was built from; used for hashing and replay
    document: dict = field(default_factory=dict, compare=False, repr=False)

    def seating_plan(self, density: str) -> SeatingPlan:
        if self.plan_file is not None:
            plan = load_seating_plan(self.plan_file)
        else:
            plan = generate_seating(density, self.n_seats, self.population.n0, self.seat_width,
                                    self.ceiling_height)
        if plan.n_seats < self.population.n0:
            raise ConfigError(f"seating plan for {density!r} has {plan.n_seats} seats, "
                              f"fewer than n0={self.population.n0}")
        return plan

    def environment(self, plan: SeatingPlan) -> RoomEnvironment:
        return RoomEnvironment(self.volume or plan.room_volume, self.ach, self.duration)

    def param_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.document).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _normalise(doc: dict) -> dict:
    """Check keys and fold ``_ft`` variants into metres."""
    out = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            section = {}
            for sub, v in value.items():
                name = sub
                if sub.endswith("_ft") and (key, sub[:-3]) in _LENGTH_KEYS:
                    name = sub[:-3]
                    v = _number(f"{key}.{sub}", v) * FOOT
                elif sub not in _SECTIONS[key]:
                    raise ConfigError(f"unknown key '{key}.{sub}'")
                if name in section:
                    raise ConfigError(f"'{key}.{name}' given more than once")
                section[name] = v
            out[key] = section
        elif key in _TOP:
            out[key] = value
        else:
            raise ConfigError(f"unknown key '{key}'")
    return out


def _number(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"'{name}' must be a finite number, got {value!r}")
    return float(value)


def _integer(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{name}' must be an integer, got {value!r}")
    return value


def _string(name: str, value, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"'{name}' must be a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(f"'{name}' must be one of {', '.join(choices)}, got {value!r}")
    return value


def _pairs(name: str, value) -> list:
    try:
        return [(_number(name, a), _number(name, b)) for a, b in value]
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a list of [value, weight] pairs") from None


def _seed(value) -> int:
    try:
        return rngmod.check_seed(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'seed': {exc}") from None


def from_document(doc: dict, seed: typing.Optional[int] = None, base_dir: Path = Path(".")) -> ScenarioConfig:
    """Build and validate a config from a parsed scenario document.

    ``seed`` overrides the document's seed. Relative plan paths resolve
    against ``base_dir``.
    """
    doc = _normalise(doc)
    if seed is not None:
        doc["seed"] = seed
    if "seed" not in doc:
        raise ConfigError("'seed' is required: set it in the scenario or pass --seed")
    kw = {"seed": _seed(doc["seed"])}

    sec = doc.get("seating", {})
    if "plan_file" in sec:
        path = Path(_string("seating.plan_file", sec["plan_file"]))
        sec["plan_file"] = str(path if path.is_absolute() else (base_dir / path).resolve())
        kw["plan_file"] = sec["plan_file"]
    for key in ("seat_width", "ceiling_height"):
        if key in sec:
            kw[key] = _number(f"seating.{key}", sec[key])
    if "n_seats" in sec:
        kw["n_seats"] = _integer("seating.n_seats", sec["n_seats"])
    if kw.get("seat_width", 0) < 0 or kw.get("ceiling_height", 1) <= 0:
        raise ConfigError("seating.seat_width must be >= 0 and seating.ceiling_height > 0")

    if "plan_file" in kw:
        label = load_seating_plan(kw["plan_file"]).density_label
        kw["density"] = _string("density", doc.get("density", label))
        if kw["density"] != label:
            raise ConfigError(f"'density' is {kw['density']!r} but the plan file is labelled {label!r}")
        kw["densities"] = (label,)
    else:
        kw["density"] = _string("density", doc.get("density", "fully_dense"), DENSITY_LABELS)
        densities = doc.get("densities", list(DENSITY_LABELS))
        if not isinstance(densities, list) or not densities:
            raise ConfigError("'densities' must be a non-empty list")
        densities = [_string("densities", d, DENSITY_LABELS) for d in densities]
        if kw["density"] not in densities:
            densities.append(kw["density"])
        kw["densities"] = tuple(dict.fromkeys(densities))

    if "seating_policy" in doc:
        kw["seating_policy"] = _string("seating_policy", doc["seating_policy"], POLICIES)
    for key in ("replications", "n_samples"):
        if key in doc:
            kw[key] = _integer(key, doc[key])
            if kw[key] < 1:
                raise ConfigError(f"'{key}' must be at least 1")
    if "output_dir" in doc:
        kw["output_dir"] = _string("output_dir", doc["output_dir"])
    for key in ("use_calibration", "linearized"):
        if key in doc:
            if not isinstance(doc[key], bool):
                raise ConfigError(f"'{key}' must be true or false")
            kw[key] = doc[key]

    pop = {k: (_integer if k in ("n_ug", "n_faculty", "n_graduate", "n0") else _number)(f"population.{k}", v)
           for k, v in doc.get("population", {}).items()}
    kw["population"] = PopulationModel(**pop)

    pri = doc.get("priors", {})
    prior_kw = {}
    for key in ("ve_source", "ve_susceptible"):
        if key in pri:
            prior_kw[key] = DiscretePrior.from_pairs(_pairs(f"priors.{key}", pri[key]))
    if "masking_mean" in pri or "masking_sd" in pri:
        prior_kw["masking"] = TruncatedNormal(_number("priors.masking_mean", pri.get("masking_mean", 0.855)),
                                              _number("priors.masking_sd", pri.get("masking_sd", 0.0536)))
    direct = {"prevalence_mu", "prevalence_sigma"} & pri.keys()
    derived = {"infections_mode", "infections_q975"} & pri.keys()
    if direct and derived:
        raise ConfigError("give either priors.prevalence_mu/sigma or priors.infections_mode/q975, not both")
    if direct:
        prior_kw["prevalence"] = LogNormal(_number("priors.prevalence_mu", pri.get("prevalence_mu", -6.157)),
                                           _number("priors.prevalence_sigma", pri.get("prevalence_sigma", 0.413)))
    elif derived:
        prior_kw["prevalence"] = prevalence_prior(
            _number("priors.infections_mode", pri.get("infections_mode", 750.0)),
            _number("priors.infections_q975", pri.get("infections_q975", 2000.0)),
            kw["population"].n_ug)
    kw["priors"] = PriorSet(**prior_kw)

    env = doc.get("environment", {})
    activity = _string("environment.activity", env.get("activity", "breathing"), tuple(ACTIVITY_MULTIPLIERS))
    kw["activity"] = activity
    for key in ("ach", "duration", "volume"):
        if key in env:
            kw[key] = _number(f"environment.{key}", env[key])
    trans = {}
    for key, value in doc.get("transmission", {}).items():
        if key == "alpha_deg":
            trans["alpha"] = math.radians(_number("transmission.alpha_deg", value))
        else:
            trans[key] = _number(f"transmission.{key}", value)
    trans["activity_multiplier"] = ACTIVITY_MULTIPLIERS[activity]
    trans["vent_factors"] = tuple(_pairs("environment.vent_factors", env["vent_factors"])) \
        if "vent_factors" in env else DEFAULT_VENT_FACTORS
    kw["transmission"] = TransmissionParams(**trans)

    cal = {k: _number(f"calibration.{k}", v) for k, v in doc.get("calibration", {}).items()}
    kw["calibration"] = CalibrationGrid(**cal)

    config = ScenarioConfig(**kw, document=doc)
    # fail early on settings that are only checked when used
    config.transmission.vent_factor(config.ach)
    RoomEnvironment(config.volume or 1.0, config.ach, config.duration)
    if config.n_seats is not None and config.n_seats < config.population.n0:
        raise ConfigError(f"seating.n_seats={config.n_seats} is below population.n0={config.population.n0}")
    if not config.calibration.alpha_grid().size or not config.calibration.c2_grid().size:
        raise ConfigError("calibration grids are empty")
    return config


def parse_scenario(path, seed: typing.Optional[int] = None) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed scenario {path}: {exc}") from None
    return from_document(doc, seed, path.parent)
