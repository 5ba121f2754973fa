"""
Stage 1: one-hour classroom trials conditioned on a single infectious student.

A trial seats ``n0`` students in a room, picks the source case, draws
vaccination statuses and evaluates every susceptible student's infection
probability with :func:`classrisk.transmission.pair_risk`. Averaging over
trials gives ``eta``, the per-hour infection probability of a susceptible
student (or of the instructor) given one infectious student in the class.

Students all face the front of the room (+y). The instructor stands at the
front, at least six feet from every seat, and is exposed to aerosol only.

Trials are drawn in fixed-size blocks, each from its own substream keyed by
``(seed, density label, block index)``. The random numbers consumed by a
block do not depend on the scenario's efficacy or seating settings, so
comparisons between scenarios use common random numbers.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
import typing

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DegenerateInputError
from .transmission import RelativePosition, RoomEnvironment, TransmissionParams, pair_risk

FOOT = 0.3048
DENSITY_DISTANCING_FT = {"fully_dense": 1.0, "moderate": 3.0, "distanced": 6.0}
DENSITY_LABELS = tuple(DENSITY_DISTANCING_FT)
POLICIES = ("fixed", "unrestricted")

#: Centre-to-centre seat pitch is occupant width plus the distancing gap.
SEAT_WIDTH = 0.6
CEILING_HEIGHT = 3.0
INSTRUCTOR_CLEARANCE = 6 * FOOT

BRUTE_FORCE_MAX_OCCUPANTS = 6
BRUTE_FORCE_MAX_SEATS = 8


@dataclass(frozen=True)
class RoomSpec:
    name: str
    capacity: int          # pre-pandemic seats
    distanced_capacity: int  # seats usable at six-foot distancing
    available_seats: int   # seats offered to the class at this density


DEFAULT_ROOMS = {
    "fully_dense": RoomSpec("Hollister 206", 52, 12, 52),
    "moderate": RoomSpec("Gates G01", 156, 22, 56),
    "distanced": RoomSpec("Rockefeller 201", 383, 56, 56),
}


def distancing_m(density_label: str) -> float:
    try:
        return DENSITY_DISTANCING_FT[density_label] * FOOT
    except KeyError:
        raise ConfigError(f"unknown density label {density_label!r}; "
                          f"expected one of {', '.join(DENSITY_LABELS)}") from None


@dataclass(frozen=True, eq=False)
class SeatingPlan:
    """Seats open to the class (metres, +y towards the front) and room metadata.

    ``capacity`` is the room's full seat count, which may exceed the number of
    seats offered at a given distancing level.
    """

    seats: np.ndarray
    density_label: str
    room_volume: float
    capacity: typing.Optional[int] = None
    name: str = ""

    def __post_init__(self):
        seats = np.array(self.seats, dtype=float)
        if seats.ndim != 2 or seats.shape[1] != 2 or seats.shape[0] == 0:
            raise ConfigError("seats must be a non-empty (n, 2) array of coordinates")
        if not self.room_volume > 0:
            raise ConfigError(f"room volume must be strictly positive, got {self.room_volume!r}")
        seats.flags.writeable = False
        object.__setattr__(self, "seats", seats)
        capacity = seats.shape[0] if self.capacity is None else int(self.capacity)
        if capacity < seats.shape[0]:
            raise ConfigError(f"capacity {capacity} is below the {seats.shape[0]} listed seats")
        object.__setattr__(self, "capacity", capacity)
        if seats.shape[0] > 1 and self.min_spacing() <= 0:
            raise ConfigError("two seats share the same coordinates")

    @property
    def n_seats(self) -> int:
        return self.seats.shape[0]

    @functools.cached_property
    def distances(self) -> np.ndarray:
        diff = self.seats[:, None, :] - self.seats[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    @functools.cached_property
    def distance_rank(self) -> np.ndarray:
        """Dense rank of each seat's distance from each anchor seat (ties share a rank)."""
        ranks = np.empty((self.n_seats, self.n_seats), dtype=np.int64)
        for a in range(self.n_seats):
            _, ranks[a] = np.unique(np.round(self.distances[a], 9), return_inverse=True)
        return ranks

    def min_spacing(self) -> float:
        d = self.distances + np.diag(np.full(self.n_seats, np.inf))
        return float(d.min())

    @property
    def instructor_position(self) -> tuple:
        return (float(self.seats[:, 0].mean()), float(self.seats[:, 1].max() + INSTRUCTOR_CLEARANCE))

    def environment(self, ach: float = 1.0, duration: float = 1.0) -> RoomEnvironment:
        return RoomEnvironment(volume=self.room_volume, ach=ach, duration=duration)


def generate_seating(density_label: str, n_seats: typing.Optional[int] = None, n0: int = 50,
                     seat_width: float = SEAT_WIDTH, ceiling_height: float = CEILING_HEIGHT,
                     capacity: typing.Optional[int] = None) -> SeatingPlan:
    """Near-square rectangular grid of seats for a named density level.

    Seats are ``seat_width + distancing`` apart in both directions, filled
    row by row from the front; the back row may be partial. The room volume
    is the footprint of the grid cells times the ceiling height.
    """
    room = DEFAULT_ROOMS.get(density_label)
    gap = distancing_m(density_label)
    if n_seats is None:
        n_seats = room.available_seats
    if n_seats < n0:
        raise ConfigError(f"{n_seats} seats cannot host a class of {n0}")
    if seat_width < 0:
        raise ConfigError("seat_width must be non-negative")
    pitch = seat_width + gap
    cols = math.ceil(math.sqrt(n_seats))
    rows = math.ceil(n_seats / cols)
    idx = np.arange(n_seats)
    seats = np.column_stack([(idx % cols) * pitch, -(idx // cols) * pitch])
    volume = (cols * pitch) * (rows * pitch) * ceiling_height
    if capacity is None:
        capacity = max(room.capacity, n_seats)
    return SeatingPlan(seats, density_label, volume, capacity, room.name)


def load_seating_plan(path) -> SeatingPlan:
    """Read a plan file.

    Format: ``# key: value`` header lines (``volume_m3`` and
    ``density_label`` required, ``capacity`` and ``name`` optional) followed
    by CSV records ``seat_id,x_m,y_m``.
    """
    meta = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
    for key in ("volume_m3", "density_label"):
        if key not in meta:
            raise ConfigError(f"seating plan {path}: missing header '{key}'")
    reader = csv.DictReader(body)
    if set(reader.fieldnames or ()) != {"seat_id", "x_m", "y_m"}:
        raise ConfigError(f"seating plan {path}: expected columns seat_id,x_m,y_m")
    rows = sorted(((int(r["seat_id"]), float(r["x_m"]), float(r["y_m"])) for r in reader))
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ConfigError(f"seating plan {path}: seat ids must be 0..n-1")
    try:
        volume = float(meta["volume_m3"])
        capacity = int(meta["capacity"]) if "capacity" in meta else None
    except ValueError as exc:
        raise ConfigError(f"seating plan {path}: {exc}") from None
    return SeatingPlan(np.array([r[1:] for r in rows]), meta["density_label"], volume,
                       capacity, meta.get("name", ""))


def save_seating_plan(plan: SeatingPlan, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# volume_m3: {plan.room_volume!r}\n")
        fh.write(f"# density_label: {plan.density_label}\n")
        fh.write(f"# capacity: {plan.capacity}\n")
        if plan.name:
            fh.write(f"# name: {plan.name}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("seat_id", "x_m", "y_m"))
        for i, (x, y) in enumerate(plan.seats):
            writer.writerow((i, repr(float(x)), repr(float(y))))


@dataclass(frozen=True, eq=False)
class OccupancyState:
    """Who sits where. Occupant 0 is the source case."""

    seat_index: np.ndarray   # (n0,) seat of each occupant
    vaccinated: np.ndarray   # (n0,) bool
    source: int = 0
    facing: str = "+y"

    @property
    def n0(self) -> int:
        return len(self.seat_index)


def p_vaccinated_given_infected(ve_susceptible: float, vax_rate: float) -> float:
    """Posterior probability that an infected student is vaccinated."""
    for name, value in (("ve_susceptible", ve_susceptible), ("vax_rate", vax_rate)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    denom = 1.0 - ve_susceptible * vax_rate
    if denom <= 0:
        raise DegenerateInputError("ve_susceptible * vax_rate = 1: nobody can be infected")
    return (1.0 - ve_susceptible) * vax_rate / denom


def _check_policy(policy: str) -> None:
    if policy not in POLICIES:
        raise ConfigError(f"unknown seating policy {policy!r}; expected one of {POLICIES}")


def _draw_occupancy(plan: SeatingPlan, n0: int, policy: str, vax_rate: float,
                    p_source_vax: float, rng: np.random.Generator, size: int):
    """Seat indices ``(size, n0)`` and vaccination flags ``(size, n0)`` for a block of trials.

    The same random numbers are consumed whatever the policy, vaccination
    rate or source-vaccination probability. Under the unrestricted policy
    the unvaccinated students take the seats nearest a random anchor seat
    (ties broken at random) and the vaccinated are spread over the rest.
    With only one group present the policy reduces to uniform seating.
    """
    _check_policy(policy)
    if not 1 <= n0 <= plan.n_seats:
        raise ConfigError(f"class size {n0} must be between 1 and the {plan.n_seats} seats")
    S = plan.n_seats
    u_source = rng.random(size)
    u_others = rng.random((size, n0 - 1))
    u_anchor = rng.random(size)
    key_tie = rng.random((size, S))
    key_in = rng.random((size, S))
    key_out = rng.random((size, S))

    vaccinated = np.empty((size, n0), dtype=bool)
    vaccinated[:, 0] = u_source < p_source_vax
    vaccinated[:, 1:] = u_others < vax_rate

    seats = np.argsort(key_out, axis=1)[:, :n0]
    if policy == "unrestricted":
        n_unvax = n0 - vaccinated.sum(axis=1)
        rows = np.nonzero((n_unvax > 0) & (n_unvax < n0))[0]
        if rows.size:
            m = rows.size
            anchor = np.minimum((u_anchor[rows] * S).astype(np.int64), S - 1)
            nearness = np.argsort(plan.distance_rank[anchor] + key_tie[rows], axis=1)
            position = np.empty_like(nearness)
            np.put_along_axis(position, nearness, np.arange(S)[None, :].repeat(m, 0), axis=1)
            in_cluster = position < n_unvax[rows, None]
            order = np.argsort(np.where(in_cluster, key_in[rows], 1.0 + key_out[rows]), axis=1)
            # unvaccinated occupants first, each group kept in occupant order
            occupant_order = np.argsort(vaccinated[rows], axis=1, kind="stable")
            clustered = np.empty((m, n0), dtype=np.int64)
            np.put_along_axis(clustered, occupant_order, order[:, :n0], axis=1)
            seats[rows] = clustered
    return seats, vaccinated


def assign_seats(plan: SeatingPlan, n0: int, policy: str, vax_rate: float,
                 rng: np.random.Generator) -> OccupancyState:
    """Seat ``n0`` students with i.i.d. vaccination statuses."""
    if not 0.0 <= vax_rate <= 1.0:
        raise ConfigError(f"vax_rate must lie in [0, 1], got {vax_rate!r}")
    seats, vaccinated = _draw_occupancy(plan, n0, policy, vax_rate, vax_rate, rng, 1)
    return OccupancyState(seats[0], vaccinated[0])


@dataclass(frozen=True, eq=False)
class PairRiskTable:
    """Pair risks for every ordered seat pair and vaccination combination.

    ``student[sv, tv, s, t]`` is the risk to a susceptible at seat ``t`` with
    vaccination ``tv`` from a source at seat ``s`` with vaccination ``sv``;
    ``instructor[sv, iv]`` the instructor's risk. Diagonal entries are zero.
    """

    student: np.ndarray
    instructor: np.ndarray

    @classmethod
    def build(cls, plan: SeatingPlan, env: RoomEnvironment, params: TransmissionParams) -> "PairRiskTable":
        S = plan.n_seats
        src, sus = np.nonzero(~np.eye(S, dtype=bool))
        offset = plan.seats[sus] - plan.seats[src]
        pos = RelativePosition.from_offset(offset[:, 0], offset[:, 1]) if src.size else None
        student = np.zeros((2, 2, S, S))
        instructor = np.zeros((2, 2))
        for sv, tv in itertools.product((0, 1), repeat=2):
            if pos is not None:
                student[sv, tv, src, sus] = pair_risk(pos, env, params, bool(sv), bool(tv))
            instructor[sv, tv] = pair_risk(None, env, params, bool(sv), bool(tv))
        return cls(student, instructor)

    def trial_risks(self, seats: np.ndarray, vaccinated: np.ndarray) -> np.ndarray:
        """Per-susceptible risks ``(size, n0 - 1)`` for a block of trials."""
        sv = vaccinated[:, :1].astype(np.int64)
        return self.student[sv, vaccinated[:, 1:].astype(np.int64), seats[:, :1], seats[:, 1:]]


@dataclass(frozen=True)
class ClassroomConfig:
    plan: SeatingPlan
    n0: int = 50
    policy: str = "unrestricted"
    vax_rate: float = 0.9
    ve_source: float = 0.0
    ve_susceptible: float = 0.0
    env: typing.Optional[RoomEnvironment] = None
    params: TransmissionParams = TransmissionParams()

    def __post_init__(self):
        _check_policy(self.policy)
        if not 1 <= self.n0 <= self.plan.n_seats:
            raise ConfigError(f"class size {self.n0} must be between 1 and the {self.plan.n_seats} seats")
        if not 0.0 <= self.vax_rate <= 1.0:
            raise ConfigError(f"vax_rate must lie in [0, 1], got {self.vax_rate!r}")
        if self.env is None:
            object.__setattr__(self, "env", self.plan.environment())
        object.__setattr__(self, "params", self.params.replace(
            ve_source=self.ve_source, ve_susceptible=self.ve_susceptible))

    @property
    def ve_pair(self) -> tuple:
        return (self.ve_source, self.ve_susceptible)

    @property
    def p_source_vaccinated(self) -> float:
        return p_vaccinated_given_infected(self.ve_susceptible, self.vax_rate)

    def replace(self, **changes) -> "ClassroomConfig":
        return dataclasses.replace(self, **changes)

    def risk_table(self) -> PairRiskTable:
        return PairRiskTable.build(self.plan, self.env, self.params)


@dataclass(frozen=True, eq=False)
class TrialResult:
    occupancy: OccupancyState
    susceptible_probs: np.ndarray   # aligned with occupants 1..n0-1
    instructor_prob: float          # vaccinated instructor
    instructor_prob_unvaccinated: float


def simulate_trial(plan: SeatingPlan, n0: int, policy: str, vax_rate: float, ve_pair: tuple,
                   env: RoomEnvironment, rng: np.random.Generator,
                   params: TransmissionParams = TransmissionParams()) -> TrialResult:
    """One trial: seat the class, pick the source and score every susceptible."""
    config = ClassroomConfig(plan, n0, policy, vax_rate, ve_pair[0], ve_pair[1], env, params)
    table = config.risk_table()
    seats, vaccinated = _draw_occupancy(plan, n0, policy, vax_rate,
                                        config.p_source_vaccinated, rng, 1)
    sv = int(vaccinated[0, 0])
    return TrialResult(
        occupancy=OccupancyState(seats[0], vaccinated[0]),
        susceptible_probs=table.trial_risks(seats, vaccinated)[0],
        instructor_prob=float(table.instructor[sv, 1]),
        instructor_prob_unvaccinated=float(table.instructor[sv, 0]),
    )


@dataclass(frozen=True)
class EtaEstimate:
    eta_student: float
    eta_instructor: float
    eta_instructor_unvaccinated: float
    replications: int
    density_label: str
    ve_pair: tuple
    eta_student_se: float = 0.0


def _stream(seed: int, density_label: str, block: int) -> np.random.Generator:
    return rngmod.substream(seed, rngmod.STAGE_CLASSROOM, rngmod.label_key(density_label), block)


def trial_etas(config: ClassroomConfig, replications: int, seed: int) -> tuple:
    """Per-trial ``(eta_student, eta_instructor, eta_instructor_unvaccinated)`` arrays."""
    if replications < 1:
        raise ConfigError("replications must be at least 1")
    table = config.risk_table()
    p_source_vax = config.p_source_vaccinated
    out_s, out_i, out_u = [], [], []
    for block, size in enumerate(rngmod.block_sizes(replications, rngmod.CLASSROOM_BLOCK)):
        rng = _stream(seed, config.plan.density_label, block)
        # draw a full block so that a shorter run is a prefix of a longer one
        seats, vaccinated = _draw_occupancy(config.plan, config.n0, config.policy,
                                            config.vax_rate, p_source_vax, rng, rngmod.CLASSROOM_BLOCK)
        seats, vaccinated = seats[:size], vaccinated[:size]
        if config.n0 > 1:
            out_s.append(table.trial_risks(seats, vaccinated).sum(axis=1) / (config.n0 - 1))
        else:
            out_s.append(np.zeros(size))
        sv = vaccinated[:, 0].astype(np.int64)
        out_i.append(table.instructor[sv, 1])
        out_u.append(table.instructor[sv, 0])
    return np.concatenate(out_s), np.concatenate(out_i), np.concatenate(out_u)


def estimate_eta(config: ClassroomConfig, replications: int = 500, seed: int = 0) -> EtaEstimate:
    """Average conditional per-hour infection probabilities over ``replications`` trials.

    A class of one has no susceptible students; its ``eta_student`` is 0.
    """
    student, instr, instr_unvax = trial_etas(config, replications, seed)
    se = float(student.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    return EtaEstimate(
        eta_student=float(student.mean()),
        eta_instructor=float(instr.mean()),
        eta_instructor_unvaccinated=float(instr_unvax.mean()),
        replications=replications,
        density_label=config.plan.density_label,
        ve_pair=config.ve_pair,
        eta_student_se=se,
    )


@dataclass(frozen=True)
class ExactEta:
    eta_student: float
    eta_instructor: float
    eta_instructor_unvaccinated: float


def _cluster_assignments(plan: SeatingPlan, n_unvax: int, n_vax: int):
    """Yield ``(unvax_seats, vax_seats, weight)`` for the clustered policy."""
    S = plan.n_seats
    for anchor in range(S):
        d = np.round(plan.distances[anchor], 9)
        level = np.sort(d)[n_unvax - 1]
        inner = [s for s in range(S) if d[s] < level]
        boundary = [s for s in range(S) if d[s] == level]
        need = n_unvax - len(inner)
        subsets = list(itertools.combinations(boundary, need))
        for subset in subsets:
            cluster = inner + list(subset)
            rest = [s for s in range(S) if s not in cluster]
            unvax_perms = list(itertools.permutations(cluster))
            vax_perms = list(itertools.permutations(rest, n_vax))
            w = 1.0 / (S * len(subsets) * len(unvax_perms) * len(vax_perms))
            for pu in unvax_perms:
                for pv in vax_perms:
                    yield pu, pv, w


def brute_force_eta(config: ClassroomConfig) -> ExactEta:
    """Exact expectation of a trial's eta by enumerating every outcome.

    Enumerates vaccination vectors, then every seat assignment the policy
    can produce with its probability. Refuses rooms above
    ``BRUTE_FORCE_MAX_SEATS`` seats or classes above
    ``BRUTE_FORCE_MAX_OCCUPANTS``.
    """
    plan, n0 = config.plan, config.n0
    if n0 > BRUTE_FORCE_MAX_OCCUPANTS or plan.n_seats > BRUTE_FORCE_MAX_SEATS:
        raise ConfigError(f"brute force refused: needs n0 <= {BRUTE_FORCE_MAX_OCCUPANTS} and "
                          f"seats <= {BRUTE_FORCE_MAX_SEATS}, got {n0} and {plan.n_seats}")
    table = config.risk_table()
    p_src = config.p_source_vaccinated
    beta = config.vax_rate
    all_perms = np.array(list(itertools.permutations(range(plan.n_seats), n0)), dtype=np.int64)

    eta_student = 0.0
    eta_instr = 0.0
    eta_instr_unvax = 0.0
    for status in itertools.product((False, True), repeat=n0):
        p_status = p_src if status[0] else 1.0 - p_src
        for s in status[1:]:
            p_status *= beta if s else 1.0 - beta
        if p_status == 0.0:
            continue
        sv = int(status[0])
        eta_instr += p_status * table.instructor[sv, 1]
        eta_instr_unvax += p_status * table.instructor[sv, 0]
        if n0 == 1:
            continue

        vacc = np.array(status)
        unvax_people = [i for i in range(n0) if not status[i]]
        vax_people = [i for i in range(n0) if status[i]]
        if config.policy == "fixed" or not unvax_people or not vax_people:
            assignments = all_perms
            weights = np.full(len(all_perms), 1.0 / len(all_perms))
        else:
            rows, weights = [], []
            for pu, pv, w in _cluster_assignments(plan, len(unvax_people), len(vax_people)):
                seat_of = np.empty(n0, dtype=np.int64)
                seat_of[unvax_people] = pu
                seat_of[vax_people] = pv
                rows.append(seat_of)
                weights.append(w)
            assignments = np.array(rows)
            weights = np.array(weights)

        tv = vacc[1:].astype(np.int64)
        risks = table.student[sv, tv[None, :], assignments[:, :1], assignments[:, 1:]]
        eta_student += p_status * float(weights @ risks.mean(axis=1))

    return ExactEta(eta_student, eta_instr, eta_instr_unvax)
