"""
Maximum-likelihood fit of the droplet model on high-speed-train contact data.

Each cell ``(x, y)`` of the dataset counts close contacts seated ``x`` rows
and ``y`` columns from an index case and how many of them later tested
positive. Contacts are equally likely to sit in front of or behind the index
case, so only the share behind depends on the cone angle. Positives are
binomial with probability ``fraction_in_cone * in_cone_infection_prob``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
import typing

import numpy as np
from scipy.special import xlog1py, xlogy

from .errors import ConfigError, DomainError
from .transmission import dose_response, phi_deposit

ROW_PITCH = 0.9
COLUMN_OFFSETS = (0.0, 0.5, 1.05, 1.6, 2.1, 2.6)
CO_TRAVEL_HOURS = 2.1
KAPPA_MASK = 0.8
N_ROWS = 4
N_COLS = 6

DATASET_COLUMNS = ("rows_apart", "cols_apart", "contacts", "positives")


@dataclass(frozen=True, eq=False)
class TrainContactDataset:
    """4x6 matrices of close-contact counts and positives; cell (0, 0) is unused."""

    contacts: np.ndarray
    positives: np.ndarray
    row_pitch: float = ROW_PITCH
    column_offsets: tuple = COLUMN_OFFSETS
    co_travel_hours: float = CO_TRAVEL_HOURS

    def __post_init__(self):
        contacts = np.asarray(self.contacts, dtype=np.int64)
        positives = np.asarray(self.positives, dtype=np.int64)
        if contacts.shape != positives.shape or contacts.ndim != 2:
            raise ConfigError("contacts and positives must be matching 2-D matrices")
        if contacts.shape[1] != len(self.column_offsets):
            raise ConfigError("one column offset is needed per column of the matrices")
        if np.any(positives < 0) or np.any(positives > contacts):
            raise ConfigError("need 0 <= positives <= contacts in every cell")
        contacts = contacts.copy()
        positives = positives.copy()
        contacts[0, 0] = positives[0, 0] = 0
        contacts.flags.writeable = False
        positives.flags.writeable = False
        object.__setattr__(self, "contacts", contacts)
        object.__setattr__(self, "positives", positives)
        object.__setattr__(self, "column_offsets", tuple(float(c) for c in self.column_offsets))

    @property
    def shape(self) -> tuple:
        return self.contacts.shape

    def cells(self) -> typing.Iterator[tuple]:
        """Yield ``(x, y)`` for every used cell."""
        rows, cols = self.shape
        for x in range(rows):
            for y in range(cols):
                if (x, y) != (0, 0):
                    yield x, y

    @classmethod
    def embedded(cls) -> "TrainContactDataset":
        text = resources.files("classrisk").joinpath("data/train_contacts.csv").read_text()
        return cls.from_csv(io.StringIO(text))

    @classmethod
    def from_csv(cls, source, **kwargs) -> "TrainContactDataset":
        """Read ``rows_apart, cols_apart, contacts, positives`` records."""
        if isinstance(source, (str, Path)):
            with open(source, newline="") as fh:
                return cls.from_csv(fh, **kwargs)
        reader = csv.DictReader(source)
        missing = set(DATASET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"dataset is missing columns: {sorted(missing)}")
        records = [(int(row["rows_apart"]), int(row["cols_apart"]),
                    int(row["contacts"]), int(row["positives"])) for row in reader]
        if not records:
            raise ConfigError("dataset has no records")
        n_rows = max(r[0] for r in records) + 1
        n_cols = max(r[1] for r in records) + 1
        contacts = np.zeros((n_rows, n_cols), dtype=np.int64)
        positives = np.zeros((n_rows, n_cols), dtype=np.int64)
        for x, y, n, k in records:
            if (x, y) == (0, 0):
                continue
            contacts[x, y] = n
            positives[x, y] = k
        kwargs.setdefault("column_offsets", COLUMN_OFFSETS[:n_cols])
        return cls(contacts, positives, **kwargs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DATASET_COLUMNS)
            for x, y in self.cells():
                writer.writerow((x, y, int(self.contacts[x, y]), int(self.positives[x, y])))


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    c2_hat: float
    alpha_hat: float
    loglik: float
    alpha_grid: np.ndarray
    c2_grid: np.ndarray
    surface: np.ndarray = field(repr=False)  # loglik, shape (len(alpha_grid), len(c2_grid))

    @property
    def alpha_hat_deg(self) -> float:
        return round(math.degrees(self.alpha_hat), 10)

    def surface_rows(self) -> typing.Iterator[tuple]:
        """``(alpha_deg, c2, loglik)`` triples in grid order."""
        for i, alpha in enumerate(self.alpha_grid):
            for j, c2 in enumerate(self.c2_grid):
                yield math.degrees(alpha), float(c2), float(self.surface[i, j])

    def write_surface(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("alpha_deg", "c2", "loglik"))
            for alpha_deg, c2, ll in self.surface_rows():
                writer.writerow((repr(round(alpha_deg, 12)), repr(c2), repr(ll)))

    def to_dict(self) -> dict:
        return {
            "c2_hat": float(self.c2_hat),
            "alpha_hat": float(self.alpha_hat),
            "alpha_hat_deg": float(self.alpha_hat_deg),
            "loglik": float(self.loglik),
            "n_alpha": int(len(self.alpha_grid)),
            "n_c2": int(len(self.c2_grid)),
        }


def _check_cell(x: int, y: int, n_cols: int = N_COLS) -> None:
    if not (0 <= x and 0 <= y < n_cols):
        raise DomainError(f"cell ({x}, {y}) is outside the seat grid")
    if (x, y) == (0, 0):
        raise DomainError("cell (0, 0) is the index case itself; it has no distance")


def row_distance(x: int, row_pitch: float = ROW_PITCH) -> float:
    return row_pitch * x


def seat_distance(x: int, y: int, row_pitch: float = ROW_PITCH,
                  column_offsets: typing.Sequence[float] = COLUMN_OFFSETS) -> float:
    """Straight-line distance (m) between seats ``x`` rows and ``y`` columns apart."""
    _check_cell(x, y, len(column_offsets))
    return math.hypot(row_distance(x, row_pitch), column_offsets[y])


def threshold_angle(x: int, y: int, row_pitch: float = ROW_PITCH,
                    column_offsets: typing.Sequence[float] = COLUMN_OFFSETS) -> float:
    """Smallest cone half-extension that reaches a contact seated behind at ``(x, y)``."""
    _check_cell(x, y, len(column_offsets))
    return math.atan2(row_distance(x, row_pitch), column_offsets[y])


def fraction_in_cone(x: int, y: int, alpha: float, row_pitch: float = ROW_PITCH,
                     column_offsets: typing.Sequence[float] = COLUMN_OFFSETS) -> float:
    """Expected share of contacts at ``(x, y)`` lying in the exposure cone.

    Contacts in front are always inside; those behind are inside only when the
    angle below the source's lateral axis is at most ``alpha``. Same-row
    contacts (``x == 0``) sit on that axis and always count.
    """
    inside_behind = threshold_angle(x, y, row_pitch, column_offsets) <= alpha
    return 0.5 + 0.5 * float(inside_behind)


def in_cone_infection_prob(x: int, y: int, T: float, c2: float, kappa_mask: float = KAPPA_MASK,
                           row_pitch: float = ROW_PITCH,
                           column_offsets: typing.Sequence[float] = COLUMN_OFFSETS) -> float:
    d = seat_distance(x, y, row_pitch, column_offsets)
    return float(dose_response(c2 * phi_deposit(d) / d * kappa_mask * T))


def binomial_loglik(positives, contacts, prob) -> float:
    """Binomial log-likelihood without the combinatorial constant.

    A zero probability with positive successes scores ``-inf``.
    """
    positives = np.asarray(positives, dtype=float)
    contacts = np.asarray(contacts, dtype=float)
    prob = np.asarray(prob, dtype=float)
    with np.errstate(divide="ignore"):
        terms = xlogy(positives, prob) + xlog1py(contacts - positives, -prob)
    return float(np.sum(terms))


class _CellArrays(typing.NamedTuple):
    contacts: np.ndarray
    positives: np.ndarray
    reception: np.ndarray  # phi(d) / d
    threshold: np.ndarray  # angle needed for the behind seat to be in cone


def _cell_arrays(data: TrainContactDataset) -> _CellArrays:
    cells = list(data.cells())
    dist = np.array([seat_distance(x, y, data.row_pitch, data.column_offsets) for x, y in cells])
    return _CellArrays(
        contacts=np.array([data.contacts[c] for c in cells], dtype=float),
        positives=np.array([data.positives[c] for c in cells], dtype=float),
        reception=phi_deposit(dist) / dist,
        threshold=np.array([threshold_angle(x, y, data.row_pitch, data.column_offsets)
                            for x, y in cells]),
    )


def log_likelihood(data: TrainContactDataset, alpha: float, c2: float,
                   kappa_mask: float = KAPPA_MASK, T: typing.Optional[float] = None) -> float:
    """Log-likelihood of ``(alpha, c2)``; ``T`` defaults to the dataset co-travel time."""
    T = data.co_travel_hours if T is None else T
    cells = _cell_arrays(data)
    q = 0.5 + 0.5 * (cells.threshold <= alpha)
    p = dose_response(c2 * cells.reception * kappa_mask * T)
    return binomial_loglik(cells.positives, cells.contacts, q * p)


def default_alpha_grid(max_deg: float = 15.0, step_deg: float = 1.0, min_deg: float = 0.0) -> np.ndarray:
    return np.radians(_inclusive_grid(min_deg, max_deg, step_deg))


def default_c2_grid(c2_min: float = 1e-4, c2_max: float = 0.05, step: float = 1e-4) -> np.ndarray:
    return _inclusive_grid(c2_min, c2_max, step)


def _inclusive_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ConfigError(f"grid step must be positive, got {step!r}")
    if hi < lo:
        raise ConfigError(f"grid upper bound {hi!r} is below lower bound {lo!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    # rounding keeps values like 0.0135 exactly representable as typed
    return np.round(lo + step * np.arange(count), 12)


def grid_search_mle(data: TrainContactDataset, alpha_grid=None, c2_grid=None,
                    kappa_mask: float = KAPPA_MASK, T: typing.Optional[float] = None
                    ) -> CalibrationResult:
    """Exhaustive grid search for the maximum-likelihood ``(alpha, c2)``.

    Ties on log-likelihood go to the largest ``alpha`` and then the smallest
    ``c2``. Below the smallest threshold angle the likelihood does not depend
    on ``alpha`` at all, so the tie rule decides the reported angle.
    """
    alpha_grid = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    c2_grid = default_c2_grid() if c2_grid is None else np.asarray(c2_grid, dtype=float)
    if alpha_grid.size == 0 or c2_grid.size == 0:
        raise ConfigError("calibration grids must be non-empty")
    if np.any(alpha_grid < 0) or np.any(alpha_grid > math.pi / 2):
        raise ConfigError("alpha grid must lie within [0, pi/2]")
    T = data.co_travel_hours if T is None else T

    cells = _cell_arrays(data)
    # (n_c2, n_cells) infection probabilities given in cone
    p_in_cone = dose_response(np.outer(c2_grid, cells.reception) * kappa_mask * T)
    surface = np.empty((alpha_grid.size, c2_grid.size))
    with np.errstate(divide="ignore"):
        for i, alpha in enumerate(alpha_grid):
            r = (0.5 + 0.5 * (cells.threshold <= alpha)) * p_in_cone
            terms = xlogy(cells.positives, r) + xlog1py(cells.contacts - cells.positives, -r)
            surface[i] = terms.sum(axis=1)

    best = np.max(surface)
    ties = np.argwhere(surface == best)
    # largest alpha, then smallest c2
    i, j = min(ties.tolist(), key=lambda ij: (-alpha_grid[ij[0]], c2_grid[ij[1]]))
    return CalibrationResult(
        c2_hat=float(c2_grid[j]),
        alpha_hat=float(alpha_grid[i]),
        loglik=float(best),
        alpha_grid=alpha_grid,
        c2_grid=c2_grid,
        surface=surface,
    )
