import numpy as np
import pytest

from classrisk.classroom import ClassroomConfig, SeatingPlan
from classrisk.transmission import RoomEnvironment, TransmissionParams


def random_toy_config(rng: np.random.Generator) -> ClassroomConfig:
    """Small room where droplet and aerosol terms are of comparable size."""
    n_seats = int(rng.integers(3, 9))
    n0 = int(rng.integers(2, min(6, n_seats) + 1))
    seats = rng.uniform(0, 2.0, size=(n_seats, 2))
    volume = float(rng.uniform(200, 3000))
    params = TransmissionParams(c2=float(rng.uniform(0.005, 0.2)))
    return ClassroomConfig(
        plan=SeatingPlan(seats, "toy", volume),
        n0=n0,
        policy=str(rng.choice(["fixed", "unrestricted"])),
        vax_rate=float(rng.uniform(0.1, 0.95)),
        ve_source=float(rng.choice([0.0, 0.5, 0.71])),
        ve_susceptible=float(rng.choice([0.0, 0.4, 0.88])),
        env=RoomEnvironment(volume, ach=float(rng.choice([0.0, 1.0, 3.0]))),
        params=params,
    )


@pytest.fixture
def toy_config_factory():
    return random_toy_config


ACCEPTANCE_LINES = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
