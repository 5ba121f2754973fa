import math

import numpy as np
import pytest

from classrisk.calibration import (TrainContactDataset, binomial_loglik, default_alpha_grid,
                                   default_c2_grid, fraction_in_cone, grid_search_mle,
                                   in_cone_infection_prob, log_likelihood, seat_distance,
                                   threshold_angle)
from classrisk.errors import ConfigError, DomainError
from classrisk.transmission import RelativePosition, TransmissionParams, short_range_prob

REFERENCE_DISTANCES = [
    [None, 0.5, 1.05, 1.6, 2.1, 2.6],
    [0.9, 1.03, 1.38, 1.84, 2.28, 2.75],
    [1.8, 1.87, 2.08, 2.41, 2.77, 3.16],
    [2.7, 2.75, 2.90, 3.14, 3.42, 3.75],
]


@pytest.fixture(scope="module")
def data():
    return TrainContactDataset.embedded()


@pytest.fixture(scope="module")
def fit(data):
    return grid_search_mle(data)


def test_embedded_counts(data):
    assert data.contacts[0, 1] == 2605 and data.positives[0, 1] == 92
    assert data.contacts[3, 5] == 1589 and data.positives[3, 5] == 1
    assert data.contacts[0, 0] == 0
    assert int(data.contacts.sum()) == 71531
    assert int(data.positives.sum()) == 227
    assert len(list(data.cells())) == 23


def test_dataset_validation():
    contacts = np.ones((4, 6), dtype=int)
    positives = np.zeros((4, 6), dtype=int)
    positives[1, 1] = 2
    with pytest.raises(ConfigError):
        TrainContactDataset(contacts, positives)


def test_csv_round_trip(tmp_path, data):
    path = tmp_path / "train.csv"
    data.to_csv(path)
    again = TrainContactDataset.from_csv(path)
    np.testing.assert_array_equal(again.contacts, data.contacts)
    np.testing.assert_array_equal(again.positives, data.positives)


@pytest.mark.parametrize("x", range(4))
@pytest.mark.parametrize("y", range(6))
def test_distance_table(x, y):
    expected = REFERENCE_DISTANCES[x][y]
    if expected is None:
        with pytest.raises(DomainError):
            seat_distance(x, y)
    else:
        assert seat_distance(x, y) == pytest.approx(expected, abs=0.01)


def test_threshold_and_fraction():
    assert threshold_angle(1, 0) == pytest.approx(math.pi / 2)
    assert threshold_angle(0, 3) == 0.0
    smallest = min(threshold_angle(x, y) for x in range(1, 4) for y in range(6))
    assert math.degrees(smallest) == pytest.approx(19.09, abs=0.01)
    # same row: always in the cone; directly behind/ahead: in the cone only for a wide alpha
    assert fraction_in_cone(0, 2, 0.0) == 1.0
    assert fraction_in_cone(1, 0, math.radians(15)) == 0.5
    assert fraction_in_cone(1, 0, math.pi / 2) == 1.0


def test_in_cone_prob_matches_transmission_model():
    # hand evaluation: phi(0.5) = 0.558845, exponent 0.0135 * 1.11769 * 0.8 * 2.1
    assert in_cone_infection_prob(0, 1, 2.1, 0.0135) == pytest.approx(0.0250305, abs=1e-6)
    assert in_cone_infection_prob(1, 1, 2.1, 0.0135) == pytest.approx(0.0093722, abs=1e-6)  # exact distance 1.02956
    expected = short_range_prob(RelativePosition(seat_distance(1, 1), math.pi / 2), 2.1,
                                TransmissionParams(c2=0.0135), apply_calib_mask=True)
    assert in_cone_infection_prob(1, 1, 2.1, 0.0135) == pytest.approx(expected, rel=1e-12)


def test_binomial_loglik_edges():
    assert binomial_loglik(0, 10, 0.0) == 0.0
    assert binomial_loglik(1, 10, 0.0) == -math.inf
    assert binomial_loglik(3, 10, 0.3) == pytest.approx(3 * math.log(0.3) + 7 * math.log(0.7))


def test_grids():
    a = default_alpha_grid()
    c = default_c2_grid()
    assert len(a) == 16 and math.degrees(a[-1]) == pytest.approx(15)
    assert len(c) == 500 and 0.0135 in c and c[0] == 1e-4 and c[-1] == 0.05


def test_mle(fit):
    assert fit.c2_hat == pytest.approx(0.0135, abs=1e-4)
    assert fit.alpha_hat_deg == pytest.approx(15.0)
    assert fit.loglik == pytest.approx(np.max(fit.surface))


def test_likelihood_flat_below_threshold(fit):
    # every alpha on the default grid lies below the smallest threshold angle
    spread = fit.surface.max(axis=0) - fit.surface.min(axis=0)
    assert spread.max() < 1e-9


def test_likelihood_rises_past_threshold(data):
    below = log_likelihood(data, math.radians(15), 0.0135)
    above = log_likelihood(data, math.radians(25), 0.0135)
    assert above != below


def test_reference_point_is_near_max(fit):
    i = len(fit.alpha_grid) - 1
    j = int(np.argmin(np.abs(fit.c2_grid - 0.0135)))
    ll = fit.surface[i, j]
    # the reference optimum sits within one grid step of the grid maximum
    far = np.abs(fit.c2_grid - 0.0135) > 1.5e-4
    assert np.all(fit.surface[:, far] <= ll)
    assert fit.loglik - ll < 0.01


def test_surface_csv(tmp_path, fit):
    path = tmp_path / "surface.csv"
    fit.write_surface(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha_deg,c2,loglik"
    assert len(lines) == 1 + fit.surface.size


def test_empty_grid(data):
    with pytest.raises(ConfigError):
        grid_search_mle(data, alpha_grid=[], c2_grid=[0.01])


def test_tie_break_prefers_largest_alpha(data):
    res = grid_search_mle(data, alpha_grid=np.radians([0, 5, 10]), c2_grid=[0.0135])
    assert res.alpha_hat_deg == pytest.approx(10)
