"""Acceptance suite: one test and one PASS/FAIL line per primary criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the "acceptance criteria" section of the pytest summary.
"""
import itertools
import math
import time

import numpy as np
import pytest

from classrisk.calibration import TrainContactDataset, grid_search_mle, seat_distance
from classrisk.classroom import (ClassroomConfig, SeatingPlan, brute_force_eta, estimate_eta,
                                 generate_seating)
from classrisk.config import from_document
from classrisk.pipeline import run_pipeline
from classrisk.semester import (INFECTIOUS_DAYS, SEMESTER_WEEKS, EtaRow, EtaTable, PopulationModel,
                                PriorSet, run_distribution, sample_draws)
from classrisk.transmission import (RelativePosition, RoomEnvironment, TransmissionParams,
                                    aerosol_prob, dose_response, pair_risk, short_range_dose,
                                    short_range_prob)

from conftest import random_toy_config, record_criterion

REFERENCE_DISTANCES = {
    (0, 1): 0.5, (0, 2): 1.05, (0, 3): 1.6, (0, 4): 2.1, (0, 5): 2.6,
    (1, 0): 0.9, (1, 1): 1.03, (1, 2): 1.38, (1, 3): 1.84, (1, 4): 2.28, (1, 5): 2.75,
    (2, 0): 1.8, (2, 1): 1.87, (2, 2): 2.08, (2, 3): 2.41, (2, 4): 2.77, (2, 5): 3.16,
    (3, 0): 2.7, (3, 1): 2.75, (3, 2): 2.90, (3, 3): 3.14, (3, 4): 3.42, (3, 5): 3.75,
}
DENSITIES = ("fully_dense", "moderate", "distanced")


def check(name, ok, detail):
    record_criterion(name, bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    """Default scenario end to end, with 8 and with 1 worker processes."""
    base = tmp_path_factory.mktemp("runs")
    runs = {}
    for threads in (8, 1):
        config = from_document({"seed": 20210901})
        start = time.perf_counter()
        result = run_pipeline(config, base / f"t{threads}", threads=threads)
        runs[threads] = (result, time.perf_counter() - start)
    again = run_pipeline(from_document({"seed": 20210901}), base / "repeat", threads=8)
    return runs, again


def test_calibration_reproduction():
    start = time.perf_counter()
    fit = grid_search_mle(TrainContactDataset.embedded())
    elapsed = time.perf_counter() - start
    flat = float((fit.surface.max(axis=0) - fit.surface.min(axis=0)).max())
    ok = (abs(fit.c2_hat - 0.0135) <= 1e-4 + 1e-12 and math.isclose(fit.alpha_hat_deg, 15.0)
          and flat < 1e-9 and elapsed < 10)
    check("calibration", ok, f"c2_hat={fit.c2_hat} alpha_hat={fit.alpha_hat_deg:g} deg "
                             f"flatness={flat:.1e} runtime={elapsed:.2f}s")


def test_distance_table():
    errors = {cell: abs(seat_distance(*cell) - d) for cell, d in REFERENCE_DISTANCES.items()}
    worst = max(errors, key=errors.get)
    check("distance table", len(errors) == 23 and errors[worst] <= 0.01,
          f"23 entries, max abs error {errors[worst]:.4f} m at {worst}")


def test_prior_audits():
    pop = PopulationModel()
    draws = sample_draws(PriorSet(), 100_000, seed=1)
    m_lo, m_hi = np.quantile(draws.masking, [0.025, 0.975])
    log_p = np.log(draws.prevalence)
    # back out semester infections from prevalence
    infections = draws.prevalence * pop.n_ug * SEMESTER_WEEKS * 7 / INFECTIOUS_DAYS
    log_n = np.log(infections)
    mode = math.exp(log_n.mean() - log_n.var())
    q975 = float(np.quantile(infections, 0.975))
    ok = (0.74 <= m_lo <= 0.76 and 0.95 <= m_hi <= 0.97 and abs(log_p.mean() + 6.157) <= 0.01
          and abs(mode - 750) <= 10 and abs(q975 - 2000) <= 25)
    check("prior audits", ok, f"m quantiles {m_lo:.4f}/{m_hi:.4f}, log-prevalence mean {log_p.mean():.4f}, "
                              f"infections mode {mode:.1f}, 97.5% quantile {q975:.1f}")


def test_end_to_end_medians(full_runs):
    runs, _ = full_runs
    result, elapsed = runs[8]
    q = {role: d.quantiles for role, d in result.semester.distributions.items()}
    s, f, g = q["student"][1], q["faculty"][1], q["graduate"][1]
    in_range = 0.0025 <= s <= 0.010 and 0.00009 <= f <= 0.00036 and 0.000013 <= g <= 0.00005
    ordering = s > f > g
    skew = all(q[r][2] - q[r][1] > q[r][1] - q[r][0] for r in ("student", "faculty", "graduate"))
    check("end-to-end medians", in_range and ordering and skew and elapsed < 300,
          f"student {100 * s:.4f}% (target 0.51%), faculty {100 * f:.5f}% (target 0.018%), "
          f"graduate {100 * g:.5f}% (target 0.0025%), ordering={ordering}, skew={skew}, "
          f"runtime {elapsed:.1f}s")


def test_oracle_equivalence():
    rng = np.random.default_rng(2021)
    worst, n_ok, n = 0.0, 0, 24
    for i in range(n):
        cfg = random_toy_config(rng)
        exact = brute_force_eta(cfg).eta_student
        est = estimate_eta(cfg, 100_000, seed=i)
        z = abs(est.eta_student - exact) / max(est.eta_student_se, 1e-300)
        good = abs(est.eta_student - exact) <= 3 * est.eta_student_se + 1e-12 * exact
        n_ok += good
        worst = max(worst, z if est.eta_student_se > 0 else 0.0)
    check("oracle equivalence", n_ok == n and n >= 20,
          f"{n_ok}/{n} toy configurations within 3 SE at 1e5 trials, largest |z| = {worst:.2f}")


def _property_failures():
    failures = []
    rng = np.random.default_rng(7)
    params = TransmissionParams()

    d1, d2 = rng.exponential(50, 10_000), rng.exponential(50, 10_000)
    if np.any(dose_response(d1 + d2, 0.01) > dose_response(d1, 0.01) + dose_response(d2, 0.01) + 1e-15):
        failures.append("subadditivity")

    plan = SeatingPlan(np.array([[0, 0], [0.5, 0], [0, -0.5], [0.5, -0.5], [0.25, -1.0], [1, -1]]), "toy", 60.0)
    strong = TransmissionParams(c2=0.2)

    def dose(s, t):
        d = plan.seats[t] - plan.seats[s]
        return short_range_dose(RelativePosition.from_offset(d[0], d[1]), 1.0, strong)

    for t in range(plan.n_seats):
        others = [s for s in range(plan.n_seats) if s != t]
        pairs = list(itertools.permutations(others, 2))
        first = np.mean([dose_response(dose(a, t)) for a, _ in pairs])
        second = np.mean([dose_response(dose(a, t) + dose(b, t)) - dose_response(dose(a, t)) for a, b in pairs])
        if second > first + 1e-15:
            failures.append(f"second source at seat {t}")

    r = np.linspace(0.01, 12, 400)
    for theta in np.linspace(-math.pi, math.pi, 73):
        p = short_range_prob(RelativePosition(r, np.full_like(r, theta)), 1.0, params)
        if np.any(np.diff(p) > 0):
            failures.append("short-range monotone in r")
        mirror = short_range_prob(RelativePosition(r, np.full_like(r, math.pi - theta)), 1.0, params)
        if not np.allclose(p, mirror, rtol=1e-12, atol=0):
            failures.append("mirror symmetry")
    behind = np.linspace(-math.pi / 2 + 1e-3, -params.alpha - 1e-6, 50)
    if np.any(short_range_prob(RelativePosition(np.ones(50), behind), 1.0, params) != 0):
        failures.append("zero outside cone")

    env = RoomEnvironment(300.0)
    silent = params.replace(c2=0.0)
    vals = {pair_risk(RelativePosition(float(a), float(b)), env, silent, False, False)
            for a, b in zip(rng.uniform(0.1, 10, 50), rng.uniform(-math.pi, math.pi, 50))}
    if len(vals) != 1:
        failures.append("aerosol position invariance")

    p0, p1, p3 = (aerosol_prob(RoomEnvironment(300.0, a), params) for a in (0, 1, 3))
    if not p0 > p1 > p3:
        failures.append("ventilation ordering")

    dense = generate_seating("fully_dense")
    etas = [estimate_eta(ClassroomConfig(dense, ve_source=s, ve_susceptible=t, vax_rate=v), 500, 4).eta_student
            for s, t, v in ((0, 0.4, 0.9), (0.5, 0.4, 0.9), (0.5, 0.66, 0.9), (0.5, 0.66, 0.95), (0.71, 0.88, 1.0))]
    if any(a < b for a, b in zip(etas, etas[1:])):
        failures.append("eta monotone in VE and vax_rate")
    by_density = [estimate_eta(ClassroomConfig(generate_seating(d), ve_source=0.5, ve_susceptible=0.4), 500, 4)
                  .eta_student for d in DENSITIES]
    if not by_density[0] > by_density[1] > by_density[2]:
        failures.append("eta monotone in distancing")

    table = EtaTable(EtaRow("fully_dense", s, t, 0.01, 0.001, 0.002) for s, t in PriorSet().ve_pairs())
    risks = [run_distribution(table, "fully_dense", 20_000, 3, population=PopulationModel(beta_masked=b))
             .distributions["student"].samples for b in (0.0, 0.5, 1.0)]
    if any(np.any(a < b) for a, b in zip(risks, risks[1:])):
        failures.append("risk monotone in beta_masked")
    return failures


def test_property_suites():
    failures = _property_failures()
    check("property suites", not failures, "all properties hold" if not failures else ", ".join(failures))


def test_policy_comparison():
    plan = generate_seating("fully_dense")
    rates = np.round(np.arange(0.4, 1.0001, 0.1), 2)
    gaps, rel_09 = [], None
    for v in rates:
        base = ClassroomConfig(plan, policy="fixed", vax_rate=float(v), ve_source=0.5, ve_susceptible=0.4)
        fixed = estimate_eta(base, 500, seed=11).eta_student
        free = estimate_eta(base.replace(policy="unrestricted"), 500, seed=11).eta_student
        gaps.append(abs(free - fixed) / fixed)
        if math.isclose(v, 0.9):
            rel_09 = gaps[-1]
    slope = float(np.polyfit(rates, gaps, 1)[0])
    ok = rel_09 < 0.25 and slope <= 1e-12 and gaps[-1] <= gaps[0]
    check("policy comparison", ok, f"relative gap at vax 0.9 = {rel_09:.4f}, "
                                   f"gap slope over vax_rate = {slope:.2e}, gaps {np.round(gaps, 4).tolist()}")


def test_determinism(full_runs):
    runs, again = full_runs
    names = sorted(p.name for p in runs[8][0].out_dir.iterdir() if p.is_file())
    differ = [n for n in names
              if not ((runs[8][0].out_dir / n).read_bytes() == (runs[1][0].out_dir / n).read_bytes()
                      == (again.out_dir / n).read_bytes())]
    check("determinism", not differ and len(names) >= 6,
          f"{len(names)} output files compared across threads 1/8 and a repeat run; differing: {differ or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
