"""
Run orchestration: calibration, stage 1, stage 2, artefacts and manifest.

Output files (all inside the run directory):

``calibration.json``
    ``c2_hat``, ``alpha_hat`` (rad), ``alpha_hat_deg``, ``loglik``, grid sizes
    and ``inputs_hash`` (hash of the grid settings the fit was computed on).
``calibration_surface.csv``
    ``alpha_deg, c2, loglik``: the full log-likelihood grid.
``stage1_eta.csv`` / ``stage1_eta.json``
    One record per (density, VE pair): ``density, ve_source,
    ve_susceptible, eta_student, eta_instructor,
    eta_instructor_unvaccinated, replications``. ``eta_instructor`` is for a
    vaccinated instructor.
``stage2_samples.csv`` / ``stage2_samples.json``
    ``draw_id, role, risk``: semester infection risk of every role for every
    prior draw.
``summary.json``
    ``role -> {q05, q50, q95, mean, n_samples}`` plus the density and the
    stage-1 eta values used.
``manifest.json``
    Seed, normalised scenario, parameter hash and library versions, plus
    the sha256 of every output with a ``valid`` flag per stage. The manifest
    holds no timestamps or host details, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
import typing

import numpy as np
import scipy

from . import __version__
from .calibration import CalibrationResult, TrainContactDataset, grid_search_mle
from .classroom import ClassroomConfig, estimate_eta
from .config import ScenarioConfig, canonical_json, from_document
from .errors import ConfigError, StageError
from .semester import ROLES, EtaRow, EtaTable, SemesterResult, run_distribution
from .transmission import TransmissionParams

STAGES = ("calibrate", "stage1", "stage2")
ETA_COLUMNS = ("density", "ve_source", "ve_susceptible", "eta_student", "eta_instructor",
               "eta_instructor_unvaccinated", "replications")
FORMATS = ("csv", "json")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _calibration_hash(config: ScenarioConfig) -> str:
    cal = config.calibration
    return hashlib.sha256(canonical_json([cal.alpha_max_deg, cal.alpha_step_deg, cal.c2_min,
                                          cal.c2_max, cal.c2_step]).encode()).hexdigest()


def calibrate(config: ScenarioConfig) -> CalibrationResult:
    return grid_search_mle(TrainContactDataset.embedded(), config.calibration.alpha_grid(),
                           config.calibration.c2_grid())


def write_calibration(result: CalibrationResult, config: ScenarioConfig, out: Path) -> list:
    doc = result.to_dict()
    doc["inputs_hash"] = _calibration_hash(config)
    _write_json(out / "calibration.json", doc)
    result.write_surface(out / "calibration_surface.csv")
    return ["calibration.json", "calibration_surface.csv"]


def load_calibration(config: ScenarioConfig, out: Path) -> typing.Optional[dict]:
    """Cached fit from ``out`` if it was computed on the same grids."""
    path = out / "calibration.json"
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    return doc if doc.get("inputs_hash") == _calibration_hash(config) else None


def model_params(config: ScenarioConfig, fit: typing.Optional[dict]) -> TransmissionParams:
    if config.use_calibration and fit is not None:
        return config.transmission.replace(c2=fit["c2_hat"], alpha=fit["alpha_hat"])
    return config.transmission


def _eta_job(job):
    config, params, density, ve_source, ve_susceptible = job
    plan = config.seating_plan(density)
    cc = ClassroomConfig(plan, config.population.n0, config.seating_policy,
                         config.population.vax_rate, ve_source, ve_susceptible,
                         config.environment(plan), params)
    est = estimate_eta(cc, config.replications, config.seed)
    return EtaRow(density, ve_source, ve_susceptible, est.eta_student, est.eta_instructor,
                  est.eta_instructor_unvaccinated, est.replications)


def build_eta_table(config: ScenarioConfig, params: TransmissionParams, threads: int = 1) -> EtaTable:
    """Stage 1 over every density and every VE pair in the priors' support."""
    jobs = [(config, params, d, s, t) for d in config.densities for s, t in config.priors.ve_pairs()]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_eta_job, jobs))
    else:
        rows = [_eta_job(job) for job in jobs]
    return EtaTable(rows)


def _eta_record(row: EtaRow) -> dict:
    return {name: getattr(row, name) for name in ETA_COLUMNS}


def write_eta_table(table: EtaTable, out: Path, fmt: str = "csv") -> str:
    if fmt == "json":
        name = "stage1_eta.json"
        _write_json(out / name, [_eta_record(r) for r in table.rows])
        return name
    name = "stage1_eta.csv"
    with open(out / name, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ETA_COLUMNS)
        for r in table.rows:
            writer.writerow([r.density, repr(r.ve_source), repr(r.ve_susceptible), repr(r.eta_student),
                             repr(r.eta_instructor), repr(r.eta_instructor_unvaccinated), r.replications])
    return name


def load_eta_table(out: Path) -> EtaTable:
    if (out / "stage1_eta.csv").exists():
        with open(out / "stage1_eta.csv", newline="") as fh:
            records = list(csv.DictReader(fh))
    elif (out / "stage1_eta.json").exists():
        records = json.loads((out / "stage1_eta.json").read_text())
    else:
        raise ConfigError(f"no stage-1 table in {out}; run simulate-classroom first")
    try:
        return EtaTable(EtaRow(r["density"], float(r["ve_source"]), float(r["ve_susceptible"]),
                               float(r["eta_student"]), float(r["eta_instructor"]),
                               float(r["eta_instructor_unvaccinated"]), int(r["replications"]))
                        for r in records)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed stage-1 table in {out}: {exc}") from None


def write_samples(result: SemesterResult, out: Path, fmt: str = "csv") -> str:
    n = len(result.draws)
    if fmt == "json":
        name = "stage2_samples.json"
        _write_json(out / name, {role: result.distributions[role].samples.tolist() for role in ROLES})
        return name
    name = "stage2_samples.csv"
    with open(out / name, "w") as fh:
        fh.write("draw_id,role,risk\n")
        for role in ROLES:
            samples = result.distributions[role].samples
            fh.writelines(f"{i},{role},{float(samples[i])!r}\n" for i in range(n))
    return name


def load_samples(out: Path) -> dict:
    """``role -> samples`` from whichever sample file is present."""
    if (out / "stage2_samples.csv").exists():
        samples = {}
        with open(out / "stage2_samples.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                samples.setdefault(rec["role"], []).append(float(rec["risk"]))
        return {k: np.array(v) for k, v in samples.items()}
    if (out / "stage2_samples.json").exists():
        return {k: np.array(v) for k, v in json.loads((out / "stage2_samples.json").read_text()).items()}
    raise ConfigError(f"no stage-2 samples in {out}; run project-semester first")


def versions() -> dict:
    return {"classrisk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    eta_table: typing.Optional[EtaTable] = None
    semester: typing.Optional[SemesterResult] = None
    calibration: typing.Optional[dict] = None


def _load_manifest(path: Path) -> dict:
    return json.loads(path.read_text()) if path.exists() else {}


def run_pipeline(config: ScenarioConfig, out_dir=None, threads: int = 1, stages=STAGES,
                 fmt: str = "csv") -> RunResult:
    """Run the requested stages in order, writing artefacts and the manifest.

    Stages not requested are taken from earlier outputs in ``out_dir``. A
    failing stage is recorded as invalid in the manifest before the error
    propagates as :class:`StageError`.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    out = Path(out_dir or config.output_dir or "classrisk-out")
    out.mkdir(parents=True, exist_ok=True)

    previous = _load_manifest(out / "manifest.json")
    stage_records = previous.get("stages", {}) if previous.get("param_hash") == config.param_hash() else {}
    manifest = {
        "tool": "classrisk",
        "versions": versions(),
        "seed": config.seed,
        "param_hash": config.param_hash(),
        "config": config.document,
        "stages": stage_records,
    }
    result = RunResult(out, manifest)

    def record(stage, files, valid=True, error=None):
        entry = {"valid": valid, "outputs": {f: sha256_file(out / f) for f in files if (out / f).exists()}}
        if error is not None:
            entry["error"] = error
        stage_records[stage] = entry

    def finish():
        manifest["stages"] = dict(sorted(stage_records.items()))
        manifest["valid"] = all(s["valid"] for s in stage_records.values())
        _write_json(out / "manifest.json", manifest)

    current = None
    try:
        current = "calibrate"
        if "calibrate" in stages:
            fit = calibrate(config)
            record(current, write_calibration(fit, config, out))
            result.calibration = load_calibration(config, out)
        else:
            result.calibration = load_calibration(config, out)
            if result.calibration is None and config.use_calibration and "stage1" in stages:
                record(current, write_calibration(calibrate(config), config, out))
                result.calibration = load_calibration(config, out)
        params = model_params(config, result.calibration)

        current = "stage1"
        if "stage1" in stages:
            result.eta_table = build_eta_table(config, params, threads)
            record(current, [write_eta_table(result.eta_table, out, fmt)])
        elif "stage2" in stages:
            current = "stage2"
            result.eta_table = load_eta_table(out)

        current = "stage2"
        if "stage2" in stages:
            result.semester = run_distribution(result.eta_table, config.density, config.n_samples,
                                               config.seed, config.priors, config.population,
                                               config.linearized)
            samples_file = write_samples(result.semester, out, fmt)
            _write_json(out / "summary.json", summary_document(config, result, params))
            record(current, [samples_file, "summary.json"])
    except Exception as exc:
        record(current, [], valid=False, error=f"{type(exc).__name__}: {exc}")
        finish()
        raise StageError(current, exc) from exc
    finish()
    return result


def summary_document(config: ScenarioConfig, result: RunResult, params: TransmissionParams) -> dict:
    etas = [_eta_record(r) for r in result.eta_table.rows]
    return {
        "density": config.density,
        "seating_policy": config.seating_policy,
        "c2": params.c2,
        "alpha_deg": round(float(np.degrees(params.alpha)), 10),
        "roles": result.semester.summary(),
        "stage1": etas,
    }


def replay(manifest_path, out_dir=None, threads: int = 1, fmt: str = "csv") -> tuple:
    """Rerun from a manifest alone; returns the new result and the files whose hashes differ."""
    manifest = json.loads(Path(manifest_path).read_text())
    if "config" not in manifest:
        raise ConfigError(f"{manifest_path} is not a run manifest")
    config = from_document(dict(manifest["config"]))
    stages = [s for s in STAGES if manifest.get("stages", {}).get(s, {}).get("valid")] or list(STAGES)
    result = run_pipeline(config, out_dir, threads, stages, fmt)
    expected = {f: h for s in manifest.get("stages", {}).values() for f, h in s.get("outputs", {}).items()}
    actual = {f: h for s in result.manifest["stages"].values() for f, h in s.get("outputs", {}).items()}
    mismatched = sorted(f for f, h in expected.items() if actual.get(f) != h)
    return result, mismatched
