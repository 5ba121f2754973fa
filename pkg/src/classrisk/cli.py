"""
Command-line entry point.

    classrisk run --scenario s.toml --seed 7 --out results/
    classrisk report --out results/

Options may also come from ``CLASSRISK_SCENARIO``, ``CLASSRISK_SEED``,
``CLASSRISK_OUT``, ``CLASSRISK_THREADS`` and ``CLASSRISK_FORMAT``; flags win.
Exit status is 0 on success. On failure one JSON line
``{"error": category, "stage": ..., "message": ...}`` goes to stderr and the
status identifies the category.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .config import from_document, parse_scenario
from .errors import ClassriskError, ConfigError, StageError
from .pipeline import FORMATS, STAGES, replay, run_pipeline
from .report import render_report

EXIT_CODES = {"internal": 1, "config": 2, "domain": 3, "degenerate_input": 4, "io": 5}
ENV_PREFIX = "CLASSRISK_"

COMMAND_STAGES = {
    "calibrate": ("calibrate",),
    "simulate-classroom": ("stage1",),
    "project-semester": ("stage2",),
    "run": STAGES,
}


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _int_env(name):
    value = _env(name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{name} must be an integer, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classrisk", description="Classroom infection-risk simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("calibrate", "fit c2 and alpha on the train contact data"),
                            ("simulate-classroom", "stage 1: per-hour conditional risk table"),
                            ("project-semester", "stage 2: semester risk distributions"),
                            ("run", "all stages")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", help="TOML scenario file (default: built-in defaults)")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker processes for stage 1")
        p.add_argument("--format", choices=FORMATS, help="table format (default csv)")
        if name == "run":
            p.add_argument("--from-manifest", metavar="PATH",
                           help="rerun exactly what a manifest records; --scenario and --seed are ignored")
    p = sub.add_parser("report", help="render tables and SVG histograms from a run directory")
    p.add_argument("--out", help="run directory")
    return parser


def _execute(args) -> int:
    out = args.out or _env("OUT")
    if args.command == "report":
        if out is None:
            raise ConfigError("report needs --out (or CLASSRISK_OUT)")
        sys.stdout.write(render_report(out))
        return 0

    threads = args.threads if args.threads is not None else (_int_env("THREADS") or 1)
    fmt = args.format or _env("FORMAT", "csv")
    if getattr(args, "from_manifest", None):
        result, mismatched = replay(args.from_manifest, out, threads, fmt)
        for name in mismatched:
            print(f"differs from manifest: {name}", file=sys.stderr)
        print(result.out_dir)
        return 0 if not mismatched else EXIT_CODES["internal"]

    seed = args.seed if args.seed is not None else _int_env("SEED")
    scenario = args.scenario or _env("SCENARIO")
    config = parse_scenario(scenario, seed) if scenario else from_document({}, seed)
    result = run_pipeline(config, out, threads, COMMAND_STAGES[args.command], fmt)
    if result.semester is not None:
        for role, s in result.semester.summary().items():
            print(f"{role:<22} median {100 * s['q50']:.4f}%  "
                  f"[{100 * s['q05']:.4f}%, {100 * s['q95']:.4f}%]")
    elif result.calibration is not None and args.command == "calibrate":
        print(f"c2_hat {result.calibration['c2_hat']}  alpha_hat {result.calibration['alpha_hat_deg']} deg")
    print(result.out_dir)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _execute(args)
    except ClassriskError as exc:
        stage = exc.stage if isinstance(exc, StageError) else None
        message = str(exc.cause) if isinstance(exc, StageError) else str(exc)
        category = exc.category
    except OSError as exc:
        stage, message, category = None, str(exc), "io"
    print(json.dumps({"error": category, "stage": stage, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
