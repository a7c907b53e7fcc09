"""Command-line entry point: ``dtc run``, ``dtc sweep`` and ``dtc validate``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from floquet_dtc import meanfield, quantum
from floquet_dtc.config import GRID_KEYS, ConfigError, RunConfig, load_config, load_grid
from floquet_dtc.diagnostics import TRAJECTORY_COLUMNS, StroboscopicRecord, dtc_report
from floquet_dtc.integrator import IntegrationError
from floquet_dtc.model import OBSERVABLE_NAMES, ParameterError, critical_coupling

log = logging.getLogger("floquet_dtc")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

TRAJECTORY_HEADER = ",".join(TRAJECTORY_COLUMNS)
STROBOSCOPIC_HEADER = ",".join(("n", "t") + OBSERVABLE_NAMES)
SWEEP_HEADER = ",".join(
    ("cell",) + GRID_KEYS + ("subharmonic_weight", "lifetime_periods", "classification", "error")
)

_number = {"type": "number"}
_nullable_number = {"type": ["number", "null"]}
_vector5 = {"type": "array", "items": _number, "minItems": 5, "maxItems": 5}

#: JSON schema every ``report.json`` validates against.
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "dtc run report",
    "type": "object",
    "required": [
        "mode", "truncated", "error", "n_periods_completed", "subharmonic_weight",
        "lifetime_periods", "classification", "classification_residual",
        "decay_time_periods", "transient_dtc", "lambda_c", "mu", "attractors",
        "quantum", "config",
    ],
    "properties": {
        "mode": {"enum": ["meanfield", "quantum"]},
        "truncated": {"type": "boolean"},
        "error": {"type": ["string", "null"]},
        "n_periods_completed": {"type": "integer", "minimum": 0},
        "subharmonic_weight": {"type": "number", "minimum": 0, "maximum": 1},
        "lifetime_periods": {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "Infinite"}]},
        "classification": {
            "enum": ["TrivialUp", "TrivialDown", "NontrivialPlus", "NontrivialMinus",
                     "Oscillating", "Unclassified"],
        },
        "classification_residual": _number,
        "decay_time_periods": {
            "type": "object",
            "required": ["gamma", "Gamma"],
            "properties": {"gamma": _nullable_number, "Gamma": _nullable_number},
        },
        "transient_dtc": {"type": "boolean"},
        "lambda_c": _number,
        "mu": _nullable_number,
        "attractors": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["plus", "minus", "residual"],
                    "properties": {"plus": _vector5, "minus": _vector5, "residual": _number},
                },
            ]
        },
        "quantum": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["max_top_fock_population", "max_trace_drift", "min_eigenvalue",
                                 "warnings"],
                    "properties": {
                        "max_top_fock_population": _number,
                        "max_trace_drift": _number,
                        "min_eigenvalue": _number,
                        "warnings": {"type": "array", "items": {"type": "string"}},
                    },
                },
            ]
        },
        "config": {"type": "object", "required": ["mode"]},
    },
}


@dataclass
class Outcome:
    times: np.ndarray
    trajectory: np.ndarray
    record: StroboscopicRecord
    report: dict
    error: str | None = None


def _float_list(a) -> list:
    return [float(v) for v in a]


def execute(cfg: RunConfig) -> Outcome:
    """Run one configuration in memory; integration failures yield a truncated outcome."""
    params = cfg.params
    error, extra = None, None
    if cfg.mode == "meanfield":
        try:
            run = meanfield.run_floquet(params, cfg.protocol, None, cfg.steps_per_period,
                                        cfg.record_stride)
        except IntegrationError as err:
            run, error = err.partial, str(err)
        times, traj = run.times, run.states
    else:
        qcfg = quantum.QuantumConfig(params, n_max=cfg.n_max, alpha=cfg.alpha,
                                     truncation_abort=cfg.truncation_abort)
        try:
            run = quantum.propagate_floquet(qcfg, cfg.protocol, cfg.steps_per_period,
                                            cfg.record_stride)
        except IntegrationError as err:
            run, error = err.partial, str(err)
        times, traj = run.times, run.observables
        extra = {
            "max_top_fock_population": run.max_top_population,
            "max_trace_drift": run.max_trace_drift,
            "min_eigenvalue": float(np.min(run.min_eigenvalues)),
            "warnings": list(run.warnings),
        }

    record = run.record
    cls = meanfield.classify_steady_state(record.values[-1], params, samples=record.jx)
    report = dtc_report(record, params.gamma, params.Gamma, cls)

    lam_c = critical_coupling(params)
    mu = (lam_c / params.lam) ** 2 if params.lam > 0 else None
    attractors = None
    if params.h == 0 and params.lam > 0:
        att = meanfield.stable_attractors(params, validate=False)
        if att is not None:
            attractors = {"plus": _float_list(att.plus), "minus": _float_list(att.minus),
                          "residual": att.residual}

    doc = {
        "mode": cfg.mode,
        "truncated": error is not None,
        "error": error,
        "n_periods_completed": int(record.n[-1]),
    }
    doc.update(report.as_dict())
    doc.update(lambda_c=lam_c, mu=mu, attractors=attractors, quantum=extra, config=cfg.echo())
    return Outcome(times, traj, record, doc, error)


def _fmt(v) -> str:
    return repr(float(v))


def write_outputs(outcome: Outcome, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for t, row in zip(outcome.times, outcome.trajectory):
            fh.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")
    rec = outcome.record
    with open(out_dir / "stroboscopic.csv", "w", newline="") as fh:
        fh.write(STROBOSCOPIC_HEADER + "\n")
        for n, t, row in zip(rec.n, rec.t, rec.values):
            fh.write(",".join([str(int(n)), _fmt(t)] + [_fmt(v) for v in row]) + "\n")
    with open(out_dir / "report.json", "w") as fh:
        json.dump(outcome.report, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _config_error_for_parameter(cfg: RunConfig, err: ParameterError) -> ConfigError:
    # the only run-time parameter rejection is an inadequate photon truncation
    return ConfigError(str(err), cfg.source, cfg.lines.get("n_max"))


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = execute(cfg)
    except ParameterError as err:
        print(f"error: {_config_error_for_parameter(cfg, err)}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = cfg.resolved_output_dir()
    write_outputs(outcome, out_dir)
    r = outcome.report
    print(f"wrote {out_dir}: weight={r['subharmonic_weight']:.4f} "
          f"lifetime={r['lifetime_periods']} classification={r['classification']}")
    if outcome.error is not None:
        print(f"error: run aborted: {outcome.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _sweep_cell(job) -> list:
    index, cfg, cell = job
    values = [str(index)] + [_fmt(cell.get(k, getattr(cfg.params, k))) for k in GRID_KEYS]
    try:
        outcome = execute(cfg.with_params(**cell))
    except (ParameterError, ValueError) as err:
        return values + ["", "", "", str(err)]
    r = outcome.report
    return values + [
        _fmt(r["subharmonic_weight"]),
        str(r["lifetime_periods"]),
        r["classification"],
        outcome.error or "",
    ]


def _csv_field(text: str) -> str:
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        cells = load_grid(args.grid)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    jobs = args.jobs or os.cpu_count() or 1
    if jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    work = [(i, cfg, cell) for i, cell in enumerate(cells)]
    if jobs == 1 or len(work) <= 1:
        rows = [_sweep_cell(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, work))
    out_dir = cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_csv_field(v) for v in row) + "\n")
    failed = sum(1 for row in rows if row[-1])
    print(f"wrote {out_dir / 'sweep.csv'}: {len(rows)} cells, {failed} failed")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    p = cfg.params
    print(f"ok: mode={cfg.mode} N={p.n_spins} lambda={p.lam!r} lambda_c={critical_coupling(p)!r} "
          f"n_periods={cfg.n_periods} steps_per_period={cfg.steps_per_period}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtc", description="Floquet-driven dissipative spin-cavity time-crystal simulations."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration and write CSV/JSON outputs")
    p_run.add_argument("config", help="key = value config file")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid and write sweep.csv")
    p_sweep.add_argument("config", help="base config file")
    p_sweep.add_argument("--grid", required=True, help="grid file (key = v1, v2, ...)")
    p_sweep.add_argument("--jobs", type=int, default=None,
                         help="parallel worker processes (default: available cores)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a config file without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
