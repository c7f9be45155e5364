"""Command-line entry point: ``paneldpd {simulate,fit,tune,gof,benchmark}``.

Data files are plain comma-separated text::

    #schedule: 0.01,0.35,0.69,1.12
    #layout: interval-major,event-minor
    1,0,0,1,0,0,0
    2,...

one row per subject (id, then the ``2k`` counts ``n11, n21, n12, n22, ...``).

Every command writes ``<stem>.json`` (machine readable, sorted keys) and
``<stem>.txt`` (a plain table).  Reports carry no timestamps, paths or
thread counts, so a re-run with the same inputs and seed reproduces them
byte for byte whatever ``--threads`` is.

A ``--config`` file is a flat JSON object whose keys are the long option
names with dashes replaced by underscores; flags given on the command line
override it.  ``PANELDPD_OUTPUT_DIR`` sets the directory for reports when
``--output`` is not given.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .asymptotics import SingularInformationError, sigma_restricted
from .constraints import ConstraintSet, evaluate_h
from .gof import bootstrap_pvalue
from .model import PARAM_NAMES, CapacityError, ModelParams, ObservationSchedule, PanelDataset
from .scp import InfeasibleSubproblemError, ScpConfig
from .simulate import (
    DEFAULT_SCHEDULE,
    DEFAULT_THETA,
    EstimatorSpec,
    SimConfig,
    fit_estimator,
    run_replications,
    simulate_dataset,
)
from .tuning import DEFAULT_PILOTS, FitCache, GammaGrid, compare_selectors, gsm_select, iwj_select

log = logging.getLogger("paneldpd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUTPUT_ENV = "PANELDPD_OUTPUT_DIR"
LAYOUT = "interval-major,event-minor"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


NUMERIC_ERRORS = (SingularInformationError, InfeasibleSubproblemError, CapacityError, np.linalg.LinAlgError,
                  ArithmeticError)


# ------------------------------------------------------------------ #
# Data files
# ------------------------------------------------------------------ #


def format_dataset(data: PanelDataset) -> str:
    lines = [
        "#schedule: " + ",".join(repr(float(t)) for t in data.schedule.taus),
        "#layout: " + LAYOUT,
    ]
    lines += [f"{sid}," + ",".join(str(int(c)) for c in row) for sid, row in zip(data.subject_ids, data.counts)]
    return "\n".join(lines) + "\n"


def write_dataset(path, data: PanelDataset) -> None:
    Path(path).write_text(format_dataset(data))


def parse_dataset(text: str, source: str = "<data>") -> PanelDataset:
    """Parse the documented text format; errors name the offending line."""
    schedule, layout, rows, ids = None, None, [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            key = key.strip().lower()
            if key == "schedule":
                try:
                    schedule = ObservationSchedule(tuple(float(v) for v in value.split(",")))
                except ValueError as exc:
                    raise DataError(f"{source}:{lineno}: bad schedule ({exc})") from exc
            elif key == "layout":
                layout = value.strip().replace(" ", "")
                if layout != LAYOUT:
                    raise DataError(f"{source}:{lineno}: unsupported layout {value.strip()!r}, expected {LAYOUT!r}")
            continue
        if schedule is None:
            raise DataError(f"{source}:{lineno}: data row before the #schedule header")
        fields = [f.strip() for f in line.split(",")]
        want = 1 + schedule.n_cells
        if len(fields) != want:
            raise DataError(f"{source}:{lineno}: expected {want} fields (id + {schedule.n_cells} counts), got {len(fields)}")
        try:
            counts = [int(f) for f in fields[1:]]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: counts must be integers ({exc})") from exc
        if any(c < 0 for c in counts):
            raise DataError(f"{source}:{lineno}: counts must be nonnegative")
        if "," in fields[0] or not fields[0]:
            raise DataError(f"{source}:{lineno}: empty subject id")
        ids.append(fields[0])
        rows.append(counts)
    if len(set(ids)) != len(ids):
        raise DataError(f"{source}: duplicate subject ids")
    if schedule is None:
        raise DataError(f"{source}: missing #schedule header")
    if layout is None:
        raise DataError(f"{source}: missing #layout header")
    if not rows:
        raise DataError(f"{source}: no subjects")
    return PanelDataset(schedule, np.array(rows, dtype=np.int64), tuple(ids))


def read_dataset(path) -> PanelDataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_dataset(text, str(path))


def read_constraints(path) -> ConstraintSet:
    """An ``r x 5`` whitespace or comma separated table; ``#`` starts a comment."""
    rows = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].replace(",", " ").split()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if len(rows[-1]) != len(PARAM_NAMES):
            raise DataError(f"{path}:{lineno}: expected {len(PARAM_NAMES)} numbers, got {len(rows[-1])}")
    try:
        return ConstraintSet(np.array(rows).reshape(-1, len(PARAM_NAMES)))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# ------------------------------------------------------------------ #
# Reports
# ------------------------------------------------------------------ #


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def format_table(header, rows) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(v) for v in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in body)) if body else len(str(h)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*r) for r in body]
    return "\n".join(out) + "\n"


def _output_stem(args, default_name: str) -> Path:
    if args.output:
        stem = Path(args.output)
    else:
        stem = Path(os.environ.get(OUTPUT_ENV, ".")) / default_name
    stem.parent.mkdir(parents=True, exist_ok=True)
    return stem


def write_report(stem: Path, report: dict, text: str) -> None:
    stem.with_suffix(".json").write_text(dump_json(report))
    stem.with_suffix(".txt").write_text(text)
    log.info("wrote %s.{json,txt}", stem)


def _theta_rows(labels_values) -> list:
    return [[name] + [float(v) for v in vals] for name, vals in labels_values]


# ------------------------------------------------------------------ #
# Argument helpers
# ------------------------------------------------------------------ #


def _floats(text: str, n: int | None = None, what: str = "values") -> tuple:
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad {what} {text!r}") from exc
    if n is not None and len(vals) != n:
        raise UsageError(f"{what} needs {n} comma-separated numbers")
    return vals


def parse_grid(text: str) -> GammaGrid:
    """``start:stop:step`` or a comma-separated list."""
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if not step > 0:
                raise ValueError("step must be positive")
            return GammaGrid.from_range(start, stop, step)
        return GammaGrid(_floats(text, what="grid"))
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc


def _scp_config(args) -> ScpConfig:
    init = ModelParams(*_floats(args.theta_init, 5, "theta-init")) if args.theta_init else ModelParams(4.6, 0.8, 0.4, 0.5, 0.1)
    return ScpConfig(
        theta_init=init,
        max_outer=args.max_outer,
        radius_mode=args.radius_mode,
        gauge=args.gauge,
        restricted=args.restricted,
    )


def _constraints(args):
    return read_constraints(args.constraints) if args.constraints else None


def _spec(args, gamma=None) -> EstimatorSpec:
    if args.estimator == "mle":
        g = None
    else:
        g = args.gamma if gamma is None else gamma
        if g is None or not g > 0:
            raise UsageError("the mdpd estimator needs --gamma > 0")
    return EstimatorSpec(gamma=g, restricted=args.restricted, scp=_scp_config(args), tail_tol=args.tail_tol,
                         constraints=_constraints(args))


def _sim_config(args, epsilon=None) -> SimConfig:
    return SimConfig(
        theta_true=ModelParams(*_floats(args.theta, 5, "theta")) if args.theta else DEFAULT_THETA,
        schedule=ObservationSchedule(_floats(args.schedule, what="schedule")) if args.schedule else DEFAULT_SCHEDULE,
        m=args.m,
        epsilon=args.epsilon if epsilon is None else epsilon,
        seed=args.seed,
        frailty_convention=args.frailty_convention,
        zero_inflation=args.zero_inflation,
    )


# ------------------------------------------------------------------ #
# Commands
# ------------------------------------------------------------------ #


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    data = simulate_dataset(cfg, args.index)
    out = Path(args.output) if args.output else Path(os.environ.get(OUTPUT_ENV, ".")) / "simulated.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, data)
    sidecar = {
        "theta_true": cfg.theta_true.to_dict(),
        "schedule": list(cfg.schedule.taus),
        "m": cfg.m,
        "epsilon": cfg.epsilon,
        "n_contaminated": cfg.n_contaminated,
        "seed": cfg.seed,
        "index": args.index,
        "frailty_convention": cfg.frailty_convention,
        "zero_inflation": cfg.zero_inflation,
        "layout": LAYOUT,
    }
    Path(str(out) + ".json").write_text(dump_json(sidecar))
    return EXIT_OK


def _fit_report(data: PanelDataset, spec: EstimatorSpec, fit) -> dict:
    cs = (spec.constraints or ConstraintSet()) if spec.restricted else None
    cfg = spec.dpd_config()
    asym = sigma_restricted(fit.theta_hat, data.schedule, None if spec.gamma is None else cfg, cs, fit.active,
                            m=data.m, gauge=spec.scp.gauge)
    report = fit.to_dict()
    report["std_errors"] = dict(zip(PARAM_NAMES, map(float, asym.std_errors)))
    report["condition_number"] = asym.condition_number
    report["gauge"] = spec.scp.gauge
    report["h"] = [float(x) for x in evaluate_h(cs, fit.theta_hat)] if cs is not None else []
    report["m"] = data.m
    return report


def cmd_fit(args) -> int:
    data = read_dataset(args.data)
    spec = _spec(args)
    fit = fit_estimator(data, spec)
    report = _fit_report(data, spec, fit)
    rows = _theta_rows([("theta_hat", fit.theta_hat.to_array()), ("std_error", [report["std_errors"][p] for p in PARAM_NAMES])])
    text = f"{spec.label}\n" + format_table(["", *PARAM_NAMES], rows)
    text += f"objective {fit.objective:.10g}  iterations {fit.iterations}  converged {fit.converged}\n"
    text += f"active {list(fit.active)}  lambda {[round(float(x), 8) for x in fit.lambda_hat]}\n"
    text += f"kkt certified {fit.kkt.certified()}\n"
    write_report(_output_stem(args, "fit"), report, text)
    return EXIT_OK


def cmd_tune(args) -> int:
    data = read_dataset(args.data)
    grid = parse_grid(args.grid)
    fits = FitCache(data, restricted=args.restricted, scp=_scp_config(args), tail_tol=args.tail_tol,
                    constraints=_constraints(args))
    methods = ("gsm", "iwj") if args.method == "both" else (args.method,)
    report, text = {}, ""
    for method in methods:
        if method == "gsm":
            res = gsm_select(data, grid, fits, symmetric=args.symmetric)
        else:
            res = iwj_select(data, grid, fits, _floats(args.pilots, what="pilots"))
        report[method] = res.to_dict()
        rows = [[g, float(res.scores[g])] + list(res.per_gamma_theta[g].to_array()) for g in sorted(res.scores)]
        text += f"{res.method}: gamma_opt = {res.gamma_opt:g}\n"
        text += format_table(["gamma", "score", *PARAM_NAMES], rows) + "\n"
    write_report(_output_stem(args, "tune"), report, text)
    return EXIT_OK


def cmd_gof(args) -> int:
    data = read_dataset(args.data)
    spec = _spec(args)
    fit = fit_estimator(data, spec)
    res = bootstrap_pvalue(data, fit.theta_hat, args.bootstrap_samples, seed=args.seed, refit=args.refit,
                           spec=spec, threads=args.threads)
    report = res.to_dict()
    report["estimator"] = spec.label
    text = format_table(
        ["T", "p_value", "B_used", "mode", "n_failed"],
        [[res.t_stat, res.p_value, res.b_samples, res.mode, res.n_failed]],
    )
    text += format_table(["", *PARAM_NAMES], _theta_rows([("theta_hat", res.theta_hat.to_array())]))
    write_report(_output_stem(args, "gof"), report, text)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    epsilons = _floats(args.epsilon_list) if args.epsilon_list else (args.epsilon,)
    gammas = _floats(args.gamma_list) if args.gamma_list else ((args.gamma,) if args.gamma else (0.2,))
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if any(e not in ("mle", "mdpd") for e in estimators):
        raise UsageError("estimators must be drawn from mle,mdpd")
    restrictions = {"both": (True, False), "restricted": (True,), "unrestricted": (False,)}[args.restriction]
    scp = _scp_config(args)
    specs = []
    for restricted in restrictions:
        for est in estimators:
            for g in ((None,) if est == "mle" else gammas):
                specs.append(EstimatorSpec(gamma=g, restricted=restricted, scp=scp, tail_tol=args.tail_tol,
                                           constraints=_constraints(args)))
    cells, rows = [], []
    for eps in epsilons:
        # one call per epsilon: every estimator sees the same datasets (matched seeds)
        table = run_replications(_sim_config(args, eps), args.reps, specs, threads=args.threads)
        cell = table.to_dict()
        if args.selectors:
            sel = compare_selectors(_sim_config(args, eps), args.reps, parse_grid(args.grid),
                                    _floats(args.pilots, what="pilots"), restricted=True, scp=scp,
                                    threads=args.threads)
            cell["selectors"] = [s.to_dict() for s in sel]
            for s in sel:
                rows.append([eps, f"{s.method}-selected", "mean", *s.mean, s.n_ok, s.n_failed])
                rows.append([eps, f"{s.method}-selected", "mse", *s.mse, s.n_ok, s.n_failed])
        cells.append(cell)
        for s in table.summaries:
            for stat in ("mean", "bias", "mse"):
                rows.append([eps, s.label, stat, *getattr(s, stat), s.n_ok, s.n_failed])
    report = {"reps": args.reps, "cells": cells}
    text = format_table(["epsilon", "estimator", "stat", *PARAM_NAMES, "n_ok", "n_failed"], rows)
    write_report(_output_stem(args, "benchmark"), report, text)
    return EXIT_OK


# ------------------------------------------------------------------ #
# Parser
# ------------------------------------------------------------------ #


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file of option defaults")
    p.add_argument("--output", "-o", help="report path stem (or data file for simulate)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--verbose", "-v", action="store_true")


def _estimation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("mle", "mdpd"), default="mdpd")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--restricted", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--constraints", help="r x 5 constraint matrix file (A theta >= 0)")
    p.add_argument("--radius-mode", choices=("adaptive", "ratio", "fixed"), default="adaptive")
    p.add_argument("--gauge", choices=("zeta", "none"), default="zeta")
    p.add_argument("--max-outer", type=_positive_int, default=None)
    p.add_argument("--theta-init", help="five comma-separated starting values")
    p.add_argument("--tail-tol", type=float, default=1e-6)


def _generator(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=_positive_int, default=100)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--theta", help="five comma-separated true values")
    p.add_argument("--schedule", help="comma-separated inspection times")
    p.add_argument("--frailty-convention", choices=("rate", "scale"), default="rate")
    p.add_argument("--zero-inflation", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paneldpd", description="Restricted MDPD estimation for panel count data")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("simulate", help="write a simulated dataset and its provenance sidecar")
    _common(p)
    _generator(p)
    p.add_argument("--index", type=_nonneg_int, default=0, help="replication index within the seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one estimator to a data file")
    _common(p)
    _estimation(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", help="select gamma by GSM and/or IWJ")
    _common(p)
    _estimation(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("gsm", "iwj", "both"), default="both")
    p.add_argument("--grid", default="0.2:0.6:0.01")
    p.add_argument("--pilots", default=",".join(map(str, DEFAULT_PILOTS)))
    p.add_argument("--symmetric", action="store_true", help="GSM with the symmetric cross term")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("gof", help="fit, then bootstrap the dissimilarity statistic")
    _common(p)
    _estimation(p)
    p.add_argument("--data", required=True)
    p.add_argument("--bootstrap-samples", type=_positive_int, default=1000)
    p.add_argument("--refit", action="store_true", help="refit every bootstrap sample")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("benchmark", help="Monte Carlo bias/MSE tables")
    _common(p)
    _estimation(p)
    _generator(p)
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--epsilon-list", help="comma-separated contamination levels (overrides --epsilon)")
    p.add_argument("--gamma-list", help="comma-separated gammas for the mdpd rows (overrides --gamma)")
    p.add_argument("--estimators", default="mle,mdpd")
    p.add_argument("--restriction", choices=("both", "restricted", "unrestricted"), default="both")
    p.add_argument("--selectors", action="store_true", help="add GSM vs IWJ selected-gamma rows")
    p.add_argument("--grid", default="0.2:0.6:0.01")
    p.add_argument("--pilots", default=",".join(map(str, DEFAULT_PILOTS)))
    p.set_defaults(func=cmd_benchmark)
    return parser


def _load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) for v in cfg.values()):
        raise UsageError("config must be a flat JSON object of scalars")
    return cfg


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = _load_config(args.config)
    sub = parser.subcommands[args.command]
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(actions) - {"config", "func", "help"})
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    sub.set_defaults(**cfg)
    args = parser.parse_args(argv)
    # config values bypass argparse typing, so run them through the option's converter
    for dest in cfg:
        action, value = actions[dest], getattr(args, dest)
        if action.type is not None and value is not None:
            try:
                setattr(args, dest, action.type(str(value)))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {dest}: {exc}") from exc
        if action.choices is not None and getattr(args, dest) not in action.choices:
            raise UsageError(f"config key {dest}: {value!r} not in {sorted(action.choices)}")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"paneldpd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"paneldpd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"paneldpd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"paneldpd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invariant violations from the module configs
        print(f"paneldpd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
