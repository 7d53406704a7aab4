"""Command-line front end.

Exit codes: 0 success, 1 a check or criterion failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, RunConfig
from .estimator import FitError, error_norm, fit, fit_truncated, predict
from .filters import (FilterSpec, default_approximation_thetas, default_lambda_grid,
                      verify_filter_inequalities)
from .mercer import KernelSpec, SourceCondition, make_source_function
from .shift import (ShiftScenario, TruncationRule, generate_dataset, moment_check,
                    moment_constants, tail_constants)

log = logging.getLogger("shiftspec")

OUT_ENV = "SHIFTSPEC_OUT"
DEFAULT_OUT = "shiftspec-out"

VERIFY_COLUMNS = ("filter", "inequality", "theta", "lambda", "worst_t", "ratio", "bound", "pass")
MOMENT_COLUMNS = ("scenario", "p", "m", "lhs", "rhs", "margin", "pass")


class UsageError(Exception):
    pass


# -- config -> domain objects -------------------------------------------------

def _build(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ValueError, IndexError) as exc:
        raise ConfigError(str(exc)) from exc


def kernel_from(cfg):
    k = cfg["kernel"]
    return _build(KernelSpec, k["beta"], k["j_max"], k["basis"])


def filter_from(cfg):
    f = cfg["filter"]
    return _build(FilterSpec, f["kind"], f["tau"], f["E"], f["F"])


def plan_from(cfg, n_grid=None) -> ex.ExperimentPlan:
    sc, src, e = cfg["scenario"], cfg["source"], cfg["experiment"]
    filt = filter_from(cfg)
    scenario = _build(ShiftScenario, sc["kind"], sc["p"])
    source = _build(SourceCondition, src["r"], src["eps_u"], src["scale"], tau=filt.tau)
    return _build(ex.ExperimentPlan, scenario, kernel_from(cfg), filt, source,
                  gamma_list=e["gamma_list"], n_grid=n_grid or e["n_grid"], trials=e["trials"],
                  schedule=e["schedule"], eps=e["eps"], m=e["m"], master_seed=e["master_seed"],
                  noise_bound=e["noise_bound"], alpha0=e["alpha0"], manual_s=e["manual_s"],
                  manual_scale=e["manual_scale"], delta=e["delta"],
                  compare_untruncated=e["compare_untruncated"])


def _parse_scenario_entry(entry):
    kind, _, p = entry.partition(":")
    p = float(p) if p else (2.0 if kind == "log_tail" else math.inf)
    return _build(ShiftScenario, kind, p)


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


# -- subcommands ------------------------------------------------------------------

def cmd_verify_filters(cfg, out: Path) -> int:
    v = cfg["verify"]
    kappa2 = kernel_from(cfg).kappa2
    lambdas = default_lambda_grid(v["lambda_points"], v["lambda_min_exp"], v["lambda_max_exp"])
    t_grid = np.linspace(0.0, kappa2, v["t_points"])
    rows = []
    for kind in v["filters"]:
        over = cfg.filter_overrides.get(kind, {})
        spec = _build(FilterSpec, kind, over.get("tau"), over.get("E"), over.get("F"))
        thetas = default_approximation_thetas(spec.tau, v["approx_theta_step"])
        report = verify_filter_inequalities(spec, kappa2, lambdas, t_grid, v["thetas"], thetas)
        for r in report.rows:
            rows.append({"filter": r.filter, "inequality": r.inequality, "theta": r.theta,
                         "lambda": r.lam, "worst_t": r.worst_t, "ratio": r.ratio,
                         "bound": r.bound, "pass": int(r.passed)})
        status = "pass" if report.passed else f"FAIL ({len(report.violations())} violations)"
        print(f"{kind:16s} tau={spec.tau:g} E={spec.E:.6g} F={spec.F:.6g}: {status}")
    _write(out, "filter_report.csv", ex.format_csv(rows, VERIFY_COLUMNS))
    return 0 if all(r["pass"] for r in rows) else 1


def _moment_constants_for(cfg, scn, p):
    mo = cfg["moments"]
    rule = mo["constants"]
    if rule == "explicit":
        if mo["L"] is None or (mo["sigma"] is None and mo["sigma2"] is None):
            raise ConfigError("constants = explicit needs L and sigma (or sigma2)")
        if mo["sigma"] is not None and mo["sigma2"] is not None:
            raise ConfigError("give sigma or sigma2, not both")
        sigma = mo["sigma"] if mo["sigma"] is not None else math.sqrt(mo["sigma2"])
        return mo["L"], sigma
    if rule == "moment":
        return moment_constants(scn, p, mo["m_max"])
    if rule in ("auto", "tail"):
        return tail_constants(scn)
    raise ConfigError(f"unknown constants rule {rule!r}; expected auto, tail, moment or explicit")


def cmd_check_moments(cfg, out: Path) -> int:
    mo = cfg["moments"]
    expected_fail = set(mo["expect_fail"])
    rows, ok = [], True
    for entry in mo["scenarios"]:
        scn = _parse_scenario_entry(entry)
        p = scn.p
        L, sigma = _moment_constants_for(cfg, scn, p)
        checked = _build(moment_check, scn, p, mo["m_max"], L, sigma)
        entry_ok = all(r.passed for r in checked)
        if not entry_ok and entry not in expected_fail:
            ok = False
        print(f"{entry:18s} L={L:.6g} sigma={sigma:.6g}: "
              f"{'pass' if entry_ok else 'FAIL'}{' (expected)' if entry in expected_fail else ''}")
        for r in checked:
            rows.append({"scenario": r.scenario, "p": r.p, "m": r.m, "lhs": r.lhs, "rhs": r.rhs,
                         "margin": r.margin, "pass": r.status})
    _write(out, "moment_report.csv", ex.format_csv(rows, MOMENT_COLUMNS))
    return 0 if ok else 1


def cmd_fit(cfg, out: Path) -> int:
    fc = cfg["fit"]
    n = fc["n"]
    plan = plan_from(cfg, n_grid=(n,))
    spec = plan.kernel
    f_rho = make_source_function(spec, plan.source)
    seed = ex.child_seed(plan.master_seed, n, 0)
    ds = generate_dataset(plan.scenario, f_rho, n, plan.noise_bound, np.random.default_rng(seed))
    lam = fc["lambda"] if fc["lambda"] is not None else plan.lam(n)
    gammas = fc["gamma_list"]
    if any(g > 1 or g < 0 for g in gammas):
        raise ConfigError("fit gamma_list must lie in [0, 1]")
    try:
        if fc["truncate"]:
            if plan.schedule != "thm2":
                raise ConfigError("truncate = true needs schedule = thm2 for the truncation level")
            est = fit_truncated(ds, spec, plan.filter, lam,
                                TruncationRule.for_sample_size(plan.p, plan.m, n), solver="eigh")
        else:
            est = fit(ds, spec, plan.filter, lam, solver="eigh")
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    xs = np.linspace(0.0, 1.0, fc["grid_points"])
    grid = [{"x": x, "f_hat": fh, "f_rho": fr}
            for x, fh, fr in zip(xs, predict(est, spec, xs), f_rho(xs))]
    _write(out, "fit_grid.csv", ex.format_csv(grid, ("x", "f_hat", "f_rho")))
    errs = [{"gamma": g, "error": error_norm(est, f_rho, spec, g)} for g in gammas]
    _write(out, "fit_errors.csv", ex.format_csv(errs, ("gamma", "error")))
    meta = dict(est.fit_meta, n=n, seed=seed, scenario=plan.scenario.kind)
    _write(out, "fit_meta.txt", "".join(f"{k}={ex._fmt(v)}\n" for k, v in sorted(meta.items())))
    for e in errs:
        print(f"gamma={e['gamma']:g} error={e['error']:.6g}")
    return 0


def _rate_outputs(cfg, plan, table, out: Path):
    n_min = ex.plan_advisory(plan) if cfg["experiment"]["drop_burn_in"] else None
    report = ex.rate_report(table, n_min=n_min)
    rows = [rf.as_row(g) for g, rf in report]
    _write(out, "rate_report.csv", ex.format_csv(rows, ex.RATE_COLUMNS))
    comparison = ex.truncation_comparison(table)
    if comparison:
        _write(out, "truncation_comparison.csv", ex.format_csv(comparison, ex.COMPARISON_COLUMNS))
    return report, n_min


def cmd_convergence(cfg, out: Path, workers: int) -> int:
    plan = plan_from(cfg)
    table = ex.run_convergence(plan, workers=workers)
    _write(out, "run_table.csv", ex.format_csv(table, ex.RUN_COLUMNS))
    report, n_min = _rate_outputs(cfg, plan, table, out)
    print(f"s={plan.s:.6g} sample-size advisory n_min={n_min if n_min is not None else 'off'}")
    for g, rf in report:
        print(f"gamma={g:g} slope={rf.slope:.4f} theoretical={rf.theoretical:.4f} "
              f"gap={rf.abs_gap:.4f} n_dropped={rf.n_dropped}")
    return 0


def cmd_report(cfg, out: Path, table_path: str | None) -> int:
    plan = plan_from(cfg)
    path = Path(table_path) if table_path else out / "run_table.csv"
    try:
        table = ex.read_run_table(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read run table: {exc}") from exc
    tol = cfg["report"]["tolerance"]
    try:
        report, _ = _rate_outputs(cfg, plan, table, out)
    except ValueError as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 1
    ok = True
    for g, rf in report:
        passed = rf.abs_gap <= tol
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] gamma={g:g} slope={rf.slope:.4f} "
              f"theoretical={rf.theoretical:.4f} |gap|={rf.abs_gap:.4f} tol={tol:g}")
    return 0 if ok else 1


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file with [sections]")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, help="master seed (experiment.master_seed)")
    common.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    common.add_argument("--tolerance", type=float, help="rate tolerance (report.tolerance)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="shiftspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-filters", parents=[common], help="check the filter inequalities on grids")
    sub.add_parser("check-moments", parents=[common], help="check the density-ratio moment condition")
    sub.add_parser("fit", parents=[common], help="run one fit and emit predictions and errors")
    sub.add_parser("convergence", parents=[common], help="run a convergence sweep")
    rep = sub.add_parser("report", parents=[common], help="fit rates from a run table and gate on tolerance")
    rep.add_argument("--table", help="run table CSV (default OUT/run_table.csv)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.load(args.config)
    for item in args.set:
        cfg.apply_override(item)
    if args.seed is not None:
        cfg["experiment"]["master_seed"] = args.seed
    if args.tolerance is not None:
        cfg["report"]["tolerance"] = args.tolerance
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        level = max(logging.DEBUG, logging.WARNING - 10 * (args.verbose + cfg["output"]["verbosity"] - 1))
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        out.mkdir(parents=True, exist_ok=True)
        workers = args.workers if args.workers is not None else ex.default_workers()
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        _write(out, f"{args.command}.resolved.ini", cfg.dumps())
        if args.command == "verify-filters":
            return cmd_verify_filters(cfg, out)
        if args.command == "check-moments":
            return cmd_check_moments(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, out, workers)
        return cmd_report(cfg, out, args.table)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
