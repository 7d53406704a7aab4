"""Regularisation schedules, convergence sweeps and log-log rate fits."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimator import FitError, error_norm, fit, fit_truncated
from .filters import FilterSpec
from .mercer import (KernelSpec, SourceCondition, effective_dimension_constants,
                     embedding_norm_estimate, make_source_function)
from .shift import ShiftScenario, TruncationRule, generate_dataset, nu_exponent, tail_constants

SCHEDULES = ("thm1", "thm2", "manual")
UNTRUNCATED = "thm2-untruncated"
EIGH_N_CAP = 2048

RUN_COLUMNS = ("scenario", "filter", "schedule", "r", "beta", "p", "m", "eps", "gamma", "n",
               "trial", "lambda", "D", "error", "spectrum_max", "clip_flag", "seed")
RATE_COLUMNS = ("gamma", "slope", "stderr", "theoretical", "abs_gap", "n_dropped")
COMPARISON_COLUMNS = ("gamma", "n", "median_truncated", "median_untruncated")


# -- schedules -----------------------------------------------------------------

def lambda_schedule_thm1(r: float, beta: float, alpha0: float, p: float, eps: float):
    """Exponent s of lambda = n^-s for plain importance weighting.

    Returns (s, branch) with branch "well-specified" when 2r > alpha0.
    """
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    if not 1 / beta - 1e-12 <= alpha0 < 1:
        raise ValueError(f"alpha0 must lie in [1/beta, 1) = [{1 / beta:.6g}, 1), got {alpha0}")
    if not r > 0:
        raise ValueError("r must be positive")
    if not p >= 1:
        raise ValueError("p must be >= 1")
    well = 2 * r > alpha0
    if well and not 0 < eps < 2 * r - alpha0:
        raise ValueError(f"eps must lie in (0, 2r - alpha0) = (0, {2 * r - alpha0:.6g}), got {eps}")
    if not well and not eps > 0:
        raise ValueError(f"eps must lie in (0, inf), got {eps}")
    shift_term = 0.0 if math.isinf(p) else (alpha0 + eps - 1 / beta) / p
    lead = 2 * r if well else alpha0 + eps
    s = 1.0 / (lead + 1 / beta + shift_term)
    if not 0 < s < 1:
        raise ValueError(f"schedule exponent s = {s:.6g} falls outside (0, 1)")
    return s, ("well-specified" if well else "misspecified")


def lambda_schedule_thm2(r: float, beta: float, p: float, m: int, eps: float):
    """(nu, s) for the truncated estimator; truncation level D = n^nu."""
    nu = nu_exponent(p, m)
    if not beta > 1 or not r > 0:
        raise ValueError("need beta > 1 and r > 0")
    if 2 * r > 1:
        s = (1 - nu) / (2 * r + 1 / beta)
    else:
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        s = (1 - nu) / (1 + eps + 1 / beta)
    return nu, s


def default_eps(schedule: str, r: float, alpha0: float) -> float:
    if schedule == "thm1" and 2 * r > alpha0:
        return min(0.3, (2 * r - alpha0) / 2)
    return 0.1


@dataclass(frozen=True)
class AdvisoryConstants:
    M_alpha: float = 1.0
    C_N: float = 1.0
    L: float = 1.0
    sigma: float = 1.0
    kappa: float = 1.0


def _power(base, num, den):
    if den <= 0:
        return math.inf
    return base ** (num / den)


def min_sample_advisory(schedule: str, *, s: float, beta: float, p: float, delta: float,
                        consts: AdvisoryConstants, alpha0: float | None = None,
                        eps: float | None = None, nu: float | None = None,
                        m: int | None = None) -> float:
    """Smallest n satisfying the sample-size condition attached to a schedule.

    A nonpositive exponent denominator means no finite n qualifies (inf).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    log_term = math.log(6 / delta)
    inv_p = 0.0 if math.isinf(p) else 1 / p
    c = consts
    if schedule == "thm1":
        a = alpha0 + eps / 2
        first = _power(16 * c.L * c.M_alpha ** 2 * log_term, 1, 1 - s * a)
        second = _power(16 * c.sigma * c.M_alpha ** (1 + inv_p) * c.C_N * log_term, 2,
                        1 - s * (a + 1 / beta + (a - 1 / beta) * inv_p))
        return max(first, second)
    if schedule == "thm2":
        moment = 0.5 * math.factorial(m) * c.L ** (m - 2) * c.sigma ** 2
        first = _power(2 * c.kappa * math.sqrt(c.C_N) * moment ** (p / 2), 2,
                       p * (m - 1) * nu - (1 + 1 / beta) * s)
        second = _power(32 * c.kappa ** 2 * log_term, 1, 1 - nu - s)
        third = _power(16 * math.sqrt(2) * c.kappa * math.sqrt(c.C_N) * log_term, 2,
                       1 - nu - (1 + 1 / beta) * s)
        return max(first, second, third)
    raise ValueError(f"no sample-size condition for schedule {schedule!r}")


# -- plans -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    scenario: ShiftScenario
    kernel: KernelSpec
    filter: FilterSpec
    source: SourceCondition
    gamma_list: tuple = (0.0,)
    n_grid: tuple = (128, 256, 512, 1024, 2048, 4096)
    trials: int = 20
    schedule: str = "thm1"
    eps: float | None = None
    m: int = 3
    master_seed: int = 0
    noise_bound: float = 0.2
    p: float | None = None
    alpha0: float | None = None
    manual_s: float | None = None
    manual_scale: float = 1.0
    delta: float = 0.1
    compare_untruncated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gamma_list", tuple(float(g) for g in self.gamma_list))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.p is None:
            object.__setattr__(self, "p", self.scenario.p)
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", self.kernel.alpha0)
        if self.eps is None:
            object.__setattr__(self, "eps", default_eps(self.schedule, self.source.r, self.alpha0))
        self.validate()

    def validate(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        ns = self.n_grid
        if not ns or ns[0] < 1 or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_grid must be strictly increasing positive integers")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        hi = min(2 * self.source.r, 1.0)
        if not self.gamma_list or any(not 0 <= g <= hi + 1e-12 for g in self.gamma_list):
            raise ValueError(f"gamma_list must lie in [0, min(2r, 1)] = [0, {hi:.6g}]")
        if self.source.r > self.filter.tau:
            raise ValueError(f"r = {self.source.r} exceeds the filter qualification tau = {self.filter.tau}")
        if self.schedule == "thm2" and math.isinf(self.p):
            raise ValueError("the thm2 schedule needs a finite moment exponent p")
        if self.schedule == "manual" and (self.manual_s is None or not self.manual_s > 0):
            raise ValueError("manual schedule needs a positive exponent s")
        if self.filter.kind != "ridge" and ns[-1] > EIGH_N_CAP:
            raise ValueError(f"{self.filter.kind} runs use dense eigendecomposition; cap n at {EIGH_N_CAP}")
        if self.noise_bound < 0:
            raise ValueError("noise_bound must be nonnegative")
        self.s  # schedule preconditions

    @property
    def s(self) -> float:
        if self.schedule == "thm1":
            return lambda_schedule_thm1(self.source.r, self.kernel.beta, self.alpha0, self.p, self.eps)[0]
        if self.schedule == "thm2":
            return lambda_schedule_thm2(self.source.r, self.kernel.beta, self.p, self.m, self.eps)[1]
        return float(self.manual_s)

    @property
    def nu(self) -> float | None:
        return nu_exponent(self.p, self.m) if self.schedule == "thm2" else None

    @property
    def solver(self) -> str:
        return "direct" if self.filter.kind == "ridge" else "eigh"

    def lam(self, n: int) -> float:
        scale = self.manual_scale if self.schedule == "manual" else 1.0
        return scale * float(n) ** -self.s

    def theoretical_slope(self, gamma: float) -> float:
        return -self.s * (self.source.r - gamma / 2)


def advisory_constants(plan: ExperimentPlan) -> AdvisoryConstants:
    spec = plan.kernel
    L, sigma = tail_constants(plan.scenario)
    _, C_N = effective_dimension_constants(spec, np.logspace(-4, -1, 31))
    alpha = min(plan.alpha0 + plan.eps / 2, 1.0)
    M = embedding_norm_estimate(spec, alpha, grid_points=2000) if alpha > 1 / spec.beta else math.inf
    return AdvisoryConstants(M_alpha=M, C_N=C_N, L=L, sigma=sigma, kappa=spec.kappa)


def plan_advisory(plan: ExperimentPlan) -> float:
    if plan.schedule == "manual":
        return 0.0
    consts = advisory_constants(plan)
    return min_sample_advisory(plan.schedule, s=plan.s, beta=plan.kernel.beta, p=plan.p,
                               delta=plan.delta, consts=consts, alpha0=plan.alpha0,
                               eps=plan.eps, nu=plan.nu, m=plan.m)


# -- sweep -------------------------------------------------------------------

def child_seed(master_seed: int, n: int, trial: int) -> int:
    """Stateless per-cell seed."""
    return int(np.random.SeedSequence([master_seed, n, trial]).generate_state(1, np.uint64)[0])


def _rows_for(plan, schedule, n, trial, seed, lam, est, f_rho, failed):
    out = []
    for g in plan.gamma_list:
        meta = est.fit_meta if est is not None else {}
        err = math.nan if failed else error_norm(est, f_rho, plan.kernel, g)
        out.append({
            "scenario": plan.scenario.kind, "filter": plan.filter.kind, "schedule": schedule,
            "r": plan.source.r, "beta": plan.kernel.beta, "p": plan.p,
            "m": plan.m if plan.schedule == "thm2" else "", "eps": plan.eps, "gamma": g,
            "n": n, "trial": trial, "lambda": lam, "D": meta.get("D", math.nan), "error": err,
            "spectrum_max": meta.get("spectrum_max", math.nan),
            "clip_flag": int(meta.get("clip_flag", False)), "seed": seed,
        })
    return out


def run_cell(plan: ExperimentPlan, n: int, trial: int) -> list[dict]:
    seed = child_seed(plan.master_seed, n, trial)
    rng = np.random.default_rng(seed)
    f_rho = make_source_function(plan.kernel, plan.source)
    ds = generate_dataset(plan.scenario, f_rho, n, plan.noise_bound, rng)
    lam = plan.lam(n)
    rows = []
    try:
        if plan.schedule == "thm2":
            rule = TruncationRule.for_sample_size(plan.p, plan.m, n)
            est = fit_truncated(ds, plan.kernel, plan.filter, lam, rule, solver=plan.solver)
        else:
            est = fit(ds, plan.kernel, plan.filter, lam, solver=plan.solver)
        rows += _rows_for(plan, plan.schedule, n, trial, seed, lam, est, f_rho, False)
    except FitError:
        rows += _rows_for(plan, plan.schedule, n, trial, seed, lam, None, f_rho, True)
    if plan.schedule == "thm2" and plan.compare_untruncated and n == plan.n_grid[-1]:
        try:
            est = fit(ds, plan.kernel, plan.filter, lam, solver=plan.solver)
            rows += _rows_for(plan, UNTRUNCATED, n, trial, seed, lam, est, f_rho, False)
        except FitError:
            rows += _rows_for(plan, UNTRUNCATED, n, trial, seed, lam, None, f_rho, True)
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def _sort_key(row):
    return (row["n"], row["trial"], row["schedule"] == UNTRUNCATED, row["gamma"])


def run_convergence(plan: ExperimentPlan, workers: int = 1) -> list[dict]:
    cells = [(plan, n, t) for n in plan.n_grid for t in range(plan.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_args, cells))
    else:
        chunks = [run_cell(*c) for c in cells]
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=_sort_key)


# -- table I/O -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def format_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows, columns))


_INT_COLS = {"n", "trial", "clip_flag", "seed"}
_STR_COLS = {"scenario", "filter", "schedule"}


def read_run_table(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RUN_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"run table {path} lacks columns {sorted(missing)}")
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if k in _STR_COLS:
                    row[k] = v
                elif k in _INT_COLS:
                    row[k] = int(v)
                elif k == "m":
                    row[k] = int(v) if v else ""
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


# -- rate fits -------------------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float
    theoretical: float
    n_used: int
    n_dropped: int = 0
    medians: dict = field(default_factory=dict)

    @property
    def abs_gap(self) -> float:
        return abs(self.slope - self.theoretical)

    def as_row(self, gamma) -> dict:
        return {"gamma": gamma, "slope": self.slope, "stderr": self.stderr,
                "theoretical": self.theoretical, "abs_gap": self.abs_gap,
                "n_dropped": self.n_dropped}


def _main_rows(table, gamma):
    return [r for r in table if r["schedule"] != UNTRUNCATED and r["gamma"] == gamma]


def median_errors(table, gamma) -> dict:
    by_n = {}
    for r in _main_rows(table, gamma):
        if np.isfinite(r["error"]):
            by_n.setdefault(r["n"], []).append(r["error"])
    return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def fit_rate(table, gamma: float, theoretical: float | None = None,
             n_min: float | None = None, min_points: int = 3) -> RateFit:
    """Least-squares slope of log(median error) against log n.

    n values below n_min are dropped as burn-in, but only while at least
    min_points values remain.  Without an explicit theoretical slope it is
    rebuilt as -s (r - gamma/2), with s read off the lambda column.
    """
    med = median_errors(table, gamma)
    if len(med) < min_points:
        raise ValueError(f"need >= {min_points} sample sizes with successful fits, got {len(med)}")
    ns = sorted(med)
    dropped = 0
    if n_min is not None:
        kept = [n for n in ns if n >= n_min]
        if len(kept) >= min_points:
            dropped = len(ns) - len(kept)
            ns = kept
    x = np.log(ns)
    y = np.log([med[n] for n in ns])
    res = stats.linregress(x, y)
    if theoretical is None:
        rows = _main_rows(table, gamma)
        r = rows[0]["r"]
        lam_by_n = {row["n"]: row["lambda"] for row in rows}
        ln = np.log(sorted(lam_by_n))
        s = -stats.linregress(ln, np.log([lam_by_n[n] for n in sorted(lam_by_n)])).slope
        theoretical = -s * (r - gamma / 2)
    stderr = float(res.stderr) if len(ns) > 2 else math.nan
    return RateFit(float(res.slope), float(res.intercept), stderr, float(theoretical),
                   len(ns), dropped, {n: med[n] for n in ns})


def rate_report(table, gammas=None, plan: ExperimentPlan | None = None,
                n_min: float | None = None) -> list[tuple[float, RateFit]]:
    if gammas is None:
        gammas = sorted({r["gamma"] for r in table})
    out = []
    for g in gammas:
        theo = plan.theoretical_slope(g) if plan is not None else None
        out.append((g, fit_rate(table, g, theoretical=theo, n_min=n_min)))
    return out


def truncation_comparison(table) -> list[dict]:
    """Median errors of truncated vs untruncated fits at the sample sizes compared."""
    out = []
    raw = [r for r in table if r["schedule"] == UNTRUNCATED]
    for g in sorted({r["gamma"] for r in raw}):
        for n in sorted({r["n"] for r in raw if r["gamma"] == g}):
            un = [r["error"] for r in raw if r["gamma"] == g and r["n"] == n]
            tr = [r["error"] for r in table
                  if r["schedule"] == "thm2" and r["gamma"] == g and r["n"] == n]
            out.append({"gamma": g, "n": n, "median_truncated": float(np.nanmedian(tr)),
                        "median_untruncated": float(np.nanmedian(un))})
    return out


def clip_frequency(table) -> dict:
    """Fraction of fits per n whose top eigenvalue exceeded kappa^2."""
    seen = {}
    for r in table:
        if r["schedule"] == UNTRUNCATED:
            continue
        seen[(r["n"], r["trial"])] = r["clip_flag"]
    by_n = {}
    for (n, _), flag in seen.items():
        by_n.setdefault(n, []).append(flag)
    return {n: float(np.mean(v)) for n, v in sorted(by_n.items())}


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
