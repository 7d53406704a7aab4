"""Acceptance criteria, one recorded pass/fail line each (see the terminal summary)."""
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from shiftspec import experiments as ex
from shiftspec.estimator import fit, ridge_direct_coeffs
from shiftspec.filters import (FilterSpec, default_approximation_thetas, default_lambda_grid,
                               verify_filter_inequalities)
from shiftspec.mercer import (KernelSpec, SourceCondition, effective_dimension,
                              effective_dimension_constants, make_source_function)
from shiftspec.shift import ShiftScenario, generate_dataset, moment_check, moment_constants, tail_constants

KERNEL = KernelSpec(2.0, 4096)
RIDGE = FilterSpec("ridge")
N_GRID = (128, 256, 512, 1024, 2048, 4096)

PLANS = {
    "bounded_well": dict(scenario=ShiftScenario("bounded_linear"), source=SourceCondition(0.5, tau=1),
                         gamma_list=(0.0, 0.5, 1.0), budget=20 * 60),
    "bounded_mis": dict(scenario=ShiftScenario("bounded_linear"), source=SourceCondition(0.35, tau=1),
                        gamma_list=(0.0,), budget=20 * 60),
    "log_tail_truncated": dict(scenario=ShiftScenario("log_tail", 2.0), source=SourceCondition(0.75, tau=1),
                               gamma_list=(0.0,), schedule="thm2", m=3, budget=25 * 60),
}


def make_plan(name):
    kw = dict(PLANS[name])
    kw.pop("budget")
    return ex.ExperimentPlan(kernel=KERNEL, filter=RIDGE, n_grid=N_GRID, trials=20, noise_bound=0.2,
                             master_seed=0, **kw)


def emitted_csvs(plan, table):
    out = {"run_table": ex.format_csv(table, ex.RUN_COLUMNS),
           "rate_report": ex.format_csv([rf.as_row(g) for g, rf in ex.rate_report(table, plan=plan)],
                                        ex.RATE_COLUMNS)}
    comp = ex.truncation_comparison(table)
    if comp:
        out["truncation_comparison"] = ex.format_csv(comp, ex.COMPARISON_COLUMNS)
    return out


@lru_cache(maxsize=None)
def sweep(name, repeat=0):
    plan = make_plan(name)
    t0 = time.perf_counter()
    table = ex.run_convergence(plan, workers=ex.default_workers())
    return plan, table, time.perf_counter() - t0


# -- 1. filter inequalities -----------------------------------------------------------

@pytest.mark.parametrize("kind", ["ridge", "gradient_flow", "spectral_cutoff"])
def test_c1_filter_inequalities(acceptance, kind):
    spec = FilterSpec(kind)  # constants at their stated defaults
    kappa2 = KERNEL.kappa2
    t0 = time.perf_counter()
    report = verify_filter_inequalities(spec, kappa2, default_lambda_grid(25, -4, 0),
                                        np.linspace(0, kappa2, 1000), (0.0, 0.25, 0.5, 0.75, 1.0),
                                        default_approximation_thetas(spec.tau), slack=1e-12)
    elapsed = time.perf_counter() - t0
    bad = report.violations()
    detail = f"tau={spec.tau:g} E={spec.E:.4g} F={spec.F:.4g}, {len(bad)} violations, {elapsed:.2f}s"
    if bad:
        w = max(bad, key=lambda r: r.ratio / r.bound)
        detail += (f"; worst {w.inequality} theta={w.theta:g} lambda={w.lam:.3g} t={w.worst_t:.3g} "
                   f"ratio={w.ratio:.4g} > bound={w.bound:.4g}")
    ok = report.passed and elapsed < 5
    acceptance.record(f"1 filter inequalities [{kind}]", ok, detail)
    assert ok, detail


# -- 2. ridge oracle equivalence -----------------------------------------------------------

def test_c2_ridge_oracle_equivalence(acceptance):
    scenarios = [ShiftScenario("none"), ShiftScenario("bounded_linear"), ShiftScenario("log_tail", 2.0)]
    f_rho = make_source_function(KERNEL, SourceCondition(0.5))
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(200):
        scn = scenarios[case % 3]
        n = int(rng.integers(1, 201))
        lam = 10.0 ** rng.uniform(-4, 0)
        ds = generate_dataset(scn, f_rho, n, 0.2, np.random.default_rng([case, n]))
        oracle = ridge_direct_coeffs(ds, KERNEL, lam)
        c = fit(ds, KERNEL, RIDGE, lam, solver="eigh").coeffs
        worst = max(worst, np.linalg.norm(c - oracle) / np.linalg.norm(oracle))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 30
    acceptance.record("2 ridge oracle equivalence", ok,
                      f"max relative gap {worst:.2e} over 200 cases, {elapsed:.1f}s")
    assert ok


# -- 3. effective dimension ------------------------------------------------------------

def test_c3_effective_dimension(acceptance):
    t0 = time.perf_counter()
    lam = 0.01
    value = effective_dimension(KernelSpec(2.0, 10_000), lam)
    # sum_{j>=1} 1/(1 + lam j^2) = (pi/(2 sqrt(lam))) coth(pi/sqrt(lam)) - 1/2
    oracle = math.pi / (2 * math.sqrt(lam)) / math.tanh(math.pi / math.sqrt(lam)) - 0.5
    ratios = {}
    for beta in (1.5, 2.0, 3.0):
        lo, hi = effective_dimension_constants(KernelSpec(beta, 10_000), np.logspace(-4, -1, 31))
        ratios[beta] = hi / lo
    elapsed = time.perf_counter() - t0
    ok = abs(value - oracle) <= 0.01 and all(r < 3 for r in ratios.values()) and elapsed < 5
    acceptance.record("3 effective dimension", ok,
                      f"N(0.01)={value:.5f} vs oracle {oracle:.5f}; max/min of N lam^(1/beta) "
                      + ", ".join(f"beta={b:g}: {r:.3f}" for b, r in ratios.items()) + f"; {elapsed:.2f}s")
    assert ok


# -- 4-7. rate reproduction -------------------------------------------------------------

def _rate_check(acceptance, label, name, tol):
    plan, table, elapsed = sweep(name)
    rf = ex.fit_rate(table, 0.0, theoretical=plan.theoretical_slope(0.0))
    budget = PLANS[name]["budget"]
    ok = rf.abs_gap <= tol and elapsed <= budget
    acceptance.record(label, ok, f"s={plan.s:.4f} slope={rf.slope:.4f}±{rf.stderr:.4f} "
                      f"target={rf.theoretical:.4f} |gap|={rf.abs_gap:.4f} (tol {tol}); "
                      f"{elapsed:.0f}s of {budget}s")
    return ok


@pytest.mark.slow
def test_c4_bounded_shift_well_specified(acceptance):
    assert _rate_check(acceptance, "4 bounded shift, r=0.5", "bounded_well", 0.10)


@pytest.mark.slow
def test_c5_bounded_shift_misspecified(acceptance):
    plan, _, _ = sweep("bounded_mis")
    assert plan.s == pytest.approx(1 / 1.2)
    assert _rate_check(acceptance, "5 bounded shift, r=0.35", "bounded_mis", 0.10)


@pytest.mark.slow
def test_c6_truncated_unbounded_shift(acceptance):
    plan, table, _ = sweep("log_tail_truncated")
    assert plan.nu == pytest.approx(0.2) and plan.s == pytest.approx(0.4)
    ok = _rate_check(acceptance, "6 truncated estimator, log_tail p=2", "log_tail_truncated", 0.12)
    comp = ex.truncation_comparison(table)
    print("truncation comparison:", comp)
    assert comp and comp[0]["n"] == N_GRID[-1]
    assert ok


@pytest.mark.slow
def test_c7_interpolation_norm_ordering(acceptance):
    plan, table, _ = sweep("bounded_well")
    fits = {g: ex.fit_rate(table, g, theoretical=plan.theoretical_slope(g)) for g in (0.0, 0.5, 1.0)}
    slopes = [fits[g].slope for g in (0.0, 0.5, 1.0)]
    increasing = slopes[0] < slopes[1] < slopes[2]
    within = fits[0.0].abs_gap <= 0.10 and fits[0.5].abs_gap <= 0.10
    ok = increasing and within
    acceptance.record("7 interpolation-norm ordering", ok,
                      "slopes " + ", ".join(f"gamma={g:g}: {fits[g].slope:.4f} (theory {fits[g].theoretical:.4f})"
                                             for g in fits))
    assert ok


# -- 8. moment condition ---------------------------------------------------------------

def test_c8_moment_condition(acceptance):
    t0 = time.perf_counter()
    rows_b = moment_check(ShiftScenario("bounded_linear"), math.inf, 8, L=2.0, sigma=math.sqrt(2.0))
    bounded_ok = all(r.passed for r in rows_b) and abs(rows_b[0].margin) <= 1e-12
    lt = ShiftScenario("log_tail", 2.0)
    L_fit, s_fit = moment_constants(lt, 2.0, 8)
    rows_l = moment_check(lt, 2.0, 8, L_fit, s_fit)
    L_tail, s_tail = tail_constants(lt)
    rows_t = moment_check(lt, 2.0, 8, L_tail, s_tail)
    log_ok = [r.m for r in rows_l] == list(range(2, 9)) and all(r.passed for r in rows_l + rows_t)
    elapsed = time.perf_counter() - t0
    ok = bounded_ok and log_ok and elapsed < 30
    acceptance.record("8 moment condition", ok,
                      f"bounded_linear m=2 margin {rows_b[0].margin:.1e}; log_tail fitted L={L_fit:.4f} "
                      f"sigma={s_fit:.4f}, tail-fit L={L_tail:.4f} sigma={s_tail:.4f}; {elapsed:.1f}s")
    assert ok


# -- 9. determinism -------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("name", list(PLANS))
def test_c9_determinism(acceptance, name):
    plan, table, _ = sweep(name)
    first = emitted_csvs(plan, table)
    plan2, table2, _ = sweep(name, repeat=1)
    second = emitted_csvs(plan2, table2)
    same = first == second
    acceptance.record(f"9 determinism [{name}]", same,
                      ", ".join(f"{k}: {len(v)} bytes {'identical' if second.get(k) == v else 'DIFFER'}"
                                for k, v in first.items()))
    assert same
