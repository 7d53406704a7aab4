"""Filter functions g_lambda for spectral regularization and a grid checker
for their two defining inequalities.

    stability:      sup_t t^theta g(t)          <= E lambda^(theta - 1),  theta in [0, 1]
    approximation:  sup_t t^theta |1 - t g(t)|  <= F lambda^theta,        theta in [0, tau]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("ridge", "gradient_flow", "spectral_cutoff")
DEFAULT_TAU = 2.0
STABILITY_THETAS = (0.0, 0.25, 0.5, 0.75, 1.0)

# (1 - exp(-u))/u switches to its Taylor series below this u
_SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class FilterSpec:
    """A filter family with its qualification tau and constants E, F.

    Leaving E/F as None picks the textbook constants for the family.
    """

    kind: str
    tau: float | None = None
    E: float | None = None
    F: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter {self.kind!r}; expected one of {KINDS}")
        tau = self.tau
        if self.kind == "ridge":
            if tau is not None and tau != 1:
                raise ValueError("ridge regression has qualification tau = 1")
            tau = 1.0
        elif tau is None:
            tau = DEFAULT_TAU
        if tau < 1:
            raise ValueError(f"tau must be >= 1, got {tau}")
        object.__setattr__(self, "tau", float(tau))
        if self.E is None:
            object.__setattr__(self, "E", 1.0)
        if self.F is None:
            F = (tau / math.e) ** tau if self.kind == "gradient_flow" else 1.0
            object.__setattr__(self, "F", F)
        if self.E < 0 or self.F < 0:
            raise ValueError("E and F must be nonnegative")


def _check_args(lam, t):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("t must be nonnegative")
    return t


def expm1_ratio_series(u):
    """(1 - exp(-u))/u by its 6-term Taylor series; accurate for small u."""
    u = np.asarray(u, dtype=float)
    return 1 - u / 2 + u**2 / 6 - u**3 / 24 + u**4 / 120 - u**5 / 720


def expm1_ratio(u):
    u = np.asarray(u, dtype=float)
    small = u < _SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    return np.where(small, expm1_ratio_series(u), -np.expm1(-safe) / safe)


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


def filter_value(spec: FilterSpec, lam: float, t):
    t_arr = _check_args(lam, t)
    if spec.kind == "ridge":
        g = 1.0 / (t_arr + lam)
    elif spec.kind == "gradient_flow":
        g = expm1_ratio(t_arr / lam) / lam
    else:
        keep = t_arr >= lam
        g = np.where(keep, 1.0 / np.where(keep, t_arr, 1.0), 0.0)
    return _scalar(g, t)


def residual_value(spec: FilterSpec, lam: float, t):
    """1 - t g(t) in closed form for each family."""
    t_arr = _check_args(lam, t)
    if spec.kind == "ridge":
        res = lam / (t_arr + lam)
    elif spec.kind == "gradient_flow":
        res = np.exp(-t_arr / lam)
    else:
        res = (t_arr < lam).astype(float)
    return _scalar(res, t)


@dataclass
class InequalityRow:
    filter: str
    inequality: str
    theta: float
    lam: float
    worst_t: float
    ratio: float
    bound: float
    passed: bool


@dataclass
class FilterReport:
    rows: list[InequalityRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def violations(self) -> list[InequalityRow]:
        return [r for r in self.rows if not r.passed]

    def worst(self, inequality: str) -> InequalityRow:
        rows = [r for r in self.rows if r.inequality == inequality]
        return max(rows, key=lambda r: r.ratio - r.bound)


def default_lambda_grid(points: int = 25, lo_exp: float = -4.0, hi_exp: float = 0.0):
    return np.logspace(lo_exp, hi_exp, points)


def default_approximation_thetas(tau: float, step: float = 0.25):
    thetas = np.arange(0.0, tau + 1e-12, step)
    return np.unique(np.append(thetas, tau))


def verify_filter_inequalities(spec: FilterSpec, kappa2: float, lambda_grid, t_grid,
                               theta_grid=STABILITY_THETAS, approx_theta_grid=None,
                               slack: float = 1e-12) -> FilterReport:
    """Maximise both normalised ratios over the grids and record the worst t.

    approx_theta_grid defaults to quarter steps over [0, tau].  Violations are
    report entries; nothing raises.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0 or np.any(t < 0) or np.any(t > kappa2 * (1 + 1e-12)):
        raise ValueError("t_grid must be a nonempty subset of [0, kappa^2]")
    if approx_theta_grid is None:
        approx_theta_grid = default_approximation_thetas(spec.tau)
    report = FilterReport()
    for lam in np.asarray(lambda_grid, dtype=float):
        g = filter_value(spec, lam, t)
        res = np.abs(residual_value(spec, lam, t))
        for theta in theta_grid:
            ratio = t ** theta * g / lam ** (theta - 1)
            k = int(np.argmax(ratio))
            report.rows.append(InequalityRow(spec.kind, "stability", float(theta), float(lam),
                                             float(t[k]), float(ratio[k]), spec.E,
                                             bool(ratio[k] <= spec.E + slack)))
        for theta in approx_theta_grid:
            ratio = t ** theta * res / lam ** theta
            k = int(np.argmax(ratio))
            report.rows.append(InequalityRow(spec.kind, "approximation", float(theta), float(lam),
                                             float(t[k]), float(ratio[k]), spec.F,
                                             bool(ratio[k] <= spec.F + slack)))
    return report
