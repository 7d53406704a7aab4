"""Source/target pairs with closed-form density ratios.

The target marginal is uniform on [0, 1] in every scenario; only the source
density q changes, and the importance weight is w = 1/q.

  none            q = 1
  bounded_linear  q = 0.5 + x,                      w in [2/3, 2]
  log_tail        q = c_p (1 + ln(1/x))^(-1/p),     w unbounded near 0

For log_tail the substitution u = ln(1/x) turns the x-law into the density
c_p (1 + u)^(-1/p) e^(-u) on [0, inf), which is what the CDF table stores.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .estimator import Dataset
from .mercer import MercerFunction

KINDS = ("none", "bounded_linear", "log_tail")

X_FLOOR = 1e-12
U_MAX = -math.log(X_FLOOR)
_TABLE_INTERVALS = 2048
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_NEWTON_STEPS = 3


def _log_tail_kernel(u, p):
    return (1.0 + u) ** (-1.0 / p) * np.exp(-u)


def _log_tail_upper(z, p):
    """int_z^inf (1+v)^(-1/p) e^(-v) dv = e * Gamma(1 - 1/p, 1 + z)."""
    a = 1.0 - 1.0 / p
    z = np.asarray(z, dtype=float)
    if a == 0:
        return math.e * special.exp1(1.0 + z)
    return math.e * special.gamma(a) * special.gammaincc(a, 1.0 + z)


def _gl_integral(f, lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid, half = (hi + lo) / 2, (hi - lo) / 2
    nodes = mid[..., None] + half[..., None] * _GL_NODES
    return half * (f(nodes) @ _GL_WEIGHTS)


@dataclass(frozen=True)
class ShiftScenario:
    kind: str
    p: float = math.inf
    c_norm: float = field(init=False)
    _u_grid: np.ndarray = field(init=False, repr=False, compare=False)
    _survival: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}; expected one of {KINDS}")
        p = float(self.p)
        if self.kind == "log_tail" and not 1 <= p < math.inf:
            raise ValueError(f"log_tail needs a finite moment exponent p >= 1, got {p}")
        if self.kind != "log_tail" and p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        object.__setattr__(self, "p", p)
        u_grid = survival = None
        c = 1.0
        if self.kind == "log_tail":
            u_grid = np.linspace(0.0, U_MAX, _TABLE_INTERVALS + 1)
            seg = _gl_integral(lambda v: _log_tail_kernel(v, p), u_grid[:-1], u_grid[1:])
            tail = float(_log_tail_upper(U_MAX, p))
            survival = np.concatenate([np.cumsum(seg[::-1])[::-1] + tail, [tail]])
            c = 1.0 / survival[0]
        object.__setattr__(self, "c_norm", float(c))
        object.__setattr__(self, "_u_grid", u_grid)
        object.__setattr__(self, "_survival", survival)
        err = abs(self.normalization() - 1.0)
        if err > 1e-10:
            raise RuntimeError(f"source density of {self.kind} integrates to 1 only within {err:.3g}")

    # -- densities ---------------------------------------------------------

    def _check_x(self, x, allow_zero=True):
        x = np.asarray(x, dtype=float)
        if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
            raise ValueError("x must lie in [0, 1]")
        if not allow_zero and np.any(x == 0):
            raise ValueError(f"density ratio of {self.kind} diverges at x = 0")
        return x

    def source_density(self, x):
        x = self._check_x(x)
        if self.kind == "none":
            q = np.ones_like(x)
        elif self.kind == "bounded_linear":
            q = 0.5 + x
        else:
            with np.errstate(divide="ignore"):
                q = self.c_norm * (1.0 - np.log(x)) ** (-1.0 / self.p)
        return float(q) if q.ndim == 0 else q

    def density_ratio(self, x):
        """w(x) = d(target)/d(source) on (0, 1]."""
        x = self._check_x(x, allow_zero=False)
        if self.kind == "none":
            w = np.ones_like(x)
        elif self.kind == "bounded_linear":
            w = 1.0 / (0.5 + x)
        else:
            w = (1.0 - np.log(x)) ** (1.0 / self.p) / self.c_norm
        return float(w) if w.ndim == 0 else w

    @property
    def ratio_sup(self) -> float:
        return {"none": 1.0, "bounded_linear": 2.0, "log_tail": math.inf}[self.kind]

    def normalization(self) -> float:
        """Quadrature of the source density over [0, 1]."""
        if self.kind != "log_tail":
            val, _ = integrate.quad(self.source_density, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
            return val
        # x-space quadrature on (X_FLOOR, 1]; the mass below X_FLOOR is analytic
        q = lambda x: self.c_norm * (1.0 - math.log(x)) ** (-1.0 / self.p)
        val, _ = integrate.quad(q, X_FLOOR, 1.0, points=[1e-9, 1e-6, 1e-3, 0.1],
                                limit=400, epsabs=1e-14, epsrel=1e-13)
        return val + self.c_norm * float(_log_tail_upper(U_MAX, self.p))

    # -- CDF and sampling --------------------------------------------------

    def _survival_u(self, u):
        """int_u^inf (1+v)^(-1/p) e^(-v) dv from the cached table."""
        u = np.asarray(u, dtype=float)
        h = self._u_grid[1]
        k = np.clip(np.floor(u / h).astype(int), 0, _TABLE_INTERVALS - 1)
        inside = self._survival[k] - _gl_integral(lambda v: _log_tail_kernel(v, self.p),
                                                  self._u_grid[k], np.minimum(u, U_MAX))
        return np.where(u <= U_MAX, inside, _log_tail_upper(np.maximum(u, U_MAX), self.p))

    def cdf(self, x):
        x = self._check_x(x)
        if self.kind == "none":
            F = x.copy()
        elif self.kind == "bounded_linear":
            F = 0.5 * x + 0.5 * x ** 2
        else:
            with np.errstate(divide="ignore"):
                u = -np.log(x)
            F = np.where(x > 0, self.c_norm * self._survival_u(np.where(x > 0, u, 0.0)), 0.0)
        return float(F) if F.ndim == 0 else F

    def inverse_cdf(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v <= 0) or np.any(v > 1):
            raise ValueError("inverse_cdf takes levels in (0, 1]")
        if self.kind == "none":
            return v.copy()
        if self.kind == "bounded_linear":
            return (np.sqrt(1.0 + 8.0 * v) - 1.0) / 2.0
        target = v / self.c_norm
        # bisection on the decreasing survival table, log-linear start inside the cell
        s = self._survival
        k = np.clip(np.searchsorted(-s, -target, side="right") - 1, 0, _TABLE_INTERVALS - 1)
        lo, hi = np.log(s[k]), np.log(s[k + 1])
        frac = np.clip((lo - np.log(target)) / (lo - hi), 0.0, 1.0)
        u = self._u_grid[k] + frac * self._u_grid[1]
        below = target < s[-1]
        u = np.where(below, U_MAX, u)
        for _ in range(_NEWTON_STEPS):
            u = u + (self._survival_u(u) - target) / _log_tail_kernel(u, self.p)
            u = np.maximum(u, 0.0)
        return np.exp(-u)

    def sample(self, rng: np.random.Generator, size=None):
        v = 1.0 - rng.random(size)
        x = self.inverse_cdf(v)
        return float(x) if np.ndim(x) == 0 else x

    # -- tails -------------------------------------------------------------

    def target_tail(self, t):
        """Target-measure of {x : w(x) >= t}."""
        t = np.asarray(t, dtype=float)
        if self.kind == "none":
            out = (t <= 1.0).astype(float)
        elif self.kind == "bounded_linear":
            with np.errstate(divide="ignore"):
                out = np.clip(1.0 / t - 0.5, 0.0, 1.0)
        else:
            out = np.minimum(1.0, np.exp(1.0 - (self.c_norm * np.maximum(t, 0.0)) ** self.p))
        return float(out) if out.ndim == 0 else out


def source_sample(scn: ShiftScenario, rng: np.random.Generator, size=None):
    return scn.sample(rng, size)


def density_ratio(scn: ShiftScenario, x):
    return scn.density_ratio(x)


def truncate_ratio(w_value, D: float):
    """min(w, D)."""
    if not D > 0:
        raise ValueError("truncation level D must be positive")
    w = np.asarray(w_value, dtype=float)
    if np.any(w < 0):
        raise ValueError("density ratio values must be nonnegative")
    out = np.minimum(w, D)
    return float(out) if out.ndim == 0 else out


def nu_exponent(p: float, m: int) -> float:
    if not 1 <= p < math.inf:
        raise ValueError(f"truncation needs a finite p >= 1, got {p}")
    if int(m) != m or m < 2:
        raise ValueError(f"m must be an integer >= 2, got {m}")
    return 1.0 / (p * (m - 1) + 1)


@dataclass(frozen=True)
class TruncationRule:
    m: int
    nu: float
    D: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError("m must be an integer >= 2")
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if not self.D > 0:
            raise ValueError("D must be positive")

    @classmethod
    def for_sample_size(cls, p: float, m: int, n: int) -> "TruncationRule":
        nu = nu_exponent(p, m)
        return cls(m=m, nu=nu, D=float(n) ** nu)


# -- moment condition --------------------------------------------------------

@dataclass
class MomentRow:
    scenario: str
    p: float
    m: int
    lhs: float
    rhs: float
    margin: float
    passed: bool
    status: str  # "pass", "fail" or "inconclusive"


def _quad_checked(f, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(f, a, b, limit=400, epsabs=0.0, epsrel=1e-11, full_output=1)
    val, abserr = out[0], out[1]
    ok = len(out) == 3 and np.isfinite(val) and abserr <= 1e-8 * max(abs(val), 1e-300)
    return val, ok


def moment_lhs(scn: ShiftScenario, p: float, m: int) -> tuple[float, bool]:
    """(int w^(p(m-1)) d target)^(1/p), or ess-sup of w^(m-1) for p = inf.

    Returns (value, converged).
    """
    if math.isinf(p):
        return scn.ratio_sup ** (m - 1), True
    k = p * (m - 1)
    if scn.kind == "none":
        return 1.0, True
    if scn.kind == "bounded_linear":
        val, ok = _quad_checked(lambda x: (0.5 + x) ** -k, 0.0, 1.0)
    else:
        # u-space: w(e^-u) = (1+u)^(1/p) / c_p, d target = e^-u du
        c, sp = scn.c_norm, scn.p
        val, ok = _quad_checked(lambda u: c ** -k * (1.0 + u) ** (k / sp) * math.exp(-u), 0.0, math.inf)
    return val ** (1.0 / p), ok


def moment_rhs(m: int, L: float, sigma: float) -> float:
    return 0.5 * math.factorial(m) * L ** (m - 2) * sigma ** 2


def moment_check(scn: ShiftScenario, p: float, m_max: int, L: float, sigma: float,
                 rel_tol: float = 1e-12) -> list[MomentRow]:
    if m_max < 2:
        raise ValueError("m_max must be >= 2")
    rows = []
    for m in range(2, m_max + 1):
        lhs, ok = moment_lhs(scn, p, m)
        rhs = moment_rhs(m, L, sigma)
        margin = rhs - lhs
        if not ok:
            status = "inconclusive"
        else:
            status = "pass" if margin >= -rel_tol * rhs else "fail"
        rows.append(MomentRow(scn.kind, p, m, lhs, rhs, margin, status == "pass", status))
    return rows


def moment_constants(scn: ShiftScenario, p: float, m_max: int) -> tuple[float, float]:
    """(L, sigma) with the smallest admissible sigma and, given it, the smallest L."""
    lhs = {m: moment_lhs(scn, p, m)[0] for m in range(2, m_max + 1)}
    sigma2 = lhs[2]
    L = max([(2 * lhs[m] / (math.factorial(m) * sigma2)) ** (1 / (m - 2))
             for m in range(3, m_max + 1)], default=1.0)
    # guard against round-off on the boundary
    return L * (1 + 1e-9), math.sqrt(sigma2 * (1 + 1e-9))


def tail_constants(scn: ShiftScenario) -> tuple[float, float]:
    """(L, sigma) for the exponential tail bound 2 P(w >= t) <= sigma^2 exp(-t^p / L).

    Bounded ratios use L = sigma^2 = sup w.  For log_tail the target tail is
    min(1, e exp(-(c_p t)^p)), matched exactly by L = c_p^-p, sigma^2 = 2e.
    """
    if scn.kind == "log_tail":
        return scn.c_norm ** -scn.p, math.sqrt(2 * math.e)
    s = scn.ratio_sup
    return s, math.sqrt(s)


def generate_dataset(scn: ShiftScenario, f_rho: MercerFunction, n: int, noise_bound: float,
                     rng: np.random.Generator) -> Dataset:
    """Source draws x_i, labels f(x_i) + uniform noise, and exact weights w(x_i)."""
    if noise_bound < 0:
        raise ValueError("noise_bound must be nonnegative")
    xs = np.atleast_1d(scn.sample(rng, n))
    noise = rng.uniform(-noise_bound, noise_bound, n) if noise_bound > 0 else np.zeros(n)
    ys = f_rho(xs) + noise
    return Dataset(xs, ys, scn.density_ratio(xs))
