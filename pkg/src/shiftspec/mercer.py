"""Synthetic Mercer kernel on [0, 1] with a known spectrum.

The kernel is K(x, x') = sum_j t_j e_j(x) e_j(x') with t_j = j**-beta and
e_j(x) = sqrt(2) cos(j pi x).  The cosine family is orthonormal under the
uniform law on [0, 1], which is the target marginal in every scenario, so
interpolation-space norms reduce to weighted sums of squared coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import zeta

SQRT2 = np.sqrt(2.0)
BASES = ("cosine",)

# rows per block when building feature matrices for the sup-over-grid search
_CHUNK = 1024


@dataclass(frozen=True)
class KernelSpec:
    beta: float
    j_max: int = 4096
    basis: str = "cosine"

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"beta must exceed 1 for a trace-class kernel, got {self.beta}")
        if int(self.j_max) != self.j_max or self.j_max < 1:
            raise ValueError(f"j_max must be a positive integer, got {self.j_max}")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; expected one of {BASES}")

    @cached_property
    def indices(self) -> np.ndarray:
        return np.arange(1, self.j_max + 1, dtype=float)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return self.indices ** -self.beta

    @cached_property
    def kappa2(self) -> float:
        """sup_x K(x, x); attained at x = 0 for the cosine basis."""
        return float(2.0 * self.eigenvalues.sum())

    @property
    def kappa(self) -> float:
        return float(np.sqrt(self.kappa2))

    @property
    def alpha0(self) -> float:
        # uniformly bounded eigenfunctions
        return 1.0 / self.beta

    def features(self, x) -> np.ndarray:
        """Matrix of e_j(x_i), shape (len(x), j_max)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return SQRT2 * np.cos(np.pi * np.outer(x, self.indices))

    def gram(self, x, y=None) -> np.ndarray:
        fx = self.features(x)
        fy = fx if y is None else self.features(y)
        return (fx * self.eigenvalues) @ fy.T


def map_chunks(fn, x, width, budget=2 ** 24):
    """Apply a row-wise fn to x in slices so x.size * width stays under budget."""
    step = max(1, budget // max(int(width), 1))
    if x.size <= step:
        return fn(x)
    return np.concatenate([fn(x[i:i + step]) for i in range(0, x.size, step)])


def _check_index(spec: KernelSpec, j):
    j = np.asarray(j)
    if np.any(j < 1) or np.any(j > spec.j_max) or np.any(j != np.floor(j)):
        raise IndexError(f"eigen-index must be an integer in [1, {spec.j_max}], got {j}")
    return j


def _check_unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    return x


def eigenvalue(spec: KernelSpec, j):
    j = _check_index(spec, j).astype(float)
    return float(j ** -spec.beta) if j.ndim == 0 else j ** -spec.beta


def eigenfunction(spec: KernelSpec, j, x):
    j = _check_index(spec, j)
    x = _check_unit_interval(x)
    return SQRT2 * np.cos(j * np.pi * x)


def kernel_eval(spec: KernelSpec, x, x2):
    """K(x, x2) as a truncated Mercer sum; broadcasts over equal-shaped inputs."""
    x = _check_unit_interval(x)
    x2 = _check_unit_interval(x2)
    xs, ys = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(x2))
    vals = np.einsum("ij,ij,j->i", spec.features(xs.ravel()), spec.features(ys.ravel()),
                     spec.eigenvalues)
    vals = vals.reshape(xs.shape)
    return float(vals[0]) if np.ndim(x) == 0 and np.ndim(x2) == 0 else vals


@dataclass(frozen=True)
class MercerFunction:
    """Function given by its coefficients in the L2(target) eigenbasis."""

    coeffs: np.ndarray
    sup_bound: float | None = None
    source_norm: float | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ValueError("coeffs must be a vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j = np.arange(1, self.coeffs.size + 1, dtype=float)
        out = map_chunks(lambda c: SQRT2 * np.cos(np.pi * np.outer(c, j)) @ self.coeffs,
                         np.atleast_1d(x), self.coeffs.size)
        return float(out[0]) if x.ndim == 0 else out

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.coeffs ** 2)))


def _coeff_interp_norm(coeffs, spec: KernelSpec, gamma) -> float:
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    c = np.asarray(coeffs, dtype=float)
    if c.size != spec.j_max:
        raise ValueError(f"expected {spec.j_max} coefficients, got {c.size}")
    return float(np.sqrt(np.sum(c ** 2 * spec.eigenvalues ** -gamma)))


def interp_norm(f: MercerFunction, spec: KernelSpec, gamma: float) -> float:
    """Norm in the interpolation space [H]^gamma: sqrt(sum a_j^2 t_j^-gamma)."""
    return _coeff_interp_norm(f.coeffs, spec, gamma)


@dataclass(frozen=True)
class SourceCondition:
    r: float
    eps_u: float = 0.05
    scale: float = 1.0
    tau: float = float("inf")

    def __post_init__(self):
        if not 0 < self.r <= self.tau:
            raise ValueError(f"r must lie in (0, tau={self.tau}], got {self.r}")
        if not self.eps_u > 0:
            raise ValueError("eps_u must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def decay(self, spec: KernelSpec) -> float:
        return spec.beta * self.r + 0.5 + self.eps_u

    def u_coeffs(self, spec: KernelSpec) -> np.ndarray:
        return self.scale * spec.indices ** (-0.5 - self.eps_u)


def make_source_function(spec: KernelSpec, src: SourceCondition) -> MercerFunction:
    """Build f = L_K^r u with u_j = scale * j^(-1/2 - eps_u).

    The reported sup bound sqrt(2) * scale * zeta(beta r + 1/2 + eps_u) holds
    for every truncation length, so it requires that exponent to exceed 1.
    """
    q = src.decay(spec)
    if not q > 1:
        raise ValueError(
            f"beta*r + 1/2 + eps_u = {q:.6g} must exceed 1 for a bounded regression "
            f"function (sup-norm bound sqrt(2)*scale*zeta(beta*r + 1/2 + eps_u))")
    u = src.u_coeffs(spec)
    a = spec.eigenvalues ** src.r * u
    G = float(SQRT2 * src.scale * zeta(q))
    return MercerFunction(a, sup_bound=G, source_norm=float(np.sqrt(np.sum(u ** 2))))


def effective_dimension(spec: KernelSpec, lam: float) -> float:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    t = spec.eigenvalues
    return float(np.sum(t / (t + lam)))


def effective_dimension_tail(spec: KernelSpec, lam: float) -> float:
    """Upper bound on the part of N(lambda) lost to truncation at j_max."""
    # sum_{j > J} t_j/(t_j + lam) <= lam^-1 sum_{j > J} j^-beta <= J^(1-beta) / (lam (beta-1))
    return float(spec.j_max ** (1 - spec.beta) / (lam * (spec.beta - 1)))


def effective_dimension_constants(spec: KernelSpec, lambdas) -> tuple[float, float]:
    """Smallest and largest N(lambda) lambda^(1/beta) over the given lambdas."""
    ratios = [effective_dimension(spec, lam) * lam ** (1 / spec.beta) for lam in lambdas]
    return float(min(ratios)), float(max(ratios))


def embedding_norm_estimate(spec: KernelSpec, alpha: float, grid_points: int = 10_000) -> float:
    """M_alpha = sqrt(sup_x sum_j t_j^alpha e_j(x)^2), sup over a uniform grid plus x = 0."""
    if not 1 / spec.beta < alpha <= 1:
        raise ValueError(f"alpha must lie in (1/beta, 1] = ({1 / spec.beta:.6g}, 1], got {alpha}")
    w = spec.eigenvalues ** alpha
    xs = np.concatenate([[0.0], np.linspace(0.0, 1.0, grid_points)])
    best = 0.0
    for lo in range(0, xs.size, _CHUNK):
        phi = spec.features(xs[lo:lo + _CHUNK])
        best = max(best, float(np.max((phi ** 2) @ w)))
    return float(np.sqrt(best))
