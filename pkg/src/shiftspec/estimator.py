"""Importance-weighted spectral estimators in the span of the sample kernels.

With anchors x_1..x_n, weights W = diag(w_i) and Gram matrix K, the weighted
empirical operator acts on anchor coefficients as (1/n) W K.  Conjugating by
W^(1/2) gives the symmetric matrix M = (1/n) W^(1/2) K W^(1/2) with the same
nonzero spectrum, so the estimator is

    c = (1/n) W^(1/2) U g(Lambda) U^T W^(1/2) y,     M = U Lambda U^T,

and f_hat = sum_i c_i K(., x_i).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh

from .filters import FilterSpec, filter_value
from .mercer import KernelSpec, MercerFunction, _coeff_interp_norm, map_chunks


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    ws: np.ndarray

    def __post_init__(self):
        xs, ys, ws = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.xs, self.ys, self.ws))
        if not xs.shape == ys.shape == ws.shape or xs.ndim != 1:
            raise ValueError("xs, ys, ws must be vectors of equal length")
        if xs.size < 1:
            raise ValueError("dataset must be nonempty")
        for name, a in (("xs", xs), ("ys", ys), ("ws", ws)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains NaN or Inf")
        if np.any(ws < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "ws", ws)

    @property
    def n(self) -> int:
        return self.xs.size

    def with_weights(self, ws) -> "Dataset":
        return Dataset(self.xs, self.ys, ws)


@dataclass
class SpectralEstimate:
    anchors: np.ndarray
    coeffs: np.ndarray
    mercer_coeffs: np.ndarray
    fit_meta: dict = field(default_factory=dict)

    def as_function(self) -> MercerFunction:
        return MercerFunction(self.mercer_coeffs)


def _features_and_gram(ds: Dataset, spec: KernelSpec):
    phi = spec.features(ds.xs)
    return phi, (phi * spec.eigenvalues) @ phi.T


def assemble_weighted_operator(ds: Dataset, spec: KernelSpec, gram=None) -> np.ndarray:
    """M = (1/n) W^(1/2) K W^(1/2)."""
    K = spec.gram(ds.xs) if gram is None else gram
    sw = np.sqrt(ds.ws)
    M = (sw[:, None] * K * sw[None, :]) / ds.n
    return (M + M.T) / 2


def _estimate(ds, spec, phi, c, meta):
    b = spec.eigenvalues * (phi.T @ c)
    return SpectralEstimate(ds.xs.copy(), c, b, meta)


def _top_eigenvalue(M):
    n = M.shape[0]
    if n <= 64:
        return float(scipy.linalg.eigvalsh(M, subset_by_index=[n - 1, n - 1])[0])
    # fixed start vector keeps Lanczos deterministic
    return float(eigsh(M, k=1, which="LA", v0=np.ones(n), return_eigenvectors=False)[0])


def fit(ds: Dataset, spec: KernelSpec, filt: FilterSpec, lam: float,
        solver: str = "eigh") -> SpectralEstimate:
    """Weighted spectral estimator g_lambda(L_hat) S_hat^* y.

    solver="direct" is the ridge fast path: one Cholesky solve of
    (M + lambda I) v = (1/n) W^(1/2) y, then c = W^(1/2) v.
    """
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be positive and finite, got {lam}")
    if solver not in ("eigh", "direct"):
        raise ValueError(f"unknown solver {solver!r}")
    if solver == "direct" and filt.kind != "ridge":
        raise ValueError("the direct solver only applies to the ridge filter")
    phi, K = _features_and_gram(ds, spec)
    M = assemble_weighted_operator(ds, spec, gram=K)
    sw = np.sqrt(ds.ws)
    n = ds.n
    rhs = sw * ds.ys / n
    try:
        if solver == "eigh":
            evals, U = scipy.linalg.eigh(M)
            # PSD matrix: negative eigenvalues are round-off
            evals = np.maximum(evals, 0.0)
            g = filter_value(filt, lam, evals)
            c = sw * (U @ (g * (U.T @ rhs)))
            top = float(evals[-1])
        else:
            v = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M + lam * np.eye(n)), rhs)
            c = sw * v
            top = _top_eigenvalue(M)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise FitError(f"{solver} failed for n={n}, lambda={lam:.3g}: {exc}") from exc
    if not np.all(np.isfinite(c)):
        raise FitError(f"non-finite coefficients for n={n}, lambda={lam:.3g}")
    meta = {"filter": filt.kind, "lambda": float(lam), "spectrum_max": top,
            "kappa2": spec.kappa2, "clip_flag": bool(top > spec.kappa2), "D": float("inf"),
            "solver": solver}
    return _estimate(ds, spec, phi, c, meta)


def fit_truncated(ds: Dataset, spec: KernelSpec, filt: FilterSpec, lam: float, rule,
                  solver: str = "eigh") -> SpectralEstimate:
    """Same as fit() with weights clamped to min(w_i, D)."""
    est = fit(ds.with_weights(np.minimum(ds.ws, rule.D)), spec, filt, lam, solver=solver)
    est.fit_meta["D"] = float(rule.D)
    return est


def ridge_direct_coeffs(ds: Dataset, spec: KernelSpec, lam: float) -> np.ndarray:
    """Reference solve of ((1/n) W K + lambda I) c = (1/n) W y, no symmetrisation."""
    K = spec.gram(ds.xs)
    A = ds.ws[:, None] * K / ds.n + lam * np.eye(ds.n)
    return np.linalg.solve(A, ds.ws * ds.ys / ds.n)


def predict(est: SpectralEstimate, spec: KernelSpec, x):
    """sum_i c_i K(x, anchor_i)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    kphi_a = spec.features(est.anchors) * spec.eigenvalues
    out = map_chunks(lambda c: (spec.features(c) @ kphi_a.T) @ est.coeffs,
                     np.atleast_1d(x), spec.j_max)
    return float(out[0]) if x.ndim == 0 else out


def predict_mercer(est: SpectralEstimate, spec: KernelSpec, x):
    """sum_j b_j e_j(x) from the projected coefficients."""
    x = np.asarray(x, dtype=float)
    out = map_chunks(lambda c: spec.features(c) @ est.mercer_coeffs, np.atleast_1d(x), spec.j_max)
    return float(out[0]) if x.ndim == 0 else out


def error_norm(est: SpectralEstimate, f_rho: MercerFunction, spec: KernelSpec, gamma: float) -> float:
    """||f_hat - f_rho|| in [H]^gamma, computed on Mercer coefficients."""
    if gamma > 1:
        raise ValueError(f"gamma must be <= 1, got {gamma}")
    return _coeff_interp_norm(est.mercer_coeffs - f_rho.coeffs, spec, gamma)


@dataclass(frozen=True)
class GuardReport:
    spectrum_max: float
    kappa2: float
    clip_flag: bool

    @property
    def headroom(self) -> float:
        return self.kappa2 - self.spectrum_max


def operator_norm_guard(meta: dict) -> GuardReport:
    return GuardReport(meta["spectrum_max"], meta["kappa2"], bool(meta["clip_flag"]))
