import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shiftspec.mercer import (KernelSpec, MercerFunction, SourceCondition, effective_dimension,
                              effective_dimension_constants, eigenfunction, eigenvalue,
                              embedding_norm_estimate, interp_norm, kernel_eval,
                              make_source_function)


@pytest.fixture(scope="module")
def spec2():
    return KernelSpec(beta=2.0, j_max=4096)


def zeta_partial(s, J):
    # independent of numpy's vectorised power path
    return math.fsum(j ** -s for j in range(1, J + 1))


@pytest.mark.parametrize("beta,j,expected", [(2, 1, 1.0), (2, 2, 0.25), (1.5, 4, 0.125)])
def test_eigenvalue(beta, j, expected):
    assert eigenvalue(KernelSpec(beta, 16), j) == pytest.approx(expected, abs=1e-15)


def test_eigenvalue_index_out_of_range(spec2):
    with pytest.raises(IndexError):
        eigenvalue(spec2, 0)
    with pytest.raises(IndexError):
        eigenvalue(spec2, spec2.j_max + 1)


def test_eigenvalues_strictly_decreasing_positive(spec2):
    t = spec2.eigenvalues
    assert np.all(t > 0) and np.all(np.diff(t) < 0)


@pytest.mark.parametrize("bad", [1.0, 0.5, -2])
def test_kernel_spec_rejects_non_trace_class(bad):
    with pytest.raises(ValueError, match="beta"):
        KernelSpec(bad)


def test_eigenfunction_values(spec2):
    assert eigenfunction(spec2, 1, 0.0) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert eigenfunction(spec2, 2, 0.5) == pytest.approx(-math.sqrt(2), abs=1e-14)
    with pytest.raises(ValueError):
        eigenfunction(spec2, 1, 1.5)


def test_eigenfunctions_orthonormal_by_quadrature(spec2):
    nodes, weights = np.polynomial.legendre.leggauss(2048)
    x, w = (nodes + 1) / 2, weights / 2
    J = 40
    E = np.array([eigenfunction(spec2, j, x) for j in range(1, J + 1)])
    gram = (E * w) @ E.T
    assert np.max(np.abs(gram - np.eye(J))) < 1e-10


def test_kernel_symmetric(spec2):
    rng = np.random.default_rng(1)
    a, b = rng.random(50), rng.random(50)
    assert np.allclose(kernel_eval(spec2, a, b), kernel_eval(spec2, b, a), rtol=0, atol=1e-14)
    assert np.all(kernel_eval(spec2, a, a) >= 0)


def test_kernel_at_origin_matches_zeta():
    spec = KernelSpec(2.0, j_max=10_000)
    assert abs(kernel_eval(spec, 0.0, 0.0) - math.pi ** 2 / 3) < 1e-3
    assert kernel_eval(spec, 0.0, 0.0) == pytest.approx(2 * zeta_partial(2, 10_000), rel=1e-12)


def test_gram_psd_on_random_sets(spec2):
    rng = np.random.default_rng(7)
    worst = min(np.linalg.eigvalsh(spec2.gram(rng.random(rng.integers(2, 51)))).min()
                for _ in range(100))
    assert worst >= -1e-10


def test_kernel_diagonal_below_kappa2(spec2):
    x = np.linspace(0, 1, 10_000)
    diag = np.concatenate([np.einsum("ij,ij,j->i", f, f, spec2.eigenvalues)
                           for f in (spec2.features(c) for c in np.array_split(x, 10))])
    assert diag.max() <= spec2.kappa2 * (1 + 1e-12)
    assert spec2.kappa2 == pytest.approx(2 * zeta_partial(2, 4096), rel=1e-12)
    assert spec2.kappa2 >= 1


def test_interp_norm_examples(spec2):
    e1 = np.zeros(spec2.j_max); e1[0] = 1
    e2 = np.zeros(spec2.j_max); e2[1] = 1
    for g in (0, 0.3, 1):
        assert interp_norm(MercerFunction(e1), spec2, g) == pytest.approx(1.0)
    assert interp_norm(MercerFunction(e2), spec2, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        interp_norm(MercerFunction(e1), spec2, 1.5)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), g1=st.floats(0, 1), g2=st.floats(0, 1))
def test_interp_norm_monotone_in_gamma(seed, g1, g2):
    spec = KernelSpec(2.0, j_max=256)
    a = np.random.default_rng(seed).standard_normal(256) * np.arange(1, 257) ** -1.5
    f = MercerFunction(a)
    lo, hi = sorted((g1, g2))
    assert interp_norm(f, spec, lo) <= interp_norm(f, spec, hi) * (1 + 1e-12)


def test_embedding_chain_1000_functions():
    spec = KernelSpec(2.0, j_max=128)
    rng = np.random.default_rng(3)
    gammas = np.linspace(0, 1, 11)
    for _ in range(1000):
        f = MercerFunction(rng.standard_normal(128) * rng.random(128) ** 3)
        norms = [interp_norm(f, spec, g) for g in gammas]
        assert np.all(np.diff(norms) >= -1e-12 * norms[-1])


def test_source_function_coefficients(spec2):
    f = make_source_function(spec2, SourceCondition(r=0.5, eps_u=0.05, scale=1.0))
    assert f.coeffs[0] == pytest.approx(1.0, abs=1e-15)
    oracle = float(mpmath.power(2, mpmath.mpf("-1.55")))
    assert f.coeffs[1] == pytest.approx(oracle, rel=1e-14)
    assert f.coeffs[1] == pytest.approx(0.34151, abs=1e-5)


@pytest.mark.parametrize("r", [0.25, 0.35, 0.5, 0.75, 1.0])
def test_source_norm_isometry(spec2, r):
    src = SourceCondition(r=r)
    f = make_source_function(spec2, src)
    if 2 * r <= 1:
        assert interp_norm(f, spec2, 2 * r) == pytest.approx(f.source_norm, rel=1e-12)
    # the isometry is a coefficient identity and holds for any u
    u = np.random.default_rng(0).standard_normal(spec2.j_max)
    lifted = spec2.eigenvalues ** r * u
    weighted = np.sqrt(np.sum(lifted ** 2 * spec2.eigenvalues ** (-2 * r)))
    assert weighted == pytest.approx(np.linalg.norm(u), rel=1e-12)


def test_source_function_sup_bound(spec2):
    f = make_source_function(spec2, SourceCondition(r=0.35))
    x = np.linspace(0, 1, 2001)
    assert np.max(np.abs(f(x))) <= f.sup_bound
    assert abs(f(0.0)) <= f.sup_bound


def test_source_function_rejects_unbounded(spec2):
    with pytest.raises(ValueError, match="must exceed 1"):
        make_source_function(KernelSpec(1.2), SourceCondition(r=0.2, eps_u=0.05))


def test_effective_dimension_large_lambda():
    spec = KernelSpec(2.0, 4096)
    assert effective_dimension(spec, 1e9) < 2e-9 * math.pi ** 2 / 6


def test_effective_dimension_closed_form():
    lam = 0.01
    oracle = math.pi / (2 * math.sqrt(lam)) / math.tanh(math.pi / math.sqrt(lam)) - 0.5
    value = effective_dimension(KernelSpec(2.0, 10_000), lam)
    assert abs(value - oracle) < 0.01
    assert value == pytest.approx(15.208, abs=0.011)


@pytest.mark.parametrize("beta", [1.5, 2.0, 3.0])
def test_effective_dimension_sandwich(beta):
    lo, hi = effective_dimension_constants(KernelSpec(beta, 10_000), np.logspace(-4, -1, 31))
    assert 0.3 <= lo <= hi <= 3.0


def test_effective_dimension_rejects_nonpositive_lambda(spec2):
    with pytest.raises(ValueError):
        effective_dimension(spec2, 0.0)


def test_embedding_norm_alpha_one_equals_kappa():
    spec = KernelSpec(2.0, j_max=20_000)
    m = embedding_norm_estimate(spec, 1.0, grid_points=200)
    assert m == pytest.approx(math.sqrt(2 * zeta_partial(2, 20_000)), rel=1e-12)
    assert m == pytest.approx(spec.kappa, rel=1e-12)
    assert abs(m - math.sqrt(math.pi ** 2 / 3)) < 1e-4


def test_embedding_norm_alpha_three_quarters():
    J = 20_000
    spec = KernelSpec(2.0, j_max=J)
    m = embedding_norm_estimate(spec, 0.75, grid_points=200)
    assert m == pytest.approx(math.sqrt(2 * zeta_partial(1.5, J)), rel=1e-12)
    # full series: truncated tail 2 sum_{j>J} j^-1.5 < 4/sqrt(J)
    full = math.sqrt(2 * float(mpmath.zeta(1.5)))
    assert full == pytest.approx(2.28577, abs=1e-5)
    assert 0 < full - m < (4 / math.sqrt(J)) / (2 * m)


def test_embedding_norm_monotone_and_domain():
    spec = KernelSpec(2.0, j_max=2048)
    vals = [embedding_norm_estimate(spec, a, grid_points=500) for a in (0.55, 0.7, 0.85, 1.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError, match="alpha"):
        embedding_norm_estimate(spec, 0.5)
