import numpy as np
import pytest
from numpy.polynomial.hermite import hermval
from scipy.special import factorial, roots_hermite

from kfpbench.errors import ValidationError
from kfpbench.oscillator import (
    HermiteVector,
    apply_oscillator,
    apply_p,
    build_quadrature,
    dp_matrix,
    hermite_table,
    hs_norm,
    p_matrix,
    solve_oscillator,
)


def reference_phi(n, p):
    c = np.zeros(n + 1)
    c[n] = 1.0
    norm = 1.0 / np.sqrt(2.0 ** n * factorial(n) * np.sqrt(np.pi))
    return norm * hermval(p, c) * np.exp(-p * p / 2)


def test_table_matches_textbook_formula():
    p = np.linspace(-6, 6, 41)
    tab = hermite_table(12, p)
    for n in range(13):
        assert np.allclose(tab[n], reference_phi(n, p), atol=1e-13)


def test_table_orthonormal_under_gauss_hermite():
    x, w = roots_hermite(80)
    tab = hermite_table(40, x) * np.exp(x * x / 2)
    G = (tab * w) @ tab.T
    assert np.abs(G - np.eye(41)).max() < 1e-12


def test_large_argument_does_not_underflow_early():
    tab = hermite_table(200, np.array([25.0]))
    assert np.all(np.isfinite(tab))
    assert tab[200, 0] > 0


def test_p_ladder_against_quadrature():
    x, w = roots_hermite(60)
    tab = hermite_table(20, x) * np.exp(x * x / 2)
    P = (tab * w * x) @ tab.T
    assert np.allclose(P[:20, :20], p_matrix(20), atol=1e-12)
    u = HermiteVector(np.random.default_rng(0).normal(size=10))
    pu = apply_p(u)
    assert np.allclose(pu.coeffs, P[:11, :10] @ u.coeffs, atol=1e-12)


def test_derivative_matrix_is_skew_and_matches_finite_difference():
    D = dp_matrix(15)
    assert np.allclose(D, -D.T)
    p = np.linspace(-3, 3, 7)
    h = 1e-5
    fd = (hermite_table(15, p + h) - hermite_table(15, p - h)) / (2 * h)
    assert np.allclose(D[:, 3] @ hermite_table(14, p), fd[3], atol=1e-8)


def test_oscillator_roundtrip_and_spectrum():
    c = np.random.default_rng(1).normal(size=8) + 0j
    u = HermiteVector(c)
    assert np.allclose(solve_oscillator(apply_oscillator(u, 0.5), 0.5).coeffs, c)
    assert np.allclose(apply_oscillator(HermiteVector.basis(3, 5)).coeffs[3], 3.5)
    with pytest.raises(ValidationError):
        solve_oscillator(u, -0.5)


def test_h1_norm_is_energy_of_half_plus_O():
    c = np.random.default_rng(2).normal(size=6)
    n = np.arange(1, 7)
    assert hs_norm(HermiteVector(c), 1.0) == pytest.approx(np.sqrt(np.sum(n * c ** 2)))


@pytest.mark.parametrize("kind", ["dp", "|p|dp", "p·dp"])
def test_quadrature_integrates_gaussian_moments(kind):
    q = build_quadrature(40, kind)
    f = np.exp(-q.nodes ** 2) * q.nodes ** 2
    exact = {"dp": np.sqrt(np.pi) / 2, "|p|dp": 1.0, "p·dp": 0.0}[kind]
    assert q.integrate(f) == pytest.approx(exact, abs=1e-12)
