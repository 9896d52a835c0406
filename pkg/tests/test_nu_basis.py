import numpy as np
import pytest

from kfpbench.errors import TruncationError, ValidationError
from kfpbench.nu_basis import (
    NuBasis,
    NuExpansion,
    NuIndexSet,
    apply_parity,
    e_nu,
    e_nu_values,
    expand,
    from_pairs,
    gram_matrices,
    nu_level,
    pairing,
    sign_operator,
    to_pairs,
    verify_eigen,
)
from kfpbench.oscillator import HermiteVector


@pytest.mark.parametrize("nu", [1 / np.sqrt(2), -0.5, 1 / np.sqrt(10), -1 / np.sqrt(16)])
def test_eigen_equation_by_finite_differences(nu):
    # p e = nu (1/2 + O) e with O = (-d^2 + p^2)/2, checked on point values only
    p = np.linspace(-8, 8, 401)
    h = 1e-3
    e = e_nu_values(nu, p)
    d2 = (e_nu_values(nu, p + h) - 2 * e + e_nu_values(nu, p - h)) / h ** 2
    res = p * e - nu * (0.5 * e - 0.5 * d2 + 0.5 * p * p * e)
    assert np.abs(res).max() < 1e-5 * np.abs(e).max()


def test_ladder_route_agrees():
    for nu in (1 / np.sqrt(2), -1 / np.sqrt(6), 1 / np.sqrt(40)):
        assert verify_eigen(nu, 120) < 1e-10


def test_hermite_synthesis_matches_direct_values():
    p = np.linspace(-5, 7, 31)
    for nu in (0.5, -0.5, 1 / np.sqrt(12)):
        assert np.allclose(e_nu(nu, 80)(p), e_nu_values(nu, p), atol=1e-10)


def test_reflection_symmetry_of_phase():
    p = np.linspace(-4, 4, 17)
    assert np.allclose(e_nu_values(0.5, -p), e_nu_values(-0.5, p))


def test_h1_orthonormal_and_p_pairing():
    b = NuBasis(8, 96)
    assert np.abs(b.h1_gram() - np.eye(16)).max() < 1e-12
    for i, mu in enumerate(b.values[:6]):
        for k, nu in enumerate(b.values[:6]):
            val = pairing(HermiteVector(b.E[:, i]), HermiteVector(b.E[:, k]), "p·dp")
            assert abs(val - (nu if i == k else 0.0)) < 1e-10


def test_direct_and_hermite_gram_agree():
    b = NuBasis(6, 96)
    d = gram_matrices(b, source="direct")
    h = gram_matrices(b, source="hermite")
    assert np.abs(d.G_abs - h.G_abs).max() < 1e-9
    assert np.abs(d.G_sgn - np.diag(b.values)).max() < 1e-10
    assert d.min_M_eig > 0


def test_truncation_is_refused():
    with pytest.raises(TruncationError):
        NuBasis(30, 40)
    with pytest.raises(TruncationError):
        e_nu(1 / np.sqrt(60), 50)


def test_level_validation():
    assert nu_level(-1 / np.sqrt(14)) == 7
    with pytest.raises(ValidationError):
        nu_level(0.3)
    with pytest.raises(ValidationError):
        NuIndexSet(3).index(1 / np.sqrt(8))


def test_expand_recovers_span_and_reports_remainder():
    b = NuBasis(5, 80)
    c = np.random.default_rng(0).normal(size=10) + 1j * np.random.default_rng(1).normal(size=10)
    x, rem = expand(b.synthesize(NuExpansion(b.index_set, c)), b)
    assert np.allclose(x.coeffs, c, atol=1e-12)
    assert rem < 1e-10
    _, rem2 = expand(HermiteVector.basis(0, 80), b)
    assert rem2 > 1e-3


def test_parity_algebra():
    idx = NuIndexSet(4)
    x = NuExpansion(idx, np.arange(8) + 1j)
    for j in (1, -1):
        ev, odd = apply_parity(x, "ev", j), apply_parity(x, "odd", j)
        assert np.allclose((ev + odd).coeffs, x.coeffs)
        assert np.allclose(apply_parity(ev, "ev", j).coeffs, ev.coeffs)
        plus, minus = apply_parity(x, "plus", j), apply_parity(x, "minus", j)
        assert np.allclose((plus + minus).coeffs, 2 * ev.coeffs)
        a, b_ = to_pairs(x.coeffs, j)
        assert np.allclose(from_pairs(a, b_, j), x.coeffs)
    assert np.allclose(sign_operator(sign_operator(x)).coeffs, x.coeffs)
    with pytest.raises(ValidationError):
        apply_parity(x, "bogus")
