import numpy as np
import pytest

from kfpbench.airy import (
    airy_resolvent_norm,
    delta_source_norm,
    inverse_p_norm,
    mode_resolvent_norm,
    mode_sweep,
    numerical_range_bound,
)
from kfpbench.errors import TruncationError
from kfpbench.oscillator import HermiteVector, apply_p


@pytest.mark.parametrize("lam", [0.0, 1.0, 10.0, -7.0])
def test_zero_frequency_is_diagonal(lam):
    # P_0 = O is diagonal with eigenvalues n + 1/2
    assert mode_resolvent_norm(0.0, lam, 32).norm == pytest.approx(1 / np.hypot(0.5, lam), rel=1e-12)


def test_symmetries_of_mode_norm():
    a = mode_resolvent_norm(2.0, 3.0, 96).norm
    assert mode_resolvent_norm(-2.0, 3.0, 96).norm == pytest.approx(a, rel=1e-10)
    assert mode_resolvent_norm(2.0, -3.0, 96).norm == pytest.approx(a, rel=1e-10)


def test_numerical_range_dominates():
    for xi, lam in [(0.5, 3.0), (3.0, 10.0), (10.0, 5.0), (1.0, 40.0)]:
        m = mode_resolvent_norm(xi, lam, 128)
        assert m.norm <= numerical_range_bound(xi, lam) * (1 + 1e-9)


def test_strict_mode_refuses_unresolved_points():
    with pytest.raises(TruncationError):
        mode_resolvent_norm(40.0, 90.0, 16)


def test_sweep_converges_between_truncations():
    xis = [0.0, 1.0, 5.0]
    lams = [0.0, 2.0, 20.0]
    a, b = mode_sweep(xis, lams, 48), mode_sweep(xis, lams, 96)
    assert b.unresolved == 0
    assert abs(a.sup_resolved - b.sup_resolved) <= 1e-8 * b.sup_resolved
    assert len(b.points) == 9


def test_airy_norm_matches_fourier_kernel():
    # Fourier side: -d^2 + 2it becomes xi^2 - 2 d/dxi, inverted by a Volterra kernel
    x = np.linspace(-7, 7, 1500)
    h = x[1] - x[0]
    K = 0.5 * np.exp((x[:, None] ** 3 - x[None, :] ** 3) / 6) * (x[None, :] > x[:, None])
    K[np.diag_indices(x.size)] = 0.25
    ref = np.linalg.svd(K * h, compute_uv=False)[0]
    res = airy_resolvent_norm()
    assert res.norm == pytest.approx(ref, rel=2e-3)
    assert res.conjugate_norm == pytest.approx(res.norm, rel=1e-10)


def test_inverse_p_norm():
    assert inverse_p_norm(HermiteVector.basis(0, 3)) == float("inf")
    g = apply_p(HermiteVector.basis(0, 2))
    # p phi_0 / sqrt|p| squared integrates to int |p| phi_0^2 = 1/sqrt(pi)
    assert inverse_p_norm(g) == pytest.approx(np.pi ** -0.25, rel=1e-10)


def test_delta_source_ratio_bounded():
    g = apply_p(HermiteVector.basis(0, 2))
    ratios = [delta_source_norm(g, lam).ratio for lam in (0.0, 10.0, 100.0)]
    assert all(0 < r < 2 for r in ratios)
