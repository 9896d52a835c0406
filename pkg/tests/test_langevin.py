import numpy as np
import pytest

from kfpbench.boundary import BoundaryOperator
from kfpbench.discrete import Potential, Wall
from kfpbench.errors import NonStochasticPolicy, OutsideContractionClass, ValidationError
from kfpbench.langevin import McConfig, compare_density, policy_operator, simulate


def small(**kw):
    base = dict(n_traj=3000, dt=1e-3, T=0.3, seed=11, hist_times=(0.1, 0.3))
    base.update(kw)
    return McConfig(**base)


def test_mass_bookkeeping_is_exact():
    mc = simulate(small(policy="absorb", q0=-0.3, q_spread=0.2))
    assert mc.alive[0] == 3000
    assert np.all(np.diff(mc.alive) <= 0)
    assert np.array_equal(mc.survival + mc.absorbed, np.ones_like(mc.survival))
    for t, H in mc.histograms.items():
        k = int(np.argmin(np.abs(mc.times - t)))
        assert H.sum() + mc.overflow[t] == mc.alive[k]
    assert mc.alive[-1] < 3000


def test_seed_determinism_and_scheduling_independence():
    cfg = small(n_traj=9000, policy="partial", epsilon=0.5, q0=-0.3)
    a = simulate(cfg, workers=1)
    b = simulate(cfg, workers=3)
    assert np.array_equal(a.alive, b.alive)
    for t in a.histograms:
        assert np.array_equal(a.histograms[t], b.histograms[t])
    c = simulate(small(n_traj=9000, policy="partial", epsilon=0.5, q0=-0.3, seed=12))
    assert not np.array_equal(a.alive, c.alive)


def test_specular_conserves_mass():
    mc = simulate(small(q0=-0.2))
    assert np.all(mc.alive == 3000)
    assert mc.crossings > 0 and mc.reflections == mc.crossings


def test_partial_reflection_frequency():
    mc = simulate(small(n_traj=8000, policy="partial", epsilon=0.3, q0=-0.2, q_spread=0.1, p0=1.0, T=0.5,
                        hist_times=(0.5,)))
    frac = mc.reflections / mc.crossings
    sd = np.sqrt(0.3 * 0.7 / mc.crossings)
    assert abs(frac - 0.3) < 4 * sd


def test_policies_outside_the_stochastic_class():
    with pytest.raises(NonStochasticPolicy):
        policy_operator("change_of_sign")
    with pytest.raises(OutsideContractionClass):
        policy_operator("bounce_back")
    with pytest.raises(NonStochasticPolicy):
        policy_operator(BoundaryOperator.scalar(2.0))
    with pytest.raises(NonStochasticPolicy):
        policy_operator(BoundaryOperator.identity(j=-1))
    with pytest.raises(ValidationError):
        small(policy="partial")


def test_config_validation():
    with pytest.raises(ValidationError):
        small(dt=0.05, wall=Wall("confining", force=4.0, width=1.0))
    with pytest.raises(ValidationError):
        small(hist_times=(0.00015,))
    with pytest.raises(ValidationError):
        small(q0=0.5)
    with pytest.raises(ValidationError):
        McConfig.from_dict({"n_traj": 10, "bogus": 1})
    cfg = small(potential=Potential("tanh", 0.5, 1.0))
    assert McConfig.from_dict(cfg.to_dict()) == cfg


def test_reversal_symmetry_at_stationarity():
    # nearly uniform q and p ~ N(0, 1/2) is the specular equilibrium when V = 0
    cfg = McConfig(n_traj=40000, dt=2e-3, T=0.4, seed=3, q0=-1.5, q_spread=1e3, p0=0.0,
                   hist_times=(0.4,), q_bins=6, p_bins=8, p_max=2.0)
    H = simulate(cfg).histograms[0.4].astype(float)
    R = H[:, ::-1]
    sd = np.sqrt(H + R)
    mask = (H + R) > 0
    assert np.all(np.abs(H - R)[mask] <= 3.5 * sd[mask])


def test_density_comparison_small_ensemble():
    cfg = McConfig(n_traj=20000, dt=1e-3, T=0.5, seed=5, hist_times=(0.5,))
    res = compare_density(simulate(cfg), 0.5)
    assert res.passed
    assert res.pde_mass == pytest.approx(1.0, abs=1e-8)
