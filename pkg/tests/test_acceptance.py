"""Acceptance criteria 1-9; each test prints one ``criterion N: PASS|FAIL`` line."""

import time

import numpy as np
import pytest

from kfpbench.airy import delta_source_norm, default_sweep_grid, mode_sweep
from kfpbench.boundary import BoundaryOperator
from kfpbench.discrete import (
    ContourSemigroup,
    assemble,
    crank_nicolson,
    observed_order,
    relative_l2_error,
    smoothing_profile,
    spectrum,
    subelliptic_sweep,
)
from kfpbench.halfline import (
    ModeSource,
    calderon,
    ipp_certificate,
    mode_residual,
    poisson,
    solve_half_line,
    solve_inhomogeneous,
)
from kfpbench.langevin import McConfig, PdeGrid, compare_decay, compare_density, simulate
from kfpbench.nu_basis import NuBasis, NuExpansion, from_pairs, gram_matrices, sign_operator, verify_eigen
from kfpbench.oscillator import HermiteVector, apply_p


def test_criterion_1_eigenbasis(report):
    t0 = time.perf_counter()
    basis = NuBasis(30, 160)
    gram = float(np.abs(basis.h1_gram() - np.eye(60)).max())
    resid = max(verify_eigen(nu, 160) for nu in basis.values)
    pair = float(np.abs(gram_matrices(basis).G_sgn - np.diag(basis.values)).max())
    dt = time.perf_counter() - t0
    ok = gram <= 1e-9 and resid <= 1e-8 and pair <= 1e-8 and dt < 60
    report(1, ok, f"gram={gram:.1e} eigen={resid:.1e} pairing={pair:.1e} time={dt:.1f}s")
    assert ok


def test_criterion_2_calderon_poisson(report):
    basis = NuBasis(20, 120)
    rng = np.random.default_rng(2)
    gamma = NuExpansion(basis.index_set, rng.normal(size=40) + 1j * rng.normal(size=40))
    spectral = 0.5 * (gamma.coeffs - sign_operator(gamma).coeffs)  # 1_{R-}(S)
    exact_c0 = np.array_equal(calderon(gamma, 1).coeffs, spectral)
    traces, resid = True, 0.0
    for sign in (1, -1):
        fld = poisson(gamma, basis, sign).field
        traces &= np.array_equal(fld.trace().coeffs, calderon(gamma, sign).coeffs)
        resid = max(resid, mode_residual(fld))
    ok = exact_c0 and traces and resid <= 1e-9
    report(2, ok, f"C0_exact={exact_c0} trace_exact={traces} interior_residual={resid:.1e}")
    assert ok


def _random_source(basis, seed):
    C = np.random.default_rng(seed).normal(size=(basis.index_set.size, 3)) * (1 + 0.5j)

    def ev(q):
        return np.stack([np.exp(-(q + 2) ** 2), q * np.exp(-(q + 3) ** 2), np.exp(-(q + 1.5) ** 2 / 0.3)], 1) @ C.T

    return ModeSource(basis, ev, (-12.0, 0.0))


def test_criterion_3_bvp(report):
    basis = NuBasis(12, 80)
    nu = 1 / np.sqrt(2)
    src = ModeSource.from_modes(basis, {nu: lambda q: (1 + nu) * np.exp(q), -nu: lambda q: (1 - nu) * np.exp(q)},
                                (-40.0, 0.0))
    fld = solve_half_line(src, BoundaryOperator.zero(), 1)
    g = fld.grid()
    U = fld.modes(g.nodes)
    E = np.zeros_like(U)
    E[:, 0] = E[:, 1] = np.exp(g.nodes)
    manuf = float(np.sqrt(np.sum(g.weights[:, None] * np.abs(U - E) ** 2) / np.sum(g.weights[:, None] * np.abs(E) ** 2)))
    eps = 0.4
    ops = [BoundaryOperator.zero(), BoundaryOperator.identity(), BoundaryOperator.scalar(1 / 3),
           BoundaryOperator.scalar((1 - eps) / (1 + eps)), BoundaryOperator.partial(eps)]
    ipp = max(ipp_certificate(solve_half_line(_random_source(basis, s), A, sign), A)
              for s, A in enumerate(ops) for sign in (1, -1))
    rng = np.random.default_rng(9)
    inh = 0.0
    for sign in (1, -1):
        a = rng.normal(size=basis.N) + 1j * rng.normal(size=basis.N)
        fb = NuExpansion(basis.index_set, from_pairs(a, np.zeros(basis.N), 1))
        inh = max(inh, solve_inhomogeneous(_random_source(basis, 20 + sign), fb, sign).residual)
    ok = manuf <= 1e-7 and ipp <= 1e-7 and inh <= 1e-7
    report(3, ok, f"manufactured={manuf:.1e} ipp={ipp:.1e} inhomogeneous={inh:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_4_cross_validation(report):
    t0 = time.perf_counter()
    basis = NuBasis(4, 96)
    g = lambda q: np.exp(-2 * (q + 6) ** 2)
    src = ModeSource.from_modes(basis, {1 / np.sqrt(2): g, -0.5: lambda q: 0.5 * g(q),
                                        0.5: lambda q: 0.3j * g(q)}, (-14.0, 0.0))
    L = 16.0
    exact = solve_half_line(src, BoundaryOperator.zero(), L=L)
    hs, errs = [], []
    for n_q in (100, 200, 400):
        op = assemble(L, n_q, 64, BoundaryOperator.zero(), 1, degree=1)
        x = op.solve(op.project(lambda q, p: src.f_values(q.ravel(), p.ravel())), 0.5)
        errs.append(relative_l2_error(op, x, lambda q: exact.point_values(q, op.p)))
        hs.append(op.h)
    order = observed_order(hs, errs)
    dt = time.perf_counter() - t0
    ok = errs[-1] <= 1e-3 and order >= 1 and dt < 300
    report(4, ok, f"error(n_q=400)={errs[-1]:.1e} order={order:.2f} time={dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_5_subelliptic(report):
    lams = np.concatenate([-np.geomspace(1, 200, 12)[::-1], [0.0], np.geomspace(1, 200, 12)])
    worst, sups = 0.0, {}
    for A in (BoundaryOperator.zero(), BoundaryOperator.identity()):
        a = subelliptic_sweep(assemble(3.0, 24, 16, A, 1), lams)
        b = subelliptic_sweep(assemble(3.0, 48, 32, A, 1), lams)
        worst = max(worst, max(a.stabilization(b).values()))
        sups[A.kind] = b.sups
    finite = all(np.isfinite(v) for s in sups.values() for v in s.values())
    ok = finite and worst <= 0.2
    report(5, ok, f"max_sup_change={worst:.3f} sups={ {k: {n: round(v, 3) for n, v in s.items()} for k, s in sups.items()} }")
    assert ok


@pytest.mark.slow
def test_criterion_6_pseudospectral(report):
    ops = [BoundaryOperator.zero(), BoundaryOperator.identity(), BoundaryOperator.partial(0.4),
           BoundaryOperator.scalar(0.5 + 0.5j)]
    min_re, pt = np.inf, 0.0
    for A in ops:
        for sign in (1, -1):
            s = spectrum(assemble(3.0, 20, 12, A, sign), 20)
            min_re = min(min_re, s.min_real)
            if s.pt_defect is not None:
                pt = max(pt, s.pt_defect)
    op = assemble(3.0, 16, 12, BoundaryOperator.identity(), 1)
    f = op.project(lambda q, p: np.exp(-4 * (q + 1.5) ** 2 - 0.5 * (p - 0.5) ** 2))
    cs = ContourSemigroup.build(op, t_max=1.0)
    sg = max(np.linalg.norm(cs.apply(f, t) - crank_nicolson(op, f, t)) / np.linalg.norm(crank_nicolson(op, f, t))
             for t in (0.1, 1.0))
    times = np.geomspace(1e-2, 10, 25)
    prof = smoothing_profile(assemble(3.0, 12, 10, BoundaryOperator.zero(), 1), times)
    bounded = bool(np.all(np.isfinite(prof)) and prof[-1] < prof.max() and prof[0] < prof.max())
    ok = min_re >= 0.5 - 1e-6 and pt <= 1e-8 and sg <= 1e-4 and bounded
    report(6, ok, f"min_re={min_re:.6f} pt={pt:.1e} contour_vs_cn={sg:.1e} smoothing_sup={prof.max():.3g}")
    assert ok


@pytest.mark.slow
def test_criterion_7_airy(report):
    t0 = time.perf_counter()
    xis, lams = default_sweep_grid(21)
    coarse, fine = mode_sweep(xis, lams, 64), mode_sweep(xis, lams, 128)
    change = abs(fine.sup_resolved - coarse.sup_resolved) / fine.sup_resolved
    gamma = apply_p(HermiteVector.basis(0, 2))
    ratios = [delta_source_norm(gamma, lam).ratio for lam in (0.0, 10.0, 100.0, 1000.0)]
    dt = time.perf_counter() - t0
    bounded = all(np.isfinite(ratios)) and max(ratios) / min(ratios) < 10
    ok = change <= 0.1 and fine.unresolved == 0 and bounded and dt < 600
    report(7, ok, f"sup64={coarse.sup_resolved:.4f} sup128={fine.sup_resolved:.4f} change={change:.1e} "
                  f"unresolved128={fine.unresolved} delta_ratios={[round(r, 3) for r in ratios]} time={dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_8_monte_carlo(report):
    t0 = time.perf_counter()
    specular = simulate(McConfig(n_traj=100_000, dt=1e-3, T=1.0, seed=2024, hist_times=(1.0,)))
    dens = compare_density(specular, 1.0)
    absorb = simulate(McConfig(n_traj=100_000, dt=1e-3, T=12.0, seed=2025, policy="absorb", q0=-1.5,
                               q_spread=0.5, hist_times=(1.0,)))
    dec = compare_decay(absorb, PdeGrid(n_q=96, n_p=32, degree=2), window=(6.0, 12.0))
    dt = time.perf_counter() - t0
    ok = dens.passed and dec.passed and dt < 900
    report(8, ok, f"tv={dens.tv:.4f}<=({dens.threshold:.4f}) slope={dec.slope:.5f} rate={dec.spectral_rate:.5f} "
                  f"sigma={dec.slope_sigma:.1e} time={dt:.1f}s")
    assert ok


def test_criterion_9_maxwellian(report):
    op = assemble(3.0, 64, 32, BoundaryOperator.zero(), 1, degree=1)
    M = op.maxwellian()
    r = float(np.linalg.norm(op.matrix @ M - 0.5 * M) / np.linalg.norm(M))
    ok = r <= 1e-6
    report(9, ok, f"relative_residual={r:.1e}")
    assert ok
