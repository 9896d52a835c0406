"""Exact-mode solution of the half-line problem ``(1/2 + P_+-) u = f``.

With ``k = (1/2 + O)^{-1} f`` expanded on the eigenbasis of ``A0``, each
coefficient obeys ``kappa u_nu' + u_nu = k_nu`` on ``q < 0`` where
``kappa = sigma nu`` (``sigma = +1`` for ``P_+``).  Modes with ``kappa > 0``
are fixed by decay at ``-infinity``; modes with ``kappa < 0`` carry a free
homogeneous part ``c_nu exp(-q/kappa)`` fixed by the boundary condition.

The boundary condition is imposed in Galerkin form: tested against every
``e_{mu,ev}`` in ``L^2(|p|dp)`` it reads ``diag(mu) b = sigma G_A a`` in pair
coordinates.  This makes the integration-by-parts identity hold exactly for
the truncation; the pointwise defect of the truncated trace is reported
separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.special import roots_legendre

from .boundary import (
    BoundaryGalerkin,
    BoundaryOperator,
    BoundaryTrace,
    apply_bc_defect,
    boundary_galerkin,
    _sigma,
)
from .errors import NumericalFailure, ValidationError
from .nu_basis import NuBasis, NuExpansion, expand, to_pairs
from .oscillator import HermiteVector, hermite_table, solve_oscillator

PANEL_WIDTH = 0.25
PANEL_NODES = 16
TAIL_DECAY = 28.0  # exp(-28) ~ 7e-13


# ------------------------------------------------------------------ sources

@dataclass(frozen=True)
class ModeSource:
    """``k(q)`` in eigen-coordinates: ``evaluate(q) -> array (len(q), 2N)``.

    ``support`` bounds where the source may be non-zero; ``breaks`` are
    interior points where it may be non-smooth (used as panel edges).
    """

    basis: NuBasis
    evaluate: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    breaks: tuple[float, ...] = ()
    projection_defect: float = 0.0

    def __call__(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, float))
        out = np.asarray(self.evaluate(q), complex)
        if out.shape != (q.size, self.basis.index_set.size):
            raise ValidationError("mode source returned an array of the wrong shape")
        inside = (q >= self.support[0]) & (q <= self.support[1])
        return np.where(inside[:, None], out, 0.0)

    def f_values(self, q, p) -> np.ndarray:
        """Point values of ``f = (1/2 + O) k`` on the grid ``q x p``."""
        k = self(q) @ self.basis.E.T  # Hermite coefficients of k
        tab = hermite_table(self.basis.N_h - 1, np.atleast_1d(np.asarray(p, float)))
        return (k * self.basis.h1_weights) @ tab

    @classmethod
    def zero(cls, basis: NuBasis) -> "ModeSource":
        n = basis.index_set.size
        return cls(basis, lambda q: np.zeros((q.size, n), complex), (0.0, 0.0))

    @classmethod
    def from_modes(cls, basis: NuBasis, profiles: Mapping[float, Callable], support,
                   breaks: Sequence[float] = ()) -> "ModeSource":
        """``k = sum_nu g_nu(q) e_nu`` from scalar profiles keyed by ``nu``."""
        idx = {basis.index_set.index(nu): g for nu, g in profiles.items()}
        n = basis.index_set.size

        def ev(q):
            out = np.zeros((q.size, n), complex)
            for k, g in idx.items():
                out[:, k] = g(q)
            return out

        return cls(basis, ev, tuple(map(float, support)), tuple(breaks))

    @classmethod
    def from_hermite(cls, basis: NuBasis, f: Callable[[np.ndarray], np.ndarray], support,
                     breaks: Sequence[float] = (), probe: int = 64) -> "ModeSource":
        """From ``f(q)`` given as Hermite coefficients ``(len(q), N_f)``.

        Applies ``(1/2+O)^{-1}`` and the H^1 projection; the largest
        projection defect over ``probe`` sample points is recorded.
        """
        W = basis.h1_weights

        def ev(q):
            F = np.atleast_2d(np.asarray(f(q), complex))
            Nf = F.shape[1]
            n = np.arange(1, Nf + 1, dtype=float)
            K = F / n  # (1/2 + O) is diagonal with entry n
            Kp = np.zeros((q.size, basis.N_h), complex)
            m = min(Nf, basis.N_h)
            Kp[:, :m] = K[:, :m]
            return (Kp * W) @ basis.E.conj()

        lo, hi = map(float, support)
        qs = np.linspace(lo, hi, probe)
        defect = 0.0
        F = np.atleast_2d(np.asarray(f(qs), complex))
        for row in F:
            _, d = expand(solve_oscillator(HermiteVector(row), 0.5), basis)
            defect = max(defect, d)
        return cls(basis, ev, (lo, hi), tuple(breaks), defect)


# ------------------------------------------------------------------ panel machinery

def _panel_edges(L: float, breaks: Sequence[float], width: float = PANEL_WIDTH) -> np.ndarray:
    cuts = sorted({-float(L), 0.0, *[float(b) for b in breaks if -L < b < 0]})
    edges = [cuts[0]]
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(np.ceil((b - a) / width)))
        edges.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(edges)


def _gl(m: int = PANEL_NODES):
    x, w = roots_legendre(m)
    return x, w


@dataclass(frozen=True)
class QGrid:
    """Composite Gauss-Legendre rule on ``[-L, 0]``."""

    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray

    @classmethod
    def build(cls, L: float, breaks: Sequence[float] = (), m: int = PANEL_NODES,
              width: float = PANEL_WIDTH) -> "QGrid":
        edges = _panel_edges(L, breaks, width)
        x, w = _gl(m)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (b - a) * (x + 1) + a).ravel()
        weights = (0.5 * (b - a) * w).ravel()
        return cls(nodes, weights, edges)


def _convolve(src: ModeSource, kappa: np.ndarray, edges: np.ndarray, targets: np.ndarray,
              m: int = PANEL_NODES) -> np.ndarray:
    """Particular solutions at ``targets``.

    For ``kappa > 0``: ``(1/kappa) int_{-L}^q exp(-(q-s)/kappa) k(s) ds``;
    for ``kappa < 0``: ``(1/|kappa|) int_q^0 exp((q-s)/|kappa|) k(s) ds``.
    The exponential is propagated across panels in closed form.
    """
    x, w = _gl(m)
    nmode = kappa.size
    pos = kappa > 0
    ak = np.abs(kappa)
    P = edges.size - 1
    a, b = edges[:-1], edges[1:]
    # full-panel integrals
    s = 0.5 * (b - a)[:, None] * (x + 1)[None, :] + a[:, None]  # (P, m)
    ks = src(s.ravel()).reshape(P, m, nmode)
    ws = (0.5 * (b - a))[:, None] * w[None, :]
    # forward (kappa > 0): weight exp(-(b - s)/kappa)
    ef = np.exp(-(b[:, None, None] - s[:, :, None]) / ak[None, None, :])
    eb = np.exp(-(s[:, :, None] - a[:, None, None]) / ak[None, None, :])
    I_f = np.einsum("pm,pmk->pk", ws, ef * ks) / ak
    I_b = np.einsum("pm,pmk->pk", ws, eb * ks) / ak
    decay = np.exp(-(b - a)[:, None] / ak[None, :])
    U = np.zeros((P + 1, nmode), complex)  # values at edges, forward
    for j in range(P):
        U[j + 1] = decay[j] * U[j] + I_f[j]
    V = np.zeros((P + 1, nmode), complex)  # values at edges, backward
    for j in range(P - 1, -1, -1):
        V[j] = decay[j] * V[j + 1] + I_b[j]
    # partial integrals at targets
    t = np.asarray(targets, float)
    jp = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, P - 1)
    lo, hi = edges[jp], edges[jp + 1]
    # forward part on [lo, t]
    sf = 0.5 * (t - lo)[:, None] * (x + 1) + lo[:, None]
    wf = 0.5 * (t - lo)[:, None] * w
    sb = 0.5 * (hi - t)[:, None] * (x + 1) + t[:, None]
    wb = 0.5 * (hi - t)[:, None] * w
    kf = src(sf.ravel()).reshape(t.size, m, nmode)
    kb = src(sb.ravel()).reshape(t.size, m, nmode)
    ef_t = np.exp(-(t[:, None, None] - sf[:, :, None]) / ak)
    eb_t = np.exp(-(sb[:, :, None] - t[:, None, None]) / ak)
    fwd = np.exp(-(t - lo)[:, None] / ak) * U[jp] + np.einsum("tm,tmk->tk", wf, ef_t * kf) / ak
    bwd = np.exp(-(hi - t)[:, None] / ak) * V[jp + 1] + np.einsum("tm,tmk->tk", wb, eb_t * kb) / ak
    return np.where(pos[None, :], fwd, bwd)


# ------------------------------------------------------------------ fields

@dataclass(frozen=True)
class HalfLineField:
    """Mode-form solution on ``[-L, 0]``.

    ``u_nu(q) = particular_nu(q) + c_nu exp(-q/kappa_nu)`` with ``c_nu = 0``
    for ``kappa_nu > 0``.
    """

    basis: NuBasis
    sigma: int
    L: float
    source: ModeSource
    homogeneous: np.ndarray
    certificates: dict = field(default_factory=dict)

    @property
    def kappa(self) -> np.ndarray:
        return self.sigma * self.basis.values

    @property
    def breaks(self) -> tuple[float, ...]:
        lo, hi = self.source.support
        return tuple(b for b in (lo, hi, *self.source.breaks) if -self.L < b < 0)

    def grid(self, m: int = PANEL_NODES) -> QGrid:
        return QGrid.build(self.L, self.breaks, m)

    def modes(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, float))
        edges = _panel_edges(self.L, self.breaks)
        part = _convolve(self.source, self.kappa, edges, q)
        hom = self.homogeneous[None, :] * np.exp(-q[:, None] / self.kappa[None, :])
        return part + np.where(self.kappa[None, :] < 0, hom, 0.0)

    def trace(self) -> NuExpansion:
        return NuExpansion(self.basis.index_set, self.modes(np.array([0.0]))[0])

    def hermite_values(self, q) -> np.ndarray:
        """Hermite coefficients ``(len(q), N_h)``."""
        return self.modes(q) @ self.basis.E.T

    def point_values(self, q, p) -> np.ndarray:
        """``u(q_i, p_k)`` from the closed-form eigenfunctions, shape ``(len q, len p)``."""
        return self.modes(q) @ self.basis.point_values(p).T

    def l2_h1_norm_sq(self) -> float:
        g = self.grid()
        u = self.modes(g.nodes)
        return float(np.sum(g.weights[:, None] * np.abs(u) ** 2))

    def source_pairing(self) -> complex:
        """``<u, f>_{L^2} = <u, k>_{H^1}``."""
        g = self.grid()
        return complex(np.sum(g.weights[:, None] * np.conj(self.modes(g.nodes)) * self.source(g.nodes)))

    def to_csv(self, path, q, p) -> None:
        vals = self.point_values(q, p)
        with open(path, "w") as fh:
            fh.write("q,p,re,im\n")
            for i, qq in enumerate(np.atleast_1d(q)):
                for k, pp in enumerate(np.atleast_1d(p)):
                    z = vals[i, k]
                    fh.write(f"{qq:.17g},{pp:.17g},{z.real:.17g},{z.imag:.17g}\n")

    def mode_table(self) -> dict:
        tr = self.trace().coeffs
        return {
            "sigma": self.sigma,
            "L": self.L,
            "modes": [
                {"nu": float(nu), "kappa": float(k), "trace": [float(t.real), float(t.imag)],
                 "homogeneous": [float(h.real), float(h.imag)]}
                for nu, k, t, h in zip(self.basis.values, self.kappa, tr, self.homogeneous)
            ],
            "certificates": {k: float(v) if np.isscalar(v) else v for k, v in self.certificates.items()},
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.mode_table(), fh, indent=2)


def default_length(basis: NuBasis, source: ModeSource | None = None) -> float:
    L = TAIL_DECAY * float(np.abs(basis.values).max()) / 2.0 + 1.0
    if source is not None:
        L = max(L, -source.support[0] + L)
    return float(np.ceil(L))


# ------------------------------------------------------------------ boundary algebra

def _pair_operators(n_pairs: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """``a = Ta gamma``, ``b = Tb gamma`` (each ``n_pairs x 2 n_pairs``)."""
    Ta = np.zeros((n_pairs, 2 * n_pairs))
    Tb = np.zeros((n_pairs, 2 * n_pairs))
    r = np.arange(n_pairs)
    Ta[r, 2 * r] = 1 / np.sqrt(2)
    Ta[r, 2 * r + 1] = j / np.sqrt(2)
    Tb[r, 2 * r] = 1 / np.sqrt(2)
    Tb[r, 2 * r + 1] = -j / np.sqrt(2)
    return Ta, Tb


def _solve_boundary(rows: np.ndarray, rhs: np.ndarray, known_trace: np.ndarray,
                    free: np.ndarray, tol_cond: float = 1e12) -> tuple[np.ndarray, float]:
    """Solve ``rows @ gamma = rhs`` for the free entries of ``gamma``."""
    Mf = rows[:, free]
    r = rhs - rows[:, ~free] @ known_trace[~free]
    cond = float(np.linalg.cond(Mf))
    if not np.isfinite(cond) or cond > tol_cond:
        raise NumericalFailure(f"boundary system is singular (cond={cond:.3e})", value=cond)
    return np.linalg.solve(Mf, r), cond


def _particular_trace(source: ModeSource, kappa: np.ndarray, L: float, breaks) -> np.ndarray:
    edges = _panel_edges(L, breaks)
    return _convolve(source, kappa, edges, np.array([0.0]))[0]


def _breaks_of(source: ModeSource, L: float):
    lo, hi = source.support
    return tuple(b for b in (lo, hi, *source.breaks) if -L < b < 0)


def solve_half_line(source: ModeSource, A: BoundaryOperator, sign_index=1, *,
                    L: float | None = None, galerkin: BoundaryGalerkin | None = None,
                    pointwise_defect: bool = True) -> HalfLineField:
    """Solve ``(1/2 + P_+-) u = f`` with ``gamma_odd = +- sign(p) A gamma_ev``."""
    basis = source.basis
    sigma = _sigma(sign_index)
    L = default_length(basis, source) if L is None else float(L)
    if source.support[0] < -L:
        raise ValidationError("source support exceeds the truncated half-line")
    bg = galerkin or boundary_galerkin(basis, A)
    if bg.A != A:
        raise ValidationError("Galerkin blocks were built for another boundary operator")
    kappa = sigma * basis.values
    free = kappa < 0
    g = _particular_trace(source, kappa, L, _breaks_of(source, L))
    n_pairs = basis.N
    Ta, Tb = _pair_operators(n_pairs, A.j)
    D = np.diag(bg.mu)
    rows = D @ Tb - sigma * bg.G_A @ Ta
    c, cond = _solve_boundary(rows, np.zeros(n_pairs, complex), g, free)
    hom = np.zeros(basis.index_set.size, complex)
    hom[free] = c
    field_ = HalfLineField(basis, sigma, L, source, hom)
    gamma = g.copy()
    gamma[free] = c
    a, b = Ta @ gamma, Tb @ gamma
    certs = {
        "condition": cond,
        "galerkin_bc_defect": float(np.linalg.norm(D @ b - sigma * bg.G_A @ a)),
        "source_projection_defect": source.projection_defect,
    }
    if pointwise_defect:
        tr = BoundaryTrace.from_nu(NuExpansion(basis.index_set, gamma), basis)
        certs["pointwise_bc_defect"] = apply_bc_defect(tr, A, sigma).direct
    object.__setattr__(field_, "certificates", certs)
    return field_


def solve_boundary_data(source: ModeSource, F: np.ndarray, sign_index, galerkin: BoundaryGalerkin,
                        L: float) -> tuple[HalfLineField, np.ndarray]:
    """Solve with projected data ``<e_{mu,ev}, Pi_-+ gamma> = F`` (the A=Identity route)."""
    basis = source.basis
    sigma = _sigma(sign_index)
    kappa = sigma * basis.values
    free = kappa < 0
    g = _particular_trace(source, kappa, L, _breaks_of(source, L))
    Ta, Tb = _pair_operators(basis.N, galerkin.A.j)
    D = np.diag(galerkin.mu)
    rows = galerkin.G_ev @ Ta - sigma * D @ Tb
    c, _ = _solve_boundary(rows, np.asarray(F, complex), g, free)
    hom = np.zeros(basis.index_set.size, complex)
    hom[free] = c
    gamma = g.copy()
    gamma[free] = c
    return HalfLineField(basis, sigma, L, source, hom), gamma


def projected_pi(gamma: np.ndarray, galerkin: BoundaryGalerkin) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of ``P_V Pi_+ gamma`` and ``P_V Pi_- gamma`` on the ev span."""
    a, b = to_pairs(gamma, galerkin.A.j)
    Gb = np.linalg.solve(galerkin.G_ev, galerkin.D_exact @ b) if hasattr(galerkin, "D_exact") else \
        np.linalg.solve(galerkin.G_ev, np.diag(galerkin.mu) @ b)
    return a + Gb, a - Gb


def g_norm_sq(x: np.ndarray, G: np.ndarray) -> float:
    return float(np.real(np.conj(x) @ G @ x))


def solve_half_line_cayley(source: ModeSource, A: BoundaryOperator, sign_index=1, *,
                           L: float | None = None, galerkin: BoundaryGalerkin | None = None,
                           tol: float = 1e-14, max_iter: int = 5000) -> tuple[HalfLineField, int]:
    """Second solver path: fixed point of ``Pi_-+ = C Pi_+-`` on projected traces.

    Each sweep solves the prescribed-incoming problem and maps the response
    through the Cayley transform of the projected ``A``.
    """
    basis = source.basis
    sigma = _sigma(sign_index)
    L = default_length(basis, source) if L is None else float(L)
    bg = galerkin or boundary_galerkin(basis, A)
    At = bg.A_tilde
    n = At.shape[0]
    C = np.linalg.solve((np.eye(n) + At).T, (np.eye(n) - At).T).T
    x = np.zeros(n, complex)
    for it in range(1, max_iter + 1):
        fld, gamma = solve_boundary_data(source, bg.G_ev @ x, sigma, bg, L)
        pp, pm = projected_pi(gamma, bg)
        response = pp if sigma == 1 else pm
        x_new = C @ response
        delta = np.sqrt(g_norm_sq(x_new - x, bg.G_ev))
        scale = max(np.sqrt(g_norm_sq(x_new, bg.G_ev)), 1e-300)
        x = x_new
        if delta <= tol * scale or scale == 1e-300:
            break
    else:
        raise NumericalFailure("Cayley fixed point did not converge", value=delta)
    fld, _ = solve_boundary_data(source, bg.G_ev @ x, sigma, bg, L)
    return fld, it


# ------------------------------------------------------------------ inhomogeneous problem

@dataclass(frozen=True)
class InhomogeneousResult:
    field: HalfLineField
    lhs: float
    rhs: float
    residual: float
    data_defect: float
    truncation_defect: float


def solve_inhomogeneous(source: ModeSource, f_boundary, sign_index=1, *, j: int = 1,
                        L: float | None = None) -> InhomogeneousResult:
    """``(1/2 + P_+-) u = f`` with ``Pi_-+ gamma u = f_boundary``.

    ``f_boundary`` is a :class:`NuExpansion` in the ev range or a
    :class:`BoundaryTrace`.  Checks
    ``(1/4)||Pi_+- gamma||^2 + ||u||^2 = (1/4)||f_d||^2 + Re<f, u>`` with the
    trace norm taken on the projection onto the ev span.
    """
    basis = source.basis
    sigma = _sigma(sign_index)
    L = default_length(basis, source) if L is None else float(L)
    bg = boundary_galerkin(basis, BoundaryOperator.identity(j))
    if isinstance(f_boundary, NuExpansion):
        a_d, b_d = to_pairs(f_boundary.coeffs, j)
        scale = max(np.linalg.norm(f_boundary.coeffs), 1e-300)
        if np.linalg.norm(b_d) > 1e-12 * scale:
            raise ValidationError("boundary datum is not in the range of Pi_ev")
        F = bg.G_ev @ a_d
        fd_norm_sq = g_norm_sq(a_d, bg.G_ev)
        data_defect = 0.0
    elif isinstance(f_boundary, BoundaryTrace):
        q = bg.quadrature
        ev, odd = f_boundary.parts(q.nodes, j)
        if np.sqrt(np.real(q.integrate(np.abs(odd) ** 2))) > 1e-12 * max(1.0, np.sqrt(np.real(q.integrate(np.abs(ev) ** 2)))):
            raise ValidationError("boundary datum is not in the range of Pi_ev")
        e_ev, _ = bg.pair_values(q.nodes)
        F = e_ev.conj().T @ (q.weights * ev)
        fd_norm_sq = float(np.real(q.integrate(np.abs(ev) ** 2)))
        a_d = np.linalg.solve(bg.G_ev, F)
        data_defect = float(np.sqrt(max(fd_norm_sq - g_norm_sq(a_d, bg.G_ev), 0.0)))
    else:
        raise ValidationError("f_boundary must be a NuExpansion or a BoundaryTrace")
    fld, gamma = solve_boundary_data(source, F, sigma, bg, L)
    pp, pm = projected_pi(gamma, bg)
    response = pp if sigma == 1 else pm
    u2 = fld.l2_h1_norm_sq()
    lhs = 0.25 * g_norm_sq(response, bg.G_ev) + u2
    proj_fd = g_norm_sq(np.linalg.solve(bg.G_ev, F), bg.G_ev)
    rhs = 0.25 * proj_fd + float(np.real(fld.source_pairing()))
    residual = abs(lhs - rhs) / max(abs(rhs), abs(lhs), 1e-300) if max(abs(lhs), abs(rhs)) > 0 else 0.0
    # pointwise truncation defect of the prescribed trace
    q = bg.quadrature
    tr = BoundaryTrace.from_nu(NuExpansion(basis.index_set, gamma), basis)
    prescribed = tr.pi(q.nodes, "minus" if sigma == 1 else "plus", j)
    if isinstance(f_boundary, NuExpansion):
        target = BoundaryTrace.from_nu(f_boundary, basis).values(q.nodes)
    else:
        target = f_boundary.parts(q.nodes, j)[0]
    trunc = float(np.sqrt(np.real(q.integrate(np.abs(prescribed - target) ** 2))))
    fld.certificates.update({"identity_residual": residual, "truncation_defect": trunc})
    return InhomogeneousResult(fld, lhs, rhs, residual, data_defect, trunc)


# ------------------------------------------------------------------ certificates

def ipp_certificate(fld: HalfLineField, A: BoundaryOperator | None = None) -> float:
    """Relative gap in ``Re<g_ev, A g_ev> + ||u||^2 = Re<u, (1/2 + K) u>``.

    Without ``A`` the boundary term is the A-free pairing
    ``+- Re<gamma_ev, sign(p) gamma_odd>``.
    """
    gamma = fld.trace().coeffs
    j = A.j if A is not None else 1
    a, b = to_pairs(gamma, j)
    if A is not None:
        bg = boundary_galerkin(fld.basis, A)
        bterm = float(np.real(np.conj(a) @ bg.G_A @ a))
    else:
        mu = fld.basis.values[0::2]
        bterm = fld.sigma * float(np.real(np.conj(a) @ (mu * b)))
    u2 = fld.l2_h1_norm_sq()
    rhs = float(np.real(fld.source_pairing()))
    lhs = bterm + u2
    scale = max(abs(rhs), abs(u2), abs(bterm))
    return 0.0 if scale == 0 else abs(lhs - rhs) / scale


def mode_residual(fld: HalfLineField, m: int = 28) -> float:
    """Max of ``|kappa u' + u - k|`` by Chebyshev differentiation per panel,
    relative to the field's sup norm.  Independent of the solver's formulas."""
    edges = _panel_edges(fld.L, fld.breaks)
    t = np.cos(np.pi * (np.arange(m) + 0.5) / m)  # Chebyshev points of the first kind
    worst, sup = 0.0, 0.0
    interior = np.abs(t) < 0.9
    for a, b in zip(edges[:-1], edges[1:]):
        q = 0.5 * (b - a) * (t + 1) + a
        u = fld.modes(q)
        k = fld.source(q)
        coef = _cheb.chebfit(t, u, m - 1)
        du = _cheb.chebval(t, _cheb.chebder(coef)).T * (2.0 / (b - a))
        res = fld.kappa[None, :] * du + u - k
        worst = max(worst, float(np.abs(res[interior]).max()))
        sup = max(sup, float(np.abs(u).max()))
    return worst / sup if sup > 0 else worst


def trace_continuity_ratio(fld: HalfLineField) -> float:
    """``||gamma||_{D_-1/2} / (||u||_{L^2 H^1} + ||f||_{L^2 H^-1})``."""
    gamma = fld.trace()
    g = fld.grid()
    k = fld.source(g.nodes)
    f_norm = np.sqrt(np.sum(g.weights[:, None] * np.abs(k) ** 2))
    denom = np.sqrt(fld.l2_h1_norm_sq()) + f_norm
    return float(gamma.ds_norm(-0.5) / denom) if denom > 0 else 0.0


# ------------------------------------------------------------------ Poisson / Calderon

def calderon(gamma: NuExpansion, sign_index=1) -> NuExpansion:
    """``C_0 = 1_{R_-}(sigma S)``: keeps the coefficients with ``sigma nu < 0``."""
    sigma = _sigma(sign_index)
    keep = sigma * gamma.basis.values < 0
    return NuExpansion(gamma.basis, np.where(keep, gamma.coeffs, 0.0))


@dataclass(frozen=True)
class PoissonResult:
    field: HalfLineField
    discarded: float


def poisson(gamma: NuExpansion, basis: NuBasis, sign_index=1, L: float | None = None) -> PoissonResult:
    """Interior-homogeneous field with trace ``C_0 gamma``."""
    sigma = _sigma(sign_index)
    keep = sigma * basis.values < 0
    hom = np.where(keep, gamma.coeffs, 0.0)
    discarded = float(np.linalg.norm(np.where(keep, 0.0, gamma.coeffs)))
    L = default_length(basis) if L is None else float(L)
    return PoissonResult(HalfLineField(basis, sigma, L, ModeSource.zero(basis), hom), discarded)


# ------------------------------------------------------------------ whole line

@dataclass(frozen=True)
class WholeLineField:
    basis: NuBasis
    sigma: int
    L: float
    source: ModeSource

    @property
    def kappa(self):
        return self.sigma * self.basis.values

    def modes(self, q) -> np.ndarray:
        """``u_nu`` on ``[-L, L]``: causal for ``kappa > 0``, anti-causal otherwise."""
        q = np.atleast_1d(np.asarray(q, float))
        # convolution on [-2L, 0] after translating by -L
        edges = _panel_edges(2 * self.L, self._breaks())
        src = ModeSource(self.basis, lambda s: self.source(s + self.L), (-2 * self.L, 0.0))
        return _convolve(src, self.kappa, edges, q - self.L)

    def _breaks(self):
        lo, hi = self.source.support
        return [b - self.L for b in (lo, hi, *self.source.breaks)]

    def grid(self, m: int = PANEL_NODES) -> QGrid:
        g = QGrid.build(2 * self.L, self._breaks(), m)
        return QGrid(g.nodes + self.L, g.weights, g.edges + self.L)

    def l2_norm_sq(self) -> float:
        g = self.grid()
        return float(np.sum(g.weights[:, None] * np.abs(self.modes(g.nodes)) ** 2))


def whole_line_solve(source: ModeSource, sign_index=1, L: float | None = None) -> WholeLineField:
    """``u = E k`` on the line.  Asserts the contraction ``||E k|| <= ||k||``."""
    sigma = _sigma(sign_index)
    if L is None:
        L = max(abs(source.support[0]), abs(source.support[1])) + default_length(source.basis)
    fld = WholeLineField(source.basis, sigma, float(L), source)
    g = fld.grid()
    k_norm = np.sqrt(np.sum(g.weights[:, None] * np.abs(source(g.nodes)) ** 2))
    u_norm = np.sqrt(fld.l2_norm_sq())
    if u_norm > k_norm * (1 + 1e-9) + 1e-12:
        raise NumericalFailure(f"whole-line solution operator is not a contraction ({u_norm} > {k_norm})")
    return fld


def adjoint_consistency(f: ModeSource, g: ModeSource, A: BoundaryOperator, *,
                        L: float | None = None) -> float:
    """Relative gap in ``<v, f> = <g, u>`` where ``(1/2+K_{+,A}) u = f`` and
    ``(1/2+K_{-,A*}) v = g``."""
    if L is None:
        L = max(default_length(f.basis, f), default_length(g.basis, g))
    u = solve_half_line(f, A, 1, L=L, pointwise_defect=False)
    v = solve_half_line(g, A.adjoint(), -1, L=L, pointwise_defect=False)
    grid = QGrid.build(L, sorted(set(u.breaks) | set(v.breaks)))
    uq, vq = u.modes(grid.nodes), v.modes(grid.nodes)
    w = grid.weights[:, None]
    left = np.sum(w * np.conj(vq) * f(grid.nodes))
    right = np.sum(w * np.conj(g(grid.nodes)) * uq)
    scale = max(abs(left), abs(right))
    return float(abs(left - right) / scale) if scale > 0 else 0.0
