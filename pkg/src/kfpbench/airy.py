"""Translation-invariant model: ``P_xi = i xi p + O`` per Fourier mode in q.

``P_xi - i lam`` is tridiagonal in the Hermite basis:
``diag(n - 1/2) + i (xi P - lam)``.  Its inverse norm is computed by dense
SVD; the minimizing vector's coefficient tail certifies the truncation.
Points the truncation cannot resolve are bounded by the numerical range
``{x >= 1/2, |y| <= xi sqrt(2x)}`` of the untruncated operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.linalg import solve_banded, svd, svdvals
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalFailure, TruncationError, ValidationError
from .oscillator import HermiteVector, build_quadrature, oscillator_diagonal, p_matrix
from .parallel import ordered_map

TAIL_TOL = 1e-8


def mode_matrix(xi: float, lam: float, n_p: int) -> np.ndarray:
    return np.diag(oscillator_diagonal(n_p).astype(complex)) + 1j * (xi * p_matrix(n_p) - lam * np.eye(n_p))


@dataclass(frozen=True)
class ModeNorm:
    xi: float
    lam: float
    norm: float
    tail: float
    resolved: bool
    h2_norm: float

    @property
    def weight(self) -> float:
        return 1.0 + abs(self.xi) ** (2.0 / 3.0) + abs(self.lam) ** 0.5

    @property
    def weighted(self) -> float:
        return self.weight * self.norm


def numerical_range_bound(xi: float, lam: float) -> float:
    """``1/dist(i lam, W)`` with ``W = {x >= 1/2, |y| <= |xi| sqrt(2x)}``."""
    xi, lam = abs(xi), abs(lam)
    if lam <= xi:
        return 2.0
    if xi == 0.0:
        return 1.0 / np.hypot(0.5, lam)

    def d2(x):
        return x * x + max(lam - xi * np.sqrt(2 * x), 0.0) ** 2

    x_hi = lam * lam / (2 * xi * xi)
    res = optimize.minimize_scalar(d2, bounds=(0.5, x_hi), method="bounded", options={"xatol": 1e-12})
    best = min(d2(0.5), d2(x_hi), res.fun)
    return float(1.0 / np.sqrt(best))


def mode_resolvent_norm(xi: float, lam: float, n_p: int, *, strict: bool = True,
                        tail_tol: float = TAIL_TOL) -> ModeNorm:
    """``||(P_xi - i lam)^{-1}||`` on ``n_p`` Hermite functions.

    ``strict`` raises :class:`TruncationError` when the minimizing vector has
    more than ``tail_tol`` of its mass in the top eighth of the coefficients.
    """
    if n_p < 8:
        raise ValidationError("n_p must be >= 8")
    M = mode_matrix(xi, lam, n_p)
    _, s, vh = svd(M)
    v = vh[-1]
    cut = n_p - max(1, n_p // 8)
    tail = float(np.sum(np.abs(v[cut:]) ** 2))
    resolved = tail <= tail_tol
    if strict and not resolved:
        raise TruncationError(f"mode (xi={xi}, lam={lam}) not resolved with n_p={n_p} (tail {tail:.2e})", tail)
    OR = oscillator_diagonal(n_p)[:, None] * np.linalg.inv(M)
    return ModeNorm(float(xi), float(lam), float(1.0 / s[-1]), tail, resolved, float(svdvals(OR)[0]))


@dataclass
class ModeSweep:
    n_p: int
    points: list

    @property
    def certified_sup(self) -> float:
        """Upper bound of the weighted norm; unresolved points enter through the numerical-range bound."""
        vals = [m.weighted if m.resolved else m.weight * numerical_range_bound(m.xi, m.lam) for m in self.points]
        return float(max(vals))

    @property
    def sup_resolved(self) -> float:
        return float(max(m.weighted for m in self.points if m.resolved))

    @property
    def sup_h2(self) -> float:
        return float(max(m.h2_norm for m in self.points if m.resolved))

    @property
    def unresolved(self) -> int:
        return sum(not m.resolved for m in self.points)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("xi,lambda,norm,weighted,resolved,h2_norm\n")
            for m in self.points:
                fh.write(f"{m.xi:.17g},{m.lam:.17g},{m.norm:.17g},{m.weighted:.17g},{int(m.resolved)},{m.h2_norm:.17g}\n")


def mode_sweep(xis, lams, n_p: int, workers: int | None = None) -> ModeSweep:
    """Non-strict sweep.  ``(xi, -lam)`` and ``(-xi, lam)`` are unitarily
    equivalent to ``(xi, lam)`` (reversal ``p -> -p`` plus conjugation), so
    signs are folded before solving."""
    pairs = sorted({(abs(float(x)), abs(float(l))) for x in xis for l in lams})
    pts = ordered_map(lambda xl: mode_resolvent_norm(xl[0], xl[1], n_p, strict=False), pairs, workers)
    return ModeSweep(n_p, pts)


def default_sweep_grid(n: int = 21):
    xis = np.concatenate([[0.0], np.geomspace(0.05, 50.0, n - 1)])
    lams = np.concatenate([[0.0], np.geomspace(0.05, 100.0, n - 1)])
    return xis, lams


# ------------------------------------------------------------------ complex Airy

def _airy_matrix(T: float, n: int, sign: int = 1) -> sp.csc_matrix:
    """``-d^2/dt^2 + 2 i sign t`` on ``n`` interior points of ``[-T, T]`` with zero ends."""
    h = 2 * T / (n + 1)
    t = -T + h * np.arange(1, n + 1)
    main = 2.0 / h ** 2 + 2j * sign * t
    off = -np.ones(n - 1) / h ** 2
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


def _smallest_sv(M: sp.csc_matrix) -> float:
    lu = spla.splu(M)

    def mv(v):
        return lu.solve(lu.solve(np.asarray(v, complex), trans="H"))

    op = spla.LinearOperator(M.shape, matvec=mv, dtype=complex)
    mu = spla.eigsh(op, k=1, which="LM", return_eigenvectors=False, tol=1e-12)[0]
    return float(1.0 / np.sqrt(mu))


@dataclass(frozen=True)
class AiryResult:
    norm: float
    T: float
    n: int
    relative_change: float
    conjugate_norm: float
    history: tuple


def airy_resolvent_norm(T: float = 6.0, h: float = 0.05, *, tol: float = 1e-3,
                        max_levels: int = 8) -> AiryResult:
    """``||(D_t^2 + 2it)^{-1}||`` by finite differences, refined in ``h`` and ``T``
    until two successive levels agree to ``tol``."""
    history = []
    prev = None
    for level in range(max_levels):
        n = int(round(2 * T / h)) - 1
        val = 1.0 / _smallest_sv(_airy_matrix(T, n))
        history.append((T, n, val))
        if prev is not None:
            change = abs(val - prev) / val
            if change < tol:
                conj = 1.0 / _smallest_sv(_airy_matrix(T, n, sign=-1))
                return AiryResult(val, T, n, change, conj, tuple(history))
        prev = val
        h /= 2 ** 0.5
        T *= 1.25
    raise NumericalFailure("complex Airy resolvent norm did not converge", value=prev)


# ------------------------------------------------------------------ delta source

def _banded(xi: float, lam: float, n: int) -> np.ndarray:
    """Banded storage of ``P_xi - i lam`` (tridiagonal, symmetric off-diagonals)."""
    ab = np.zeros((3, n), complex)
    off = 1j * xi * np.sqrt(np.arange(1, n) / 2.0)
    ab[0, 1:] = off
    ab[1] = oscillator_diagonal(n) - 1j * lam
    ab[2, :-1] = off
    return ab


def _response(xi, lam, g):
    return solve_banded((1, 1), _banded(xi, lam, g.size), g)


def _panel_rule(gamma: HermiteVector):
    N = max(gamma.N, 2)
    return build_quadrature(2 * N + 2, "dp", method="panel", extent=np.sqrt(2 * N + 1.0) + 12.0)


def inverse_p_norm(gamma: HermiteVector, power: float = 1.0) -> float:
    """``||gamma||_{L^2(dp/|p|^power)}`` (infinite if gamma(0) != 0)."""
    q = _panel_rule(gamma)
    vals = gamma(q.nodes)
    if abs(gamma(np.array([0.0]))[0]) > 1e-12 * max(1.0, np.abs(vals).max()):
        return float("inf")
    return float(np.sqrt(np.sum(q.weights * np.abs(vals) ** 2 / np.abs(q.nodes) ** power)))


@dataclass(frozen=True)
class DeltaSourceResult:
    lam: float
    u_norm: float
    gamma_norm: float
    ratio: float
    n_p: int
    xi_max: float
    tail_fraction: float
    tail_uncertainty: float


def delta_source_norm(gamma: HermiteVector, lam: float, *, n_p: int | None = None,
                      xi_max: float | None = None, tail_tol: float = 1e-3,
                      coeff_tol: float = 1e-8) -> DeltaSourceResult:
    """``||u||`` for ``(P_+ - i lam) u = gamma(p) delta_0(q)`` on ``R_q x R_p``.

    Plancherel: ``||u||^2 = (1/2pi) int ||(P_xi - i lam)^{-1} gamma||^2 dxi``.
    Negative ``xi`` use ``P_{-xi} = U P_xi U`` (``U: p -> -p``).  Beyond
    ``xi_max`` the integrand times ``xi^2`` lies between its limit
    ``2 ||gamma/p||^2`` and its value at ``xi_max``; the tail is the midpoint
    of that bracket and its half-width, relative to the total, must stay
    below ``tail_tol``.
    """
    g = np.asarray(gamma.coeffs, complex)
    if not np.any(g):
        return DeltaSourceResult(float(lam), 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.0)
    gn = inverse_p_norm(gamma)
    if not np.isfinite(gn):
        raise ValidationError("gamma must vanish at p = 0 (finite L^2(dp/|p|) norm)")
    lam = float(lam)
    xi_max = float(xi_max or max(400.0, 20.0 * abs(lam)))
    if n_p is None:
        n_p = int(2 ** np.ceil(np.log2(max(512.0, 8.0 * xi_max ** (2.0 / 3.0)))))
    G = np.zeros(n_p, complex)
    G[: g.size] = g
    UG = G * (-1.0) ** np.arange(n_p)
    cut = n_p - n_p // 8
    worst_tail = [0.0]

    def integrand(xi):
        a = _response(xi, lam, G)
        b = _response(xi, lam, UG)
        tot = np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2)
        tail = (np.sum(np.abs(a[cut:]) ** 2) + np.sum(np.abs(b[cut:]) ** 2)) / max(tot, 1e-300)
        worst_tail[0] = max(worst_tail[0], tail)
        return tot

    pts = sorted({x for x in (abs(lam) / 4, abs(lam) / 2, abs(lam), 2 * abs(lam), 4 * abs(lam), 1.0, 10.0)
                  if 0 < x < xi_max})
    edges = [0.0, *pts, xi_max]
    body = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, limit=400, epsabs=0.0, epsrel=1e-9)
        body += val
    if worst_tail[0] > coeff_tol:
        raise TruncationError(f"delta-source response not resolved with n_p={n_p} (tail {worst_tail[0]:.2e})",
                              worst_tail[0])
    limit = 2.0 * inverse_p_norm(gamma, power=2.0) ** 2
    end = integrand(xi_max) * xi_max ** 2
    lo, hi = sorted((limit, end))
    tail = 0.5 * (lo + hi) / xi_max
    half = 0.5 * (hi - lo) / xi_max
    total = body + tail
    if half / total > tail_tol:
        raise NumericalFailure(f"xi-tail uncertainty {half / total:.2e} above tolerance; increase xi_max",
                               value=half / total)
    u = float(np.sqrt(total / (2 * np.pi)))
    ratio = (1 + lam * lam) ** 0.125 * u / gn
    return DeltaSourceResult(lam, u, gn, float(ratio), n_p, xi_max, float(tail / total), float(half / total))
