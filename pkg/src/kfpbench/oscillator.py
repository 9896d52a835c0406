"""Harmonic-oscillator primitives in one momentum variable.

Coefficient convention: ``coeffs[n-1]`` multiplies the normalized Hermite
function ``phi_{n-1}``, so the oscillator ``O = (-d^2/dp^2 + p^2)/2`` acts on
entry ``n`` by ``n - 1/2`` and ``||u||_{H^s}^2 = sum n^s |u_n|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import roots_hermite, roots_legendre

from .errors import ValidationError

PI_M14 = np.pi ** -0.25
_RESCALE = 1e150


def hermite_table(nmax: int, p) -> np.ndarray:
    """Rows ``phi_0 .. phi_nmax`` evaluated at ``p``.

    Upward three-term recurrence on the normalized functions.  The Gaussian
    factor is tracked as a separate exponent so large ``|p|`` does not
    underflow before the polynomial part has grown.
    """
    if nmax < 0:
        raise ValidationError("nmax must be >= 0")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.empty((nmax + 1, p.size))
    logscale = -0.5 * p * p
    prev = np.zeros_like(p)
    cur = np.full_like(p, PI_M14)
    out[0] = cur * np.exp(logscale)
    for n in range(1, nmax + 1):
        nxt = np.sqrt(2.0 / n) * p * cur - np.sqrt((n - 1.0) / n) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            cur = np.where(big, cur / _RESCALE, cur)
            prev = np.where(big, prev / _RESCALE, prev)
            logscale = np.where(big, logscale + np.log(_RESCALE), logscale)
        with np.errstate(under="ignore"):
            out[n] = cur * np.exp(logscale)
    return out


def hermite_eval(n: int, p):
    """Normalized Hermite function ``phi_n(p)``; scalar in, scalar out."""
    if n < 0:
        raise ValidationError("Hermite index must be >= 0")
    vals = hermite_table(n, p)[n]
    return float(vals[0]) if np.ndim(p) == 0 else vals


def hermite_derivative_table(nmax: int, p) -> np.ndarray:
    """Rows ``phi_n'`` for n <= nmax via ``sqrt(n/2) phi_{n-1} - sqrt((n+1)/2) phi_{n+1}``."""
    tab = hermite_table(nmax + 1, p)
    out = np.empty((nmax + 1, tab.shape[1]))
    for n in range(nmax + 1):
        lo = np.sqrt(n / 2.0) * tab[n - 1] if n > 0 else 0.0
        out[n] = lo - np.sqrt((n + 1) / 2.0) * tab[n + 1]
    return out


@dataclass(frozen=True)
class HermiteVector:
    """Coefficients ``u_n`` (n = 1..N) of ``sum u_n phi_{n-1}``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True).ravel()
        if not np.all(np.isfinite(c)):
            raise ValidationError("HermiteVector coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self) -> int:
        return self.coeffs.size

    @classmethod
    def basis(cls, k: int, N: int | None = None) -> "HermiteVector":
        """The vector of ``phi_k``."""
        N = k + 1 if N is None else N
        c = np.zeros(N, complex)
        c[k] = 1.0
        return cls(c)

    def padded(self, N: int) -> "HermiteVector":
        if N < self.N:
            return HermiteVector(self.coeffs[:N])
        c = np.zeros(N, complex)
        c[: self.N] = self.coeffs
        return HermiteVector(c)

    def __add__(self, other: "HermiteVector") -> "HermiteVector":
        n = max(self.N, other.N)
        return HermiteVector(self.padded(n).coeffs + other.padded(n).coeffs)

    def __sub__(self, other: "HermiteVector") -> "HermiteVector":
        return self + (-1.0) * other

    def __rmul__(self, scalar) -> "HermiteVector":
        return HermiteVector(scalar * self.coeffs)

    def __call__(self, p):
        """Point values ``sum u_n phi_{n-1}(p)``."""
        if self.N == 0:
            return np.zeros(np.shape(np.atleast_1d(p)), complex)
        return self.coeffs @ hermite_table(self.N - 1, p)

    def hs_norm(self, s: float) -> float:
        return hs_norm(self, s)


def _as_coeffs(u) -> np.ndarray:
    return u.coeffs if isinstance(u, HermiteVector) else np.asarray(u, dtype=complex)


def apply_p(u: HermiteVector) -> HermiteVector:
    """Multiplication by p.  The result has one more coefficient than ``u``."""
    c = _as_coeffs(u)
    N = c.size
    out = np.zeros(N + 1, complex)
    k = np.arange(N)
    out[1:] += np.sqrt((k + 1) / 2.0) * c
    out[:-2] += np.sqrt(k[1:] / 2.0) * c[1:]
    return HermiteVector(out)


def p_matrix(N: int) -> np.ndarray:
    """Truncated (N x N) symmetric tridiagonal matrix of p."""
    off = np.sqrt(np.arange(1, N) / 2.0)
    return np.diag(off, 1) + np.diag(off, -1)


def dp_matrix(N: int) -> np.ndarray:
    """Truncated skew-symmetric matrix of d/dp = (a - a*)/sqrt(2)."""
    off = np.sqrt(np.arange(1, N) / 2.0)
    return np.diag(off, 1) - np.diag(off, -1)


def oscillator_diagonal(N: int, shift: float = 0.0) -> np.ndarray:
    """Diagonal of ``shift + O`` on coefficients 1..N."""
    return shift + np.arange(1, N + 1) - 0.5


def apply_oscillator(u: HermiteVector, shift: float = 0.0) -> HermiteVector:
    c = _as_coeffs(u)
    return HermiteVector(oscillator_diagonal(c.size, shift) * c)


def solve_oscillator(u: HermiteVector, shift: float = 0.5) -> HermiteVector:
    """Inverse of ``apply_oscillator`` (requires shift > -1/2)."""
    if shift <= -0.5:
        raise ValidationError("shift + O is not invertible for shift <= -1/2")
    c = _as_coeffs(u)
    return HermiteVector(c / oscillator_diagonal(c.size, shift))


def hs_norm(u, s: float) -> float:
    c = _as_coeffs(u)
    n = np.arange(1, c.size + 1, dtype=float)
    return float(np.sqrt(np.sum(n ** s * np.abs(c) ** 2)))


def hs_inner(u, v, s: float) -> complex:
    """``sum n^s conj(u_n) v_n`` over the common length."""
    a, b = _as_coeffs(u), _as_coeffs(v)
    m = min(a.size, b.size)
    n = np.arange(1, m + 1, dtype=float)
    return complex(np.sum(n ** s * np.conj(a[:m]) * b[:m]))


# ---------------------------------------------------------------- quadrature

WEIGHT_KINDS = ("dp", "p·dp", "|p|dp")
_KIND_ALIASES = {
    "dp": "dp",
    "p·dp": "p·dp",
    "pdp": "p·dp",
    "p_dp": "p·dp",
    "|p|dp": "|p|dp",
    "absdp": "|p|dp",
    "abs_dp": "|p|dp",
}


@dataclass(frozen=True)
class Quadrature:
    """``sum w_k f(p_k)`` approximates ``int f(p) weight(p) dp``."""

    nodes: np.ndarray
    weights: np.ndarray
    weight_kind: str

    def __post_init__(self):
        x = np.asarray(self.nodes, float)
        w = np.asarray(self.weights, float)
        if x.shape != w.shape:
            raise ValidationError("nodes and weights differ in shape")
        if np.any(np.diff(x) <= 0):
            raise ValidationError("quadrature nodes must be strictly increasing")
        if np.any(w <= 0):
            raise ValidationError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def signed_weights(self) -> np.ndarray:
        """Weights with the sign of p restored for the p·dp kind."""
        if self.weight_kind == "p·dp":
            return self.weights * np.sign(self.nodes)
        return self.weights

    def integrate(self, values) -> complex:
        return np.asarray(values) @ self.signed_weights


def _half_line_panels(extent: float, width: float, m: int, breakpoints: Sequence[float]):
    """Composite Gauss-Legendre nodes/weights on (0, extent)."""
    cuts = {0.0, float(extent)}
    cuts.update(float(b) for b in breakpoints if 0.0 < b < extent)
    cuts = sorted(cuts)
    xg, wg = roots_legendre(m)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        npan = max(1, int(np.ceil((b - a) / width)))
        edges = np.linspace(a, b, npan + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            xs.append(lo + half * (xg + 1.0))
            ws.append(half * wg)
    return np.concatenate(xs), np.concatenate(ws)


def default_extent(order: int) -> float:
    """Half-width beyond which ``poly_{2 order} * exp(-p^2)`` is negligible."""
    return float(np.sqrt(2.0 * order + 1.0) + 9.0)


def build_quadrature(
    order: int,
    weight_kind: str = "dp",
    *,
    method: str | None = None,
    extent: float | None = None,
    panel_width: float = 0.5,
    panel_nodes: int = 16,
    breakpoints: Sequence[float] = (),
) -> Quadrature:
    """Quadrature for ``poly * exp(-p^2)`` integrands against dp, p·dp or |p|dp.

    ``dp`` defaults to Gauss-Hermite with ``order`` nodes (weights multiplied by
    ``exp(p^2)`` so plain integrands are accepted).  The weighted kinds, and
    ``dp`` with ``method="panel"``, use composite Gauss-Legendre panels on the
    two half-lines so the kink of ``|p|`` at 0 is a panel edge.
    ``breakpoints`` (in ``|p|``) are added as panel edges, for discontinuous
    boundary multipliers.
    """
    kind = _KIND_ALIASES.get(weight_kind)
    if kind is None:
        raise ValidationError(f"unknown weight kind {weight_kind!r}")
    if order < 2:
        raise ValidationError("quadrature order must be >= 2")
    if method is None:
        method = "hermite" if kind == "dp" else "panel"
    if method not in ("hermite", "panel"):
        raise ValidationError(f"unknown quadrature method {method!r}")
    if kind != "dp" and order % 2:
        raise ValidationError(f"weight kind {kind} needs an even order (node symmetry)")
    if method == "hermite":
        if kind != "dp":
            raise ValidationError("Gauss-Hermite only serves the dp weight")
        x, w = roots_hermite(order)
        with np.errstate(over="ignore"):
            w = w * np.exp(x * x)
        return Quadrature(x, w, "dp")
    ext = default_extent(order) if extent is None else float(extent)
    xh, wh = _half_line_panels(ext, panel_width, panel_nodes, breakpoints)
    x = np.concatenate([-xh[::-1], xh])
    w = np.concatenate([wh[::-1], wh])
    if kind != "dp":
        # stored positive; the p·dp sign lives in Quadrature.signed_weights
        w = w * np.abs(x)
    return Quadrature(x, w, kind)
