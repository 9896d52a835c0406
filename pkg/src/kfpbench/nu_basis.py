"""Spectral resolution of ``A0 = (1/2 + O)^{-1} p`` on H^1.

Eigenvalues are ``nu = +-(2n)^{-1/2}`` with eigenvectors
``e_nu(p) = i^{sign(nu) n} nu phi_{n-1}(p - 1/nu)``, ``n = 1/(2 nu^2)``.
The phase makes ``e_nu(-p) = e_{-nu}(p)``.

Index sets are interleaved ``(+nu_1, -nu_1, +nu_2, -nu_2, ...)`` so that the
parity maps act on 2x2 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import TruncationError, ValidationError
from .oscillator import (
    HermiteVector,
    Quadrature,
    apply_p,
    build_quadrature,
    hermite_table,
    hs_norm,
    solve_oscillator,
)

TAIL_TOL = 1e-10


def nu_value(n: int, sign: int) -> float:
    return sign / np.sqrt(2.0 * n)


def nu_level(nu: float) -> int:
    """``n = 1/(2 nu^2)``; rejects values outside ``+-(2N*)^{-1/2}``."""
    if not np.isfinite(nu) or nu == 0:
        raise ValidationError(f"nu={nu!r} is not an eigenvalue of A0")
    x = 1.0 / (2.0 * nu * nu)
    n = int(round(x))
    if n < 1 or abs(x - n) > 1e-9 * max(1.0, x):
        raise ValidationError(f"nu={nu!r} is not of the form +-(2n)^(-1/2)")
    return n


def mode_phase(n: int, sign: int) -> complex:
    return 1j ** ((sign * n) % 4)


@dataclass(frozen=True)
class NuIndexSet:
    """Interleaved eigenvalues ``+nu_1, -nu_1, ..., +nu_N, -nu_N``."""

    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("need at least one positive mode")

    @property
    def levels(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.N + 1), 2)

    @property
    def signs(self) -> np.ndarray:
        return np.tile([1, -1], self.N)

    @property
    def values(self) -> np.ndarray:
        return self.signs / np.sqrt(2.0 * self.levels)

    @property
    def size(self) -> int:
        return 2 * self.N

    def index(self, nu: float) -> int:
        n = nu_level(nu)
        if n > self.N:
            raise ValidationError(f"nu={nu} lies outside the truncated index set")
        return 2 * (n - 1) + (0 if nu > 0 else 1)

    def partner(self) -> np.ndarray:
        """Position of ``-nu`` for each position."""
        k = np.arange(self.size)
        return k ^ 1


@dataclass(frozen=True)
class NuExpansion:
    """Coefficients ``u_nu`` over a :class:`NuIndexSet` (scalar fiber)."""

    basis: NuIndexSet
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True).ravel()
        if c.size != self.basis.size:
            raise ValidationError("coefficient count does not match the index set")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def ds_norm(self, s: float) -> float:
        w = np.abs(self.basis.values) ** (-2.0 * s)
        return float(np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2)))

    def ds_inner(self, other: "NuExpansion", s: float) -> complex:
        w = np.abs(self.basis.values) ** (-2.0 * s)
        return complex(np.sum(w * np.conj(self.coeffs) * other.coeffs))

    def __add__(self, other):
        return NuExpansion(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return NuExpansion(self.basis, self.coeffs - other.coeffs)

    def __rmul__(self, scalar):
        return NuExpansion(self.basis, scalar * self.coeffs)

    @classmethod
    def unit(cls, basis: NuIndexSet, nu: float) -> "NuExpansion":
        c = np.zeros(basis.size, complex)
        c[basis.index(nu)] = 1.0
        return cls(basis, c)


# ------------------------------------------------------------ eigenvectors

def _shift_quadrature(n_max: int, N_h: int) -> Quadrature:
    """Panel rule wide enough for shifted functions up to level ``n_max``."""
    shift = np.sqrt(2.0 * n_max)
    ext = max(shift + np.sqrt(2.0 * n_max + 1.0), np.sqrt(2.0 * N_h + 1.0)) + 10.0
    return build_quadrature(2 * max(N_h, 2), "dp", method="panel", extent=ext)


@lru_cache(maxsize=64)
def _eigvec_coeffs(n: int, sign: int, N_h: int) -> tuple[np.ndarray, float]:
    nu = nu_value(n, sign)
    q = _shift_quadrature(n, N_h)
    vals = mode_phase(n, sign) * nu * hermite_table(n - 1, q.nodes - 1.0 / nu)[n - 1]
    tab = hermite_table(N_h - 1, q.nodes)
    c = (tab * q.weights) @ vals
    l2 = float(np.real(np.conj(vals) * vals) @ q.weights)
    captured = float(np.sum(np.abs(c) ** 2))
    tail = max(l2 - captured, 0.0) / l2
    c.setflags(write=False)
    return c, tail


def e_nu(nu: float, N_h: int, *, check: bool = True) -> HermiteVector:
    """Hermite coefficients (length ``N_h``) of the H^1-normalized eigenvector.

    Raises :class:`TruncationError` when the L^2 mass beyond ``N_h``
    exceeds ``1e-10`` of the total.
    """
    n = nu_level(nu)
    sign = 1 if nu > 0 else -1
    c, tail = _eigvec_coeffs(n, sign, int(N_h))
    if check and tail > TAIL_TOL:
        raise TruncationError(
            f"e_nu with nu={nu:.6g} needs more than N_h={N_h} Hermite functions "
            f"(tail mass {tail:.2e})",
            defect=tail,
        )
    return HermiteVector(c)


def e_nu_values(nu: float, p) -> np.ndarray:
    """Direct point values of ``e_nu`` (no Hermite truncation)."""
    n = nu_level(nu)
    sign = 1 if nu > 0 else -1
    p = np.asarray(p, float)
    return mode_phase(n, sign) * nu * hermite_table(n - 1, p - 1.0 / nu)[n - 1]


def verify_eigen(nu: float, N_h: int) -> float:
    """``||(1/2+O)^{-1} p e_nu - nu e_nu||_{H^1}`` from the ladder primitives."""
    e = e_nu(nu, N_h)
    lhs = solve_oscillator(apply_p(e), shift=0.5)
    rhs = nu * e.padded(lhs.N)
    return hs_norm(lhs - rhs, 1.0)


# ------------------------------------------------------------ the basis

@dataclass(frozen=True)
class NuBasis:
    """Truncated eigenbasis: ``N`` positive modes resolved with ``N_h`` Hermite functions."""

    N: int
    N_h: int
    check: bool = True
    index_set: NuIndexSet = field(init=False)
    E: np.ndarray = field(init=False, repr=False)
    tails: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        idx = NuIndexSet(self.N)
        cols, tails = [], []
        for n, s in zip(idx.levels, idx.signs):
            c, tail = _eigvec_coeffs(int(n), int(s), int(self.N_h))
            cols.append(c)
            tails.append(tail)
        tails = np.array(tails)
        if self.check and tails.max() > TAIL_TOL:
            raise TruncationError(
                f"N_h={self.N_h} does not resolve {self.N} modes (max tail {tails.max():.2e})",
                defect=float(tails.max()),
            )
        E = np.array(cols).T
        E.setflags(write=False)
        object.__setattr__(self, "index_set", idx)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "tails", tails)

    @property
    def values(self) -> np.ndarray:
        return self.index_set.values

    @property
    def h1_weights(self) -> np.ndarray:
        return np.arange(1, self.N_h + 1, dtype=float)

    def h1_gram(self) -> np.ndarray:
        return (self.E.conj().T * self.h1_weights) @ self.E

    def synthesize(self, x: NuExpansion) -> HermiteVector:
        return HermiteVector(self.E @ x.coeffs)

    def expand(self, u: HermiteVector) -> tuple[NuExpansion, float]:
        """H^1 projection coefficients and the H^1 norm of the remainder."""
        return expand(u, self)

    def point_values(self, p) -> np.ndarray:
        """Matrix ``(len(p), 2N)`` of ``e_nu(p)`` computed directly."""
        p = np.atleast_1d(np.asarray(p, float))
        out = np.empty((p.size, self.index_set.size), complex)
        for k, nu in enumerate(self.values):
            out[:, k] = e_nu_values(nu, p)
        return out


def expand(u: HermiteVector, basis: NuBasis) -> tuple[NuExpansion, float]:
    c = u.padded(basis.N_h).coeffs
    coeffs = basis.E.conj().T @ (basis.h1_weights * c)
    rest = c - basis.E @ coeffs
    tail = u.coeffs[basis.N_h:] if u.N > basis.N_h else np.zeros(0)
    defect = np.sqrt(hs_norm(rest, 1.0) ** 2 + np.sum(np.arange(basis.N_h + 1, u.N + 1) * np.abs(tail) ** 2))
    return NuExpansion(basis.index_set, coeffs), float(defect)


# ------------------------------------------------------------ parity algebra

def sign_operator(x: NuExpansion) -> NuExpansion:
    """``S = sign(A0)``: multiplies ``u_nu`` by ``sign(nu)``."""
    return NuExpansion(x.basis, x.basis.signs * x.coeffs)


def apply_parity(x: NuExpansion, which: str, j: int = 1) -> NuExpansion:
    """Parity maps on the pair blocks ``(nu, -nu)``.

    ``ev`` keeps ``(u_nu + j u_{-nu})/2`` patterns, ``odd`` the complement,
    ``plus = ev + S odd`` and ``minus = ev - S odd``.
    """
    if j not in (1, -1):
        raise ValidationError("j must be +1 or -1")
    c = x.coeffs
    partner = c[x.basis.partner()]
    ev = 0.5 * (c + j * partner)
    odd = c - ev
    if which == "ev":
        out = ev
    elif which == "odd":
        out = odd
    elif which in ("plus", "minus"):
        s_odd = x.basis.signs * odd
        out = ev + s_odd if which == "plus" else ev - s_odd
    else:
        raise ValidationError(f"unknown parity map {which!r}")
    return NuExpansion(x.basis, out)


def pair_transform(j: int = 1) -> np.ndarray:
    """2x2 map from ``(u_mu, u_-mu)`` to ``(a_mu, b_mu)`` coordinates.

    ``a`` multiplies ``e_{mu,ev} = (e_mu + j e_-mu)/sqrt2`` and ``b`` multiplies
    ``e_{mu,odd} = (e_mu - j e_-mu)/sqrt2``.  The map is unitary.
    """
    return np.array([[1.0, j], [1.0, -j]]) / np.sqrt(2.0)


def to_pairs(coeffs: np.ndarray, j: int = 1) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(coeffs).reshape(-1, 2)
    a = (c[:, 0] + j * c[:, 1]) / np.sqrt(2.0)
    b = (c[:, 0] - j * c[:, 1]) / np.sqrt(2.0)
    return a, b


def from_pairs(a: np.ndarray, b: np.ndarray, j: int = 1) -> np.ndarray:
    out = np.empty(2 * len(a), complex)
    out[0::2] = (a + b) / np.sqrt(2.0)
    out[1::2] = j * (a - b) / np.sqrt(2.0)
    return out


# ------------------------------------------------------------ weighted pairings

def boundary_quadrature(basis_or_levels, weight: str = "|p|dp", breakpoints=()) -> Quadrature:
    """Panel rule wide enough for every ``e_nu`` of the index set."""
    N = basis_or_levels.N if hasattr(basis_or_levels, "N") else int(basis_or_levels)
    shift = np.sqrt(2.0 * N)
    ext = shift + np.sqrt(2.0 * N + 1.0) + 10.0
    return build_quadrature(2 * N + 2, weight, extent=ext, breakpoints=breakpoints)


def pairing(u: HermiteVector, v: HermiteVector, weight: str = "p·dp") -> complex:
    """``int conj(u) v w(p) dp`` for ``w = p`` or ``|p|``, by panel quadrature."""
    N = max(u.N, v.N, 2)
    q = build_quadrature(2 * N + 2, weight, extent=np.sqrt(2.0 * N + 1.0) + 12.0)
    return complex(q.integrate(np.conj(u(q.nodes)) * v(q.nodes)))


@dataclass(frozen=True)
class GramMatrices:
    G_abs: np.ndarray
    G_sgn: np.ndarray
    M: np.ndarray
    min_M_eig: float


def gram_matrices(basis: NuBasis, *, source: str = "direct") -> GramMatrices:
    """|p|dp and p·dp Gram matrices of the truncated eigenvectors.

    ``source="direct"`` integrates the closed-form eigenfunctions,
    ``source="hermite"`` the truncated Hermite expansions.  ``M`` is the
    matrix of ``S o sign(p)`` in the ``D_{-1/2}`` metric, recovered as
    ``diag(1/|nu|) G_abs``; its spectrum is real positive iff ``G_abs`` is
    positive definite.
    """
    q = boundary_quadrature(basis, "|p|dp")
    if source == "direct":
        vals = basis.point_values(q.nodes)
    elif source == "hermite":
        vals = (basis.E.T @ hermite_table(basis.N_h - 1, q.nodes)).T
    else:
        raise ValidationError(f"unknown gram source {source!r}")
    wv = vals * q.weights[:, None]
    G_abs = vals.conj().T @ wv
    G_sgn = vals.conj().T @ (wv * np.sign(q.nodes)[:, None])
    absnu = np.abs(basis.values)
    M = G_abs / absnu[:, None]
    # generalized problem G_abs x = m |nu| x  <=>  eigenvalues of M
    d = 1.0 / np.sqrt(absnu)
    sym = d[:, None] * G_abs * d[None, :]
    sym = 0.5 * (sym + sym.conj().T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    if min_eig <= 0:
        raise TruncationError(
            f"M-matrix lost positive definiteness (min eigenvalue {min_eig:.3e})",
            defect=min_eig,
        )
    return GramMatrices(G_abs, G_sgn, M, min_eig)
