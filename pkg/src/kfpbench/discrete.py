"""Discrete ``K_{+-,A}`` on ``[-L, 0] x R_p``.

q: upwind discontinuous Galerkin with Legendre degree ``r`` per cell
(``r = 0`` is first-order upwind finite volumes).  p: collocation at the
``n_p`` Gauss-Hermite nodes; the oscillator and ``d/dp`` act through the
node/coefficient transform.

Unknowns are stored in scaled coordinates
``x[i, a, k] = sqrt(h/(2a+1)) sqrt(w_k) U[i, a, k]`` where ``U`` are Legendre
coefficients at node ``p_k`` and ``w_k`` the Gauss-Hermite weights times
``exp(p_k^2)``.  The Euclidean norm of ``x`` is then the discrete
``L^2(dq dp)`` norm, so singular values are resolvent norms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre as _leg
from scipy.linalg import expm
from scipy.special import roots_hermite, roots_legendre

from .boundary import BoundaryOperator, _sigma
from .errors import NumericalFailure, ValidationError
from .oscillator import dp_matrix, hermite_table
from .parallel import ordered_map

DENSE_LIMIT = 1600
WALL_POLICIES = ("specular", "confining")


# ------------------------------------------------------------------ potentials

@dataclass(frozen=True)
class Potential:
    """Globally Lipschitz ``V(q)``.

    Built-in kinds: ``zero``, ``linear`` (``V = amplitude q``), ``tanh``
    (``amplitude tanh(q/scale)``), ``cosine`` (``amplitude cos(q/scale)``).
    ``custom`` takes callables.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    scale: float = 1.0
    max_slope: float = 1e3
    _V: Callable | None = field(default=None, repr=False, compare=False)
    _dV: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "tanh", "cosine", "custom"):
            raise ValidationError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom" and (self._V is None or self._dV is None):
            raise ValidationError("custom potential needs V and dV callables")
        if self.scale <= 0:
            raise ValidationError("potential scale must be positive")

    @classmethod
    def custom(cls, V: Callable, dV: Callable, max_slope: float = 1e3) -> "Potential":
        return cls("custom", max_slope=max_slope, _V=V, _dV=dV)

    def V(self, q):
        q = np.asarray(q, float)
        a, s = self.amplitude, self.scale
        if self.kind == "zero":
            return np.zeros_like(q)
        if self.kind == "linear":
            return a * q
        if self.kind == "tanh":
            return a * np.tanh(q / s)
        if self.kind == "cosine":
            return a * np.cos(q / s)
        return np.asarray(self._V(q), float)

    def dV(self, q):
        q = np.asarray(q, float)
        a, s = self.amplitude, self.scale
        if self.kind == "zero":
            return np.zeros_like(q)
        if self.kind == "linear":
            return np.full_like(q, a)
        if self.kind == "tanh":
            return a / s / np.cosh(q / s) ** 2
        if self.kind == "cosine":
            return -a / s * np.sin(q / s)
        return np.asarray(self._dV(q), float)

    def check(self, L: float, samples: int = 2001) -> float:
        """Largest sampled slope on ``[-L, 0]``; raises if not Lipschitz-bounded."""
        q = np.linspace(-L, 0.0, samples)
        d = self.dV(q)
        v = self.V(q)
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(v))):
            raise ValidationError("potential samples are not finite")
        slope = max(float(np.abs(d).max()), float(np.abs(np.diff(v) / np.diff(q)).max()))
        if slope > self.max_slope:
            raise ValidationError(f"potential slope {slope:.3e} exceeds the Lipschitz bound {self.max_slope:.3e}")
        return slope

    def dV_lipschitz(self, L: float, samples: int = 4001) -> float:
        """Sampled Lipschitz constant of ``V'`` on ``[-L, 0]``."""
        q = np.linspace(-L, 0.0, samples)
        return float(np.abs(np.diff(self.dV(q)) / np.diff(q)).max())

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValidationError("custom potentials are not serializable")
        return {"kind": self.kind, "amplitude": self.amplitude, "scale": self.scale, "max_slope": self.max_slope}

    @classmethod
    def from_dict(cls, d: dict | None) -> "Potential":
        if d is None:
            return cls()
        unknown = set(d) - {"kind", "amplitude", "scale", "max_slope"}
        if unknown:
            raise ValidationError(f"unknown potential fields {sorted(unknown)}")
        return cls(d.get("kind", "zero"), float(d.get("amplitude", 0.0)), float(d.get("scale", 1.0)),
                   float(d.get("max_slope", 1e3)))


@dataclass(frozen=True)
class Wall:
    """Artificial end at ``q = -L``: always specular.  ``confining`` adds a
    ramp force pushing mass away from it: ``-V_w'(q) = force * s`` with
    ``s = clip((q_w - q)/width, 0, 1)``, ``q_w = -L + width``."""

    policy: str = "specular"
    force: float = 4.0
    width: float = 1.0

    def __post_init__(self):
        if self.policy not in WALL_POLICIES:
            raise ValidationError(f"wall policy must be one of {WALL_POLICIES}")
        if self.force < 0 or self.width <= 0:
            raise ValidationError("wall force must be >= 0 and width > 0")

    def _s(self, q, L):
        return np.clip((-L + self.width - np.asarray(q, float)) / self.width, 0.0, 1.0)

    def V(self, q, L):
        if self.policy == "specular":
            return np.zeros_like(np.asarray(q, float))
        s = self._s(q, L)
        return 0.5 * self.force * self.width * s * s

    def dV(self, q, L):
        if self.policy == "specular":
            return np.zeros_like(np.asarray(q, float))
        return -self.force * self._s(q, L)

    @property
    def dV_lipschitz(self) -> float:
        return 0.0 if self.policy == "specular" else self.force / self.width

    def to_dict(self) -> dict:
        return {"policy": self.policy, "force": self.force, "width": self.width}

    @classmethod
    def from_dict(cls, d) -> "Wall":
        if isinstance(d, str):
            return cls(d)
        if d is None:
            return cls()
        unknown = set(d) - {"policy", "force", "width"}
        if unknown:
            raise ValidationError(f"unknown wall fields {sorted(unknown)}")
        return cls(d.get("policy", "specular"), float(d.get("force", 4.0)), float(d.get("width", 1.0)))


# ------------------------------------------------------------------ helpers

def _legendre_vals(r: int, x) -> np.ndarray:
    """Rows ``P_0..P_r`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, float))
    return np.array([_leg.legval(x, np.eye(r + 1)[a]) for a in range(r + 1)])


def _stiffness(r: int) -> np.ndarray:
    """``S[b, a] = int_{-1}^1 P_a P_b' dxi``."""
    x, w = roots_legendre(r + 2)
    P = _legendre_vals(r, x)
    dP = np.array([_leg.legval(x, _leg.legder(np.eye(r + 1)[b])) for b in range(r + 1)])
    return (dP * w) @ P.T


def collocation(n_p: int):
    """Nodes, scaled weights and the orthogonal node/coefficient matrix ``Q``."""
    if n_p < 2 or n_p % 2:
        raise ValidationError("n_p must be even and >= 2 (no node at p = 0)")
    p, w = roots_hermite(n_p)
    w_hat = w * np.exp(p * p)
    Q = (np.sqrt(w_hat)[:, None] * hermite_table(n_p - 1, p).T)
    return p, w_hat, Q


# ------------------------------------------------------------------ the operator

@dataclass(frozen=True)
class DiscreteKfp:
    L: float
    n_q: int
    n_p: int
    A: BoundaryOperator
    sigma: int
    degree: int
    potential: Potential
    wall: Wall
    matrix: sp.csr_matrix = field(repr=False)
    p: np.ndarray = field(repr=False)
    w_hat: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    refl: np.ndarray = field(repr=False)

    # ---- geometry
    @property
    def h(self) -> float:
        return self.L / self.n_q

    @property
    def nloc(self) -> int:
        return self.degree + 1

    @property
    def dim(self) -> int:
        return self.n_q * self.nloc * self.n_p

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.L, 0.0, self.n_q + 1)

    @property
    def velocity(self) -> np.ndarray:
        return self.sigma * self.p

    @property
    def mirror(self) -> np.ndarray:
        return np.arange(self.n_p)[::-1]

    @property
    def mass(self) -> np.ndarray:
        return self.h / (2.0 * np.arange(self.nloc) + 1.0)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix)

    @cached_property
    def O_tilde(self) -> np.ndarray:
        return (self.Q * (np.arange(self.n_p) + 0.5)) @ self.Q.T

    @cached_property
    def op_norm(self) -> float:
        return float(spla.norm(self.matrix, 1))

    def V_total(self, q):
        return self.potential.V(q) + self.wall.V(q, self.L)

    def dV_total(self, q):
        return self.potential.dV(q) + self.wall.dV(q, self.L)

    # ---- coordinates
    def _scale(self) -> np.ndarray:
        return np.sqrt(self.mass)[:, None] * np.sqrt(self.w_hat)[None, :]

    def to_scaled(self, U: np.ndarray) -> np.ndarray:
        return (np.asarray(U).reshape(self.n_q, self.nloc, self.n_p) * self._scale()).ravel()

    def from_scaled(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x).reshape(self.n_q, self.nloc, self.n_p) / self._scale()

    def project(self, f: Callable, n_gauss: int | None = None) -> np.ndarray:
        """Scaled coordinates of ``f(q, p)`` (``q`` column, ``p`` row broadcast)."""
        ng = n_gauss or self.degree + 6
        xg, wg = roots_legendre(ng)
        P = _legendre_vals(self.degree, xg)  # (nloc, ng)
        a = self.edges[:-1]
        qg = a[:, None] + 0.5 * self.h * (xg[None, :] + 1.0)  # (n_q, ng)
        vals = np.asarray(f(qg.ravel()[:, None], self.p[None, :]))
        vals = vals.reshape(self.n_q, ng, self.n_p)
        coef = (2 * np.arange(self.nloc) + 1)[None, :, None] * 0.5 * np.einsum("g,ag,igk->iak", wg, P, vals)
        return self.to_scaled(coef)

    def evaluate(self, x: np.ndarray, q) -> np.ndarray:
        """Nodal values ``u(q_m, p_k)``, shape ``(len q, n_p)``."""
        q = np.atleast_1d(np.asarray(q, float))
        U = self.from_scaled(x)
        i = np.clip(((q + self.L) / self.h).astype(int), 0, self.n_q - 1)
        xi = 2.0 * (q - self.edges[i]) / self.h - 1.0
        P = _legendre_vals(self.degree, xi)  # (nloc, m)
        return np.einsum("am,mak->mk", P, U[i])

    def hermite_coefficients(self, nodal: np.ndarray) -> np.ndarray:
        """Coefficients of ``phi_0..phi_{n_p-1}`` from nodal values (last axis)."""
        return (np.asarray(nodal) * np.sqrt(self.w_hat)) @ self.Q

    def maxwellian(self) -> np.ndarray:
        return self.project(lambda q, p: np.exp(-0.5 * p * p - self.V_total(q)))

    # ---- norms and traces
    def l2_norm(self, x) -> float:
        return float(np.linalg.norm(x))

    def h1_norm_sq(self, x) -> float:
        X = np.asarray(x).reshape(-1, self.n_p)
        OX = X @ (self.O_tilde + 0.5 * np.eye(self.n_p)).T
        return float(np.real(np.sum(np.conj(X) * OX)))

    def face_values(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Left and right cell-face values ``(n_q, n_p)`` from each cell."""
        U = self.from_scaled(x)
        signs = (-1.0) ** np.arange(self.nloc)
        return np.einsum("a,iak->ik", signs, U), U.sum(axis=1)

    def trace(self, x) -> np.ndarray:
        """``u(0, p_k)``: outgoing from the interior, incoming from the condition."""
        _, right = self.face_values(x)
        g = right[-1].astype(complex)
        inc = self.velocity < 0
        g[inc] = self.refl[inc] * right[-1][self.mirror][inc]
        return g

    def trace_norm(self, x, *, inverse_weight_power: float = 0.0) -> float:
        """``||(1+|p|)^{-s} gamma u||_{L^2(|p|dp)}``."""
        g = self.trace(x)
        wt = self.w_hat * np.abs(self.p) / (1.0 + np.abs(self.p)) ** (2 * inverse_weight_power)
        return float(np.sqrt(np.sum(wt * np.abs(g) ** 2)))

    def boundary_term(self, x) -> float:
        """``Re <gamma_ev, A gamma_ev>_{L^2(|p|dp)}``."""
        g = self.trace(x)
        ev = 0.5 * (g + self.A.j * g[self.mirror])
        a = self.A.multiplier(self.p)
        return float(np.sum(self.w_hat * np.abs(self.p) * np.real(a) * np.abs(ev) ** 2))

    def upwind_dissipation(self, x) -> float:
        """``sum_k w_k |c_k|/2 sum_faces |jump|^2`` including inflow faces."""
        left, right = self.face_values(x)
        c = self.velocity
        jumps = np.abs(right[:-1] - left[1:]) ** 2  # interior faces
        total = np.sum(jumps, axis=0)
        pos = c > 0
        # inflow at q=-L (specular mirror) and at q=0 (boundary operator)
        g_wall = left[0][self.mirror]
        total = total + np.where(pos, np.abs(left[0] - g_wall) ** 2, 0.0)
        g0 = self.trace(x)
        total = total + np.where(~pos, np.abs(right[-1] - g0) ** 2, 0.0)
        return float(np.sum(self.w_hat * 0.5 * np.abs(c) * total))

    def ipp_certificate(self, x) -> dict:
        """Discrete integration by parts.

        ``Re<u,(K+1/2)u> = ||u||^2_{H^1} + Re<g_ev, A g_ev> + D_upw``; returns
        all terms and the relative residual.
        """
        x = np.asarray(x)
        lhs = float(np.real(np.vdot(x, self.matrix @ x))) + 0.5 * float(np.real(np.vdot(x, x)))
        h1 = self.h1_norm_sq(x)
        bt = self.boundary_term(x)
        du = self.upwind_dissipation(x)
        scale = max(abs(lhs), h1, 1e-300)
        return {"lhs": lhs, "h1": h1, "boundary": bt, "upwind": du,
                "residual": abs(lhs - h1 - bt - du) / scale}

    # ---- linear algebra
    def shifted(self, z: complex) -> sp.csc_matrix:
        """``K - z``."""
        I = sp.identity(self.dim, format="csr")
        return (self.matrix - z * I).tocsc()

    def solve(self, rhs: np.ndarray, shift: complex = 0.5) -> np.ndarray:
        """``(shift + K) x = rhs``."""
        return spla.spsolve(self.shifted(-shift), rhs)

    def numerical_range_imag(self) -> float:
        """Upper bound of ``|Im <u, K u>|`` over unit ``u``."""
        H = (self.matrix - self.matrix.conj().T) / 2j
        if self.dim <= DENSE_LIMIT:
            return float(np.abs(np.linalg.eigvalsh(H.toarray())).max())
        return float(abs(spla.eigsh(H, k=1, which="LM", return_eigenvectors=False)[0]))

    def hermitian_min(self) -> float:
        """``min Re <u, K u>`` over unit ``u``."""
        H = (self.matrix + self.matrix.conj().T) / 2
        if self.dim <= DENSE_LIMIT:
            return float(np.linalg.eigvalsh(H.toarray()).min())
        lu = spla.splu(H.tocsc())
        op = spla.LinearOperator(H.shape, matvec=lu.solve, dtype=H.dtype)
        mu = spla.eigsh(op, k=1, which="LM", return_eigenvectors=False)[0]
        return float(1.0 / mu)

    def accretivity_sample(self, n: int = 64, seed: int = 0) -> float:
        """``min_u Re<u,(K-1/2)u> / ||K||`` over random unit vectors."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((self.dim, n)) + 1j * rng.standard_normal((self.dim, n))
        X /= np.linalg.norm(X, axis=0)
        vals = np.real(np.sum(np.conj(X) * (self.matrix @ X), axis=0)) - 0.5
        return float(vals.min() / self.op_norm)

    def export_coo(self, path) -> None:
        M = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for r, c, v in zip(M.row, M.col, M.data):
                v = complex(v)
                fh.write(f"{r},{c},{v.real:.17g},{v.imag:.17g}\n")

    def describe(self) -> dict:
        return {"L": self.L, "n_q": self.n_q, "n_p": self.n_p, "degree": self.degree,
                "sigma": self.sigma, "A": self.A.to_dict(),
                "potential": self.potential.to_dict() if self.potential.kind != "custom" else "custom",
                "wall": self.wall.to_dict(), "dim": self.dim}


def assemble(L: float, n_q: int, n_p: int, A: BoundaryOperator | None = None, sign_index=1, *,
             potential: Potential | None = None, wall_policy: str | Wall = "specular",
             degree: int = 1) -> DiscreteKfp:
    """Matrix of ``+-(p d_q - V' d_p) + O`` with the boundary condition of ``A``."""
    A = A or BoundaryOperator.zero()
    sigma = _sigma(sign_index)
    if L <= 0 or n_q < 2:
        raise ValidationError("need L > 0 and n_q >= 2")
    if degree not in (0, 1, 2, 3):
        raise ValidationError("DG degree must be 0..3")
    potential = potential or Potential()
    wall = wall_policy if isinstance(wall_policy, Wall) else Wall(wall_policy)
    potential.check(L)
    p, w_hat, Q = collocation(n_p)
    nl = degree + 1
    h = L / n_q
    m = h / (2.0 * np.arange(nl) + 1.0)
    S = _stiffness(degree)
    sgn = (-1.0) ** np.arange(nl)
    c = sigma * p
    mirror = np.arange(n_p)[::-1]
    refl = A.j * A.reflection(p)
    cplx = np.iscomplexobj(refl) and np.abs(refl.imag).max() > 0
    refl = refl if cplx else refl.real

    def idx(i, a, k):
        return (np.asarray(i) * nl + np.asarray(a)) * n_p + np.asarray(k)

    rows, cols, vals = [], [], []

    def add(r_, c_, v_):
        r_, c_, v_ = np.broadcast_arrays(r_, c_, v_)
        rows.append(r_.ravel())
        cols.append(c_.ravel())
        vals.append(v_.ravel())

    cells = np.arange(n_q)
    B, Aa = np.meshgrid(np.arange(nl), np.arange(nl), indexing="ij")  # B: test, Aa: trial
    scale = 1.0 / np.sqrt(m[B] * m[Aa])
    for k in range(n_p):
        ck = c[k]
        km = mirror[k]
        if ck > 0:
            self_blk = ck * (1.0 - S) * scale
            up_blk = (-ck * sgn[B] * np.ones_like(Aa)) * scale
            add(idx(cells[:, None, None], B, k), idx(cells[:, None, None], Aa, k), self_blk)
            add(idx(cells[1:, None, None], B, k), idx(cells[:-1, None, None], Aa, k), up_blk)
            add(idx(0, B, k), idx(0, Aa, km), -ck * sgn[B] * sgn[Aa] * scale)
        else:
            self_blk = (-ck * sgn[B] * sgn[Aa] - ck * S) * scale
            up_blk = (ck * sgn[Aa] * np.ones_like(B)) * scale
            add(idx(cells[:, None, None], B, k), idx(cells[:, None, None], Aa, k), self_blk)
            add(idx(cells[:-1, None, None], B, k), idx(cells[1:, None, None], Aa, k), up_blk)
            if refl[k] != 0:
                add(idx(n_q - 1, B, k), idx(n_q - 1, Aa, km), ck * refl[k] * scale)
    dtype = complex if cplx else float
    T = sp.csr_matrix((np.concatenate(vals).astype(dtype), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_q * nl * n_p,) * 2)
    O_t = (Q * (np.arange(n_p) + 0.5)) @ Q.T
    K = T + sp.kron(sp.identity(n_q * nl), sp.csr_matrix(O_t))
    # -sigma V'(q) d/dp, skew in the scaled coordinates
    xg, wg = roots_legendre(nl + 6)
    Pg = _legendre_vals(degree, xg)
    qg = (-L + h * cells)[:, None] + 0.5 * h * (xg[None, :] + 1.0)
    dV = potential.dV(qg) + wall.dV(qg, L)
    if np.abs(dV).max() > 0:
        W = 0.5 * h * np.einsum("g,ig,ag,bg->iba", wg, dV, Pg, Pg) / np.sqrt(np.outer(m, m))[None]
        Dt = Q @ dp_matrix(n_p) @ Q.T
        K = K - sigma * sp.kron(sp.block_diag(list(W)), sp.csr_matrix(Dt))
    K = sp.csr_matrix(K)
    K.eliminate_zeros()
    return DiscreteKfp(float(L), int(n_q), int(n_p), A, sigma, degree, potential, wall, K, p, w_hat, Q,
                       np.asarray(refl))


def p_reversal(op: DiscreteKfp) -> sp.csr_matrix:
    """Permutation ``U: u(q, p) -> u(q, -p)`` in scaled coordinates."""
    perm = np.arange(op.dim).reshape(-1, op.n_p)[:, ::-1].ravel()
    return sp.csr_matrix((np.ones(op.dim), (np.arange(op.dim), perm)), shape=(op.dim, op.dim))


def structure_defects(op: DiscreteKfp) -> dict:
    """``||U K_{+,A} U - K_{-,A}||`` and ``||K_{+,A}^* - K_{-,A*}||`` (max-abs entries)."""
    other = assemble(op.L, op.n_q, op.n_p, op.A, -op.sigma, potential=op.potential,
                     wall_policy=op.wall, degree=op.degree)
    adj = assemble(op.L, op.n_q, op.n_p, op.A.adjoint(), -op.sigma, potential=op.potential,
                   wall_policy=op.wall, degree=op.degree)
    U = p_reversal(op)
    d1 = U @ op.matrix @ U - other.matrix
    d2 = op.matrix.conj().T - adj.matrix
    scale = max(abs(op.matrix).max(), 1e-300)
    return {"reversal": float(abs(d1).max() / scale) if d1.nnz else 0.0,
            "adjoint": float(abs(d2).max() / scale) if d2.nnz else 0.0}


# ------------------------------------------------------------------ resolvents

def smallest_singular(op: DiscreteKfp, z: complex) -> tuple[float, np.ndarray]:
    """Smallest singular value of ``K - z`` and its right singular vector."""
    M = op.shifted(z)
    if op.dim <= DENSE_LIMIT:
        _, s, vh = np.linalg.svd(M.toarray())
        return float(s[-1]), vh[-1].conj()
    lu = spla.splu(M)
    dtype = complex if (np.iscomplexobj(M) or np.iscomplexobj(z)) else float

    def mv(v):
        return lu.solve(lu.solve(np.asarray(v, dtype), trans="H"))

    op_ = spla.LinearOperator(M.shape, matvec=mv, dtype=dtype)
    mu, vec = spla.eigsh(op_, k=1, which="LM", tol=1e-10)
    v = vec[:, 0]
    s = float(np.linalg.norm(M @ v) / np.linalg.norm(v))
    return s, v / np.linalg.norm(v)


def resolvent_norm(op: DiscreteKfp, z: complex) -> float:
    """``||(z - K)^{-1}||``."""
    s, _ = smallest_singular(op, z)
    if s <= 1e-13 * op.op_norm:
        raise NumericalFailure(f"z={z} is (numerically) an eigenvalue", value=s)
    return 1.0 / s


def japanese(lam) -> np.ndarray:
    return np.sqrt(1.0 + np.asarray(lam, float) ** 2)


@dataclass
class SweepReport:
    lambdas: np.ndarray
    norms: np.ndarray
    ratios: dict
    tags: dict

    @property
    def sups(self) -> dict:
        return {k: float(np.max(v)) for k, v in self.ratios.items()}

    def stabilization(self, refined: "SweepReport") -> dict:
        """Relative change of each sup between this sweep and a refined one."""
        a, b = self.sups, refined.sups
        return {k: abs(b[k] - a[k]) / max(abs(b[k]), 1e-300) for k in a}

    def to_rows(self):
        names = sorted(self.ratios)
        yield ["lambda", "resolvent_norm", *names]
        for i, lam in enumerate(self.lambdas):
            yield [f"{lam:.17g}", f"{self.norms[i]:.17g}", *[f"{self.ratios[n][i]:.17g}" for n in names]]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.to_rows():
                fh.write(",".join(row) + "\n")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"lambdas": self.lambdas.tolist(), "norms": self.norms.tolist(),
                       "ratios": {k: v.tolist() for k, v in self.ratios.items()},
                       "sups": self.sups, "tags": self.tags}, fh, indent=2)


def subelliptic_sweep(op: DiscreteKfp, lambdas: Sequence[float], workers: int | None = None) -> SweepReport:
    """Ratios of the subelliptic estimates along smallest-singular vectors of ``K - i lambda``.

    ``interior``: ``<l>^{1/4} ||u|| / ||(K-il)u||``;
    ``h1``: ``<l>^{1/8} ||u||_{L^2 H^1} / ||(K-il)u||``;
    ``trace``: ``<l>^{1/8} ||gamma u||`` (A nonzero) or
    ``<l>^{1/4} ||(1+|p|)^{-1} gamma u||`` (A zero), over ``||(K-il)u||``.
    A real matrix gives the same values at ``+-lambda``; only ``|lambda|`` is solved.
    """
    lambdas = np.asarray(lambdas, float)
    uniq = np.unique(np.abs(lambdas)) if op.is_real else np.unique(lambdas)
    specular = op.A.kind == "zero"

    def one(lam):
        s, v = smallest_singular(op, 1j * lam)
        jl = japanese(lam)
        h1 = np.sqrt(op.h1_norm_sq(v))
        if specular:
            tr = jl ** 0.25 * op.trace_norm(v, inverse_weight_power=1.0)
        else:
            tr = jl ** 0.125 * op.trace_norm(v)
        return 1.0 / s, jl ** 0.25 / s, jl ** 0.125 * h1 / s, tr / s

    res = dict(zip(uniq.tolist(), ordered_map(one, uniq.tolist(), workers)))
    key = (lambda l: abs(l)) if op.is_real else (lambda l: l)
    rows = np.array([res[key(l)] for l in lambdas])
    return SweepReport(lambdas, rows[:, 0],
                       {"interior": rows[:, 1], "h1": rows[:, 2], "trace": rows[:, 3]},
                       {"n_q": op.n_q, "n_p": op.n_p, "degree": op.degree, "L": op.L,
                        "trace_form": "weighted_quarter" if specular else "eighth"})


# ------------------------------------------------------------------ spectrum

@dataclass
class Spectrum:
    values: np.ndarray
    min_real: float
    pt_defect: float | None
    region_constant: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("re,im\n")
            for z in self.values:
                fh.write(f"{z.real:.17g},{z.imag:.17g}\n")


def _pt_defect(vals: np.ndarray, trusted: np.ndarray) -> float:
    if trusted.size == 0:
        return 0.0
    d = np.abs(np.conj(trusted)[:, None] - vals[None, :]).min(axis=1)
    return float(d.max() / max(1.0, np.abs(trusted).max()))


def spectrum(op: DiscreteKfp, k: int = 10, *, sigma: float = 0.0) -> Spectrum:
    """``k`` eigenvalues of smallest real part (shift-invert about ``sigma`` when sparse)."""
    if k < 1 or k > op.dim - 2:
        raise ValidationError("k must lie in [1, dim-2]")
    if op.dim <= DENSE_LIMIT:
        allv = np.linalg.eigvals(op.matrix.toarray())
        vals = allv[np.argsort(allv.real)][:k]
        pt = _pt_defect(allv, vals) if op.is_real else None
    else:
        m = min(op.dim - 2, k + 8)
        lu = spla.splu(op.shifted(sigma))
        OPinv = spla.LinearOperator(op.matrix.shape, matvec=lu.solve, dtype=op.matrix.dtype)
        try:
            allv = spla.eigs(op.matrix, k=m, sigma=sigma, OPinv=OPinv, return_eigenvectors=False,
                             tol=1e-12, maxiter=5000)
        except spla.ArpackNoConvergence as exc:  # pragma: no cover - reported, not hidden
            raise NumericalFailure("eigensolver did not converge") from exc
        order = np.argsort(np.abs(allv - sigma))
        allv = allv[order]
        radius = np.abs(allv - sigma).max()
        trusted = allv[np.abs(allv - sigma) < 0.8 * radius]
        vals = allv[np.argsort(allv.real)][:k]
        pt = _pt_defect(allv, trusted) if op.is_real else None
    region = float(np.max(np.abs(vals + 1.0) / (vals.real + 1.0) ** 4))
    return Spectrum(vals, float(vals.real.min()), pt, region)


# ------------------------------------------------------------------ semigroup

def pseudospectral_constant(op: DiscreteKfp, Y: float, n: int = 24, workers: int | None = None) -> float:
    """``max_l <l>^{1/4} ||(-1 + i l - K)^{-1}||`` on a log grid of ``l`` in ``[0, Y]``."""
    lam = np.concatenate([[0.0], np.geomspace(0.5, Y, n - 1)])
    if not op.is_real:
        lam = np.concatenate([-lam[1:][::-1], lam])
    vals = ordered_map(lambda l: japanese(l) ** 0.25 / smallest_singular(op, -1.0 + 1j * l)[0], lam, workers)
    return float(max(vals))


@dataclass
class ContourSemigroup:
    """``exp(-tK) f = (1/2 pi i) int_G exp(-tz) (z-K)^{-1} f dz``.

    ``G``: the curve ``Re z = -1 + <y>^{1/4}/C_K`` for ``|y| <= Y`` closed by
    the horizontal rays ``Im z = +-Y`` to ``+infinity``.  ``C_K`` is twice
    the measured pseudospectral constant, ``Y`` exceeds the numerical range.
    """

    op: DiscreteKfp
    C_K: float
    Y: float
    t_max: float = 1.0
    panel_nodes: int = 10
    ray_nodes: int = 48

    @classmethod
    def build(cls, op: DiscreteKfp, t_max: float = 1.0, **kw) -> "ContourSemigroup":
        Y = 1.25 * op.numerical_range_imag() + 2.0
        C = 2.0 * pseudospectral_constant(op, Y)
        return cls(op, C, Y, t_max, **kw)

    def x_of(self, y):
        return -1.0 + japanese(y) ** 0.25 / self.C_K

    def dx_of(self, y):
        y = np.asarray(y, float)
        return 0.25 * japanese(y) ** (-1.75) * y / self.C_K

    def _segment_rule(self, refine: int = 1):
        """Panels on ``[0, Y]`` sized by the distance scale and the oscillation."""
        xg, wg = roots_legendre(self.panel_nodes * refine)
        edges = [0.0]
        while edges[-1] < self.Y:
            y = edges[-1]
            w = min(np.pi / max(self.t_max, 1e-12), max(0.25, 0.5 * japanese(y) ** 0.25 / self.C_K))
            edges.append(min(self.Y, y + w))
        e = np.array(edges)
        a, b = e[:-1, None], e[1:, None]
        y = (0.5 * (b - a) * (xg + 1) + a).ravel()
        w = (0.5 * (b - a) * wg).ravel()
        return y, w

    def _solves(self, zs, f):
        def one(z):  # (z - K)^{-1} f
            return -spla.spsolve(self.op.shifted(z), f)
        return np.array(ordered_map(one, list(zs)))

    def apply(self, f: np.ndarray, t: float, *, refine: int = 1) -> np.ndarray:
        if t <= 0:
            raise ValidationError("t must be positive")
        f = np.asarray(f)
        real = self.op.is_real and not np.iscomplexobj(f)
        y, w = self._segment_rule(refine)
        halves = [1.0] if real else [1.0, -1.0]
        total = np.zeros(self.op.dim, complex)
        tl, wl = np.polynomial.laguerre.laggauss(self.ray_nodes * refine)
        for s in halves:
            # curve, traversed downward on the upper half and the mirror on the lower
            z = self.x_of(y) + 1j * s * y
            dz = self.dx_of(y) + 1j * s  # d z / d y
            R = self._solves(z, f)
            # the curve runs from y=Y down to y=-Y
            seg = -s * np.einsum("m,mk->k", w * np.exp(-t * z) * dz, R)
            # ray: upper from +inf to corner (leftward), lower from corner to +inf
            corner = self.x_of(self.Y) + 1j * s * self.Y
            zr = corner + tl / t
            Rr = self._solves(zr, f)
            ray = np.einsum("m,mk->k", wl / t * np.exp(-t * corner), Rr)
            total += seg + (-ray if s > 0 else ray)
        out = total / (2j * np.pi)
        if real:
            out = 2.0 * out.real  # the lower half is the complex conjugate
        return out

    def apply_checked(self, f, t, tol: float = 1e-8) -> tuple[np.ndarray, float]:
        """Result and the change under doubled quadrature; raises above ``tol``."""
        a = self.apply(f, t)
        b = self.apply(f, t, refine=2)
        err = float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
        if err > tol:
            raise NumericalFailure(f"contour quadrature error {err:.2e} above {tol:.1e}", value=err)
        return b, err


def crank_nicolson(op: DiscreteKfp, f: np.ndarray, t: float, steps: int = 400) -> np.ndarray:
    """Crank-Nicolson for ``u' = -Ku`` with one Richardson extrapolation."""

    def run(n):
        dt = t / n
        I = sp.identity(op.dim, format="csc")
        lu = spla.splu((I + 0.5 * dt * op.matrix).tocsc())
        Bm = (I - 0.5 * dt * op.matrix).tocsr()
        u = np.asarray(f, complex if np.iscomplexobj(f) or not op.is_real else float)
        for _ in range(n):
            u = lu.solve(Bm @ u)
        return u

    coarse, fine = run(steps), run(2 * steps)
    return (4.0 * fine - coarse) / 3.0


def expm_apply(op: DiscreteKfp, f: np.ndarray, t: float) -> np.ndarray:
    return spla.expm_multiply(-t * op.matrix.tocsc(), f)


def smoothing_profile(op: DiscreteKfp, times: Sequence[float], power: int = 7) -> np.ndarray:
    """``||t^power K exp(-t(1+K))||_2`` by dense exponentials."""
    if op.dim > 2 * DENSE_LIMIT:
        raise ValidationError("smoothing profile needs a small problem (dense exponentials)")
    K = op.matrix.toarray()
    I = np.eye(op.dim)
    out = []
    for t in times:
        E = expm(-t * (I + K))
        out.append(t ** power * np.linalg.norm(K @ E, 2))
    return np.array(out)


# ------------------------------------------------------------------ decay

@dataclass
class DecayReport:
    tau: float
    slope: float
    slope_error: float
    rate: float
    times: np.ndarray
    norms: np.ndarray
    satisfied: bool


def principal_pair(op: DiscreteKfp, which: int = 0):
    """Eigenvalue ``which`` (by real part) with right and left eigenvectors."""
    K = op.matrix.toarray() if op.dim <= DENSE_LIMIT else None
    if K is not None:
        vals, vecs = np.linalg.eig(K)
        order = np.argsort(vals.real)
        mu = vals[order[which]]
        r = vecs[:, order[which]]
        lv, lvecs = np.linalg.eig(K.conj().T)
        l = lvecs[:, np.argmin(np.abs(lv - np.conj(mu)))]
    else:
        sp_ = spectrum(op, which + 2)
        mu = sp_.values[which]
        _, rv = spla.eigs(op.matrix, k=1, sigma=mu)
        _, lvv = spla.eigs(op.matrix.conj().T.tocsc(), k=1, sigma=np.conj(mu))
        r, l = rv[:, 0], lvv[:, 0]
    return mu, r, l


def exp_decay_check(op: DiscreteKfp, tau: float, *, project: bool = False, f: np.ndarray | None = None,
                    window: tuple[float, float] | None = None, n_times: int = 40, seed: int = 0) -> DecayReport:
    """Fit ``log ||exp(-tK)(1 - Pi_0) f||`` against ``t``; checks ``slope <= -tau``.

    ``project`` removes the principal eigenvalue with its spectral projector,
    so the remainder decays at the next rate.
    """
    mu0, r, l = principal_pair(op, 0)
    mu1, _, _ = principal_pair(op, 1)
    if project and abs(mu1.real - mu0.real) < 1e-10:
        raise NumericalFailure("no spectral gap detected")
    rate = mu1.real if project else mu0.real
    if f is None:
        f = op.project(lambda q, p: np.exp(-(q + 0.5 * op.L) ** 2 - 0.5 * (p - 0.7) ** 2))
        f = f + 0.1 * np.random.default_rng(seed).standard_normal(op.dim) * np.linalg.norm(f) / np.sqrt(op.dim)
    f = np.asarray(f, complex)
    if project:
        f = f - r * (np.vdot(l, f) / np.vdot(l, r))
    if tau == 0:
        return DecayReport(0.0, 0.0, 0.0, rate, np.zeros(0), np.zeros(0), True)
    if window is None:
        gap = (mu1.real - mu0.real) if not project else max(principal_pair(op, 2)[0].real - mu1.real, 1e-3)
        t1 = min(12.0 / gap, 40.0 / rate)
        window = (t1, t1 + 6.0 / rate)
    times = np.linspace(window[0], window[1], n_times)
    states = spla.expm_multiply(-op.matrix.tocsc(), f, start=times[0], stop=times[-1], num=n_times, endpoint=True)
    norms = np.linalg.norm(states, axis=1)
    y = np.log(norms)
    Afit = np.vstack([times, np.ones_like(times)]).T
    coef, res, *_ = np.linalg.lstsq(Afit, y, rcond=None)
    resid = y - Afit @ coef
    s2 = float(resid @ resid) / max(len(times) - 2, 1)
    cov = s2 * np.linalg.inv(Afit.T @ Afit)
    slope, err = float(coef[0]), float(np.sqrt(cov[0, 0]))
    return DecayReport(tau, slope, err, float(rate), times, norms, slope <= -tau + 3 * err + 1e-12)


# ------------------------------------------------------------------ boundary response

def boundary_response_contraction(op: DiscreteKfp, lam: float) -> float:
    """Norm of incoming data -> outgoing trace for ``(K_{A=I} - i lam) u = 0`` in ``L^2(|p|dp)``."""
    if op.A.kind != "identity":
        op = assemble(op.L, op.n_q, op.n_p, BoundaryOperator.identity(op.A.j), op.sigma,
                      potential=op.potential, wall_policy=op.wall, degree=op.degree)
    c = op.velocity
    inc = np.where(c < 0)[0]
    out = op.mirror[inc]
    lu = spla.splu(op.shifted(1j * lam).astype(complex))
    nl, n_p = op.nloc, op.n_p
    T = np.zeros((out.size, inc.size), complex)
    for col, k in enumerate(inc):
        F = np.zeros(op.dim, complex)
        b = np.arange(nl)
        F[((op.n_q - 1) * nl + b) * n_p + k] = c[k] * np.sqrt(op.w_hat[k] / op.mass[b])
        x = lu.solve(-F)
        _, right = op.face_values(x)
        T[:, col] = right[-1][out]
    wi = np.sqrt(op.w_hat[inc] * np.abs(op.p[inc]))
    wo = np.sqrt(op.w_hat[out] * np.abs(op.p[out]))
    return float(np.linalg.norm(wo[:, None] * T / wi[None, :], 2))


# ------------------------------------------------------------------ comparisons

def relative_l2_error(op: DiscreteKfp, x: np.ndarray, exact: Callable[[np.ndarray], np.ndarray],
                      n_gauss: int = 8) -> float:
    """``||u_h - u|| / ||u||`` by Gauss quadrature per cell at the p nodes.

    ``exact(q)`` returns nodal values ``(len q, n_p)``.
    """
    xg, wg = roots_legendre(n_gauss)
    a = op.edges[:-1]
    qg = (a[:, None] + 0.5 * op.h * (xg[None, :] + 1.0)).ravel()
    wq = np.tile(0.5 * op.h * wg, op.n_q)
    uh = op.evaluate(x, qg)
    ue = np.asarray(exact(qg))
    W = wq[:, None] * op.w_hat[None, :]
    num = np.sum(W * np.abs(uh - ue) ** 2)
    den = np.sum(W * np.abs(ue) ** 2)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def observed_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log error`` against ``log h``."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
