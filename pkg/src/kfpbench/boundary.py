"""Boundary operators ``(A, j)`` and the Pi_+- algebra on L^2(|p|dp).

Only operators acting as multiplication by a function ``a(r)`` of
``r = |p|`` are realized.  The boundary condition for ``K_{+-,A}`` reads
``gamma_odd = +- sign(p) A gamma_ev``; in reflection form the incoming
trace equals ``j R(r)`` times the outgoing one, ``R = (1-a)/(1+a)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    HypothesisViolation,
    NonStochasticPolicy,
    NumericalFailure,
    OutsideContractionClass,
    ValidationError,
)
from .nu_basis import NuBasis, NuExpansion, boundary_quadrature, to_pairs
from .oscillator import HermiteVector, Quadrature, build_quadrature

KINDS = ("zero", "identity", "partial", "scalar")
_KIND_ALIASES = {
    "zero": "zero",
    "specular": "zero",
    "identity": "identity",
    "absorb": "identity",
    "absorbing": "identity",
    "partial": "partial",
    "partialabsorption": "partial",
    "partial_absorption": "partial",
    "scalar": "scalar",
}


def _normalize_table(table) -> tuple[tuple[float, float], ...]:
    rows = tuple((float(r), float(e)) for r, e in table)
    if not rows:
        raise ValidationError("epsilon_table is empty")
    rs = [r for r, _ in rows]
    if rs[0] != 0.0 or any(b <= a for a, b in zip(rs[:-1], rs[1:])):
        raise ValidationError("epsilon_table breakpoints must start at 0 and increase")
    return rows


@dataclass(frozen=True)
class BoundaryOperator:
    """Multiplication by ``a(|p|)`` together with the involution ``j``.

    ``partial`` carries a piecewise-constant absorption table
    ``epsilon_table = ((r_0=0, eps_0), (r_1, eps_1), ...)``, meaning
    ``eps(r) = eps_i`` on ``[r_i, r_{i+1})``; then ``a = (1-eps)/(1+eps)``.
    ``scalar`` uses the complex constant ``c`` (``Re c > 0``).
    """

    kind: str
    j: int = 1
    alpha: float | None = None
    epsilon_table: tuple[tuple[float, float], ...] | None = None
    c: complex | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if str(self.kind).lower().replace("-", "_") in ("bounce_back", "bounceback"):
            raise OutsideContractionClass(
                "bounce-back kernels do not give a strict contraction on the even traces"
            )
        if kind is None:
            raise ValidationError(f"unknown boundary kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.j not in (1, -1):
            raise ValidationError("j must be +1 or -1")
        if kind == "partial":
            if self.epsilon_table is None:
                raise ValidationError("partial absorption needs an epsilon_table")
            table = _normalize_table(self.epsilon_table)
            object.__setattr__(self, "epsilon_table", table)
            alpha = self.alpha
            if alpha is None:
                alpha = 1.0 - max(e for _, e in table)
            if not (0.0 < alpha <= 1.0):
                raise ValidationError("partial absorption needs a gap alpha in (0, 1]")
            object.__setattr__(self, "alpha", float(alpha))
            for _, e in table:
                if e < 0.0 or e > 1.0 - alpha + 1e-15:
                    raise ValidationError(
                        f"epsilon={e} outside [0, 1-alpha] with alpha={alpha}"
                    )
        elif kind == "scalar":
            if self.c is None:
                raise ValidationError("scalar boundary operator needs c")
            c = complex(self.c)
            if not c.real > 0:
                raise HypothesisViolation("scalar A must have Re c > 0")
            object.__setattr__(self, "c", c)

    # -------------------------------------------------------------- factories
    @classmethod
    def zero(cls, j: int = 1) -> "BoundaryOperator":
        return cls("zero", j)

    @classmethod
    def identity(cls, j: int = 1) -> "BoundaryOperator":
        return cls("identity", j)

    @classmethod
    def scalar(cls, c: complex, j: int = 1) -> "BoundaryOperator":
        return cls("scalar", j, c=c)

    @classmethod
    def partial(cls, epsilon, alpha: float | None = None, j: int = 1) -> "BoundaryOperator":
        """Constant ``epsilon`` (number) or a step table."""
        table = ((0.0, float(epsilon)),) if np.isscalar(epsilon) else epsilon
        return cls("partial", j, alpha=alpha, epsilon_table=table)

    # -------------------------------------------------------------- realization
    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.kind == "partial":
            return tuple(r for r, _ in self.epsilon_table[1:])
        return ()

    def epsilon(self, r) -> np.ndarray:
        """Reflection probability on the outgoing half (``R`` for real kinds)."""
        r = np.abs(np.asarray(r, float))
        if self.kind == "zero":
            return np.ones_like(r)
        if self.kind == "identity":
            return np.zeros_like(r)
        if self.kind == "partial":
            starts = np.array([s for s, _ in self.epsilon_table])
            eps = np.array([e for _, e in self.epsilon_table])
            return eps[np.searchsorted(starts, r, side="right") - 1]
        raise ValidationError("epsilon is only defined for zero/identity/partial kinds")

    def multiplier(self, r) -> np.ndarray:
        """``a(r)`` as complex array."""
        r = np.abs(np.asarray(r, float))
        if self.kind == "zero":
            return np.zeros(r.shape, complex)
        if self.kind == "identity":
            return np.ones(r.shape, complex)
        if self.kind == "scalar":
            return np.full(r.shape, self.c, complex)
        e = self.epsilon(r)
        return ((1.0 - e) / (1.0 + e)).astype(complex)

    def reflection(self, r) -> np.ndarray:
        """Cayley transform ``R = (1-a)/(1+a)``."""
        a = self.multiplier(r)
        return (1.0 - a) / (1.0 + a)

    def adjoint(self) -> "BoundaryOperator":
        if self.kind == "scalar":
            return BoundaryOperator("scalar", self.j, c=np.conj(self.c))
        return self

    @property
    def is_real(self) -> bool:
        return self.kind != "scalar" or self.c.imag == 0.0

    @property
    def stochastic(self) -> bool:
        """True when a boundary jump process realizes the condition."""
        return self.j == 1 and self.kind in ("zero", "identity", "partial")

    def require_stochastic(self):
        if self.j == -1:
            raise NonStochasticPolicy(
                "the change-of-sign condition (j=-1) does not preserve positivity; "
                "no jump process realizes it"
            )
        if not self.stochastic:
            raise NonStochasticPolicy(f"kind {self.kind!r} has no jump-process realization")

    # -------------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        d = {"kind": self.kind, "j": self.j, "alpha": self.alpha,
             "epsilon_table": [list(r) for r in self.epsilon_table] if self.epsilon_table else None}
        if self.kind == "scalar":
            d["c"] = [self.c.real, self.c.imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryOperator":
        if not isinstance(d, dict) or "kind" not in d:
            raise ValidationError("boundary operator config needs a 'kind' field")
        unknown = set(d) - {"kind", "j", "alpha", "epsilon_table", "epsilon", "c"}
        if unknown:
            raise ValidationError(f"unknown boundary operator fields {sorted(unknown)}")
        table = d.get("epsilon_table")
        if table is None and d.get("epsilon") is not None:
            table = ((0.0, float(d["epsilon"])),)
        c = d.get("c")
        if isinstance(c, (list, tuple)):
            c = complex(c[0], c[1])
        return cls(d["kind"], int(d.get("j", 1)), alpha=d.get("alpha"),
                   epsilon_table=table, c=c)


def kernel_to_A(epsilon, alpha: float, *, j: int = 1, r_nodes=None) -> BoundaryOperator:
    """Boundary operator of the kernel "reflect with probability eps(|p|), else absorb".

    ``epsilon`` may be a number, a step table, or a callable of ``r``; a
    callable is sampled on ``r_nodes`` (default: a |p|dp rule) and stored as a
    step table.  Rejects ``eps > 1 - alpha`` anywhere on the nodes.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValidationError("alpha must lie in (0, 1]")
    if callable(epsilon):
        if r_nodes is None:
            q = build_quadrature(64, "|p|dp")
            r_nodes = q.nodes[q.nodes > 0]
        r_nodes = np.sort(np.abs(np.asarray(r_nodes, float)))
        vals = np.asarray(epsilon(r_nodes), float)
        if np.any(vals < 0) or np.any(vals > 1.0 - alpha + 1e-15):
            raise ValidationError("epsilon exceeds [0, 1-alpha] on the quadrature nodes")
        edges = np.concatenate([[0.0], 0.5 * (r_nodes[1:] + r_nodes[:-1])])
        table = tuple(zip(edges, vals))
    elif np.isscalar(epsilon):
        table = ((0.0, float(epsilon)),)
    else:
        table = _normalize_table(epsilon)
    if max(e for _, e in table) > 1.0 - alpha + 1e-15 or min(e for _, e in table) < 0:
        raise ValidationError("epsilon exceeds [0, 1-alpha]")
    if all(e == 0.0 for _, e in table):
        A = BoundaryOperator.identity(j)
    else:
        A = BoundaryOperator("partial", j, alpha=alpha, epsilon_table=table)
    bound = (1 + np.sqrt(1 - alpha)) / (1 - np.sqrt(1 - alpha)) if alpha < 1 else 1.0
    r = np.concatenate([[0.0], np.array(A.breakpoints), [1.0]])
    if np.abs(A.multiplier(r)).max() > bound + 1e-12:
        raise NumericalFailure("norm bound of the partial-absorption operator violated")
    return A


# -------------------------------------------------------------- traces

@dataclass(frozen=True)
class BoundaryTrace:
    """A function of p at q=0, evaluated on demand.

    Built from a :class:`HermiteVector`, a :class:`NuExpansion` with its
    basis (direct eigenfunction values), or a plain callable.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    label: str = "trace"

    @classmethod
    def from_hermite(cls, u: HermiteVector) -> "BoundaryTrace":
        return cls(lambda p: u(p), "hermite")

    @classmethod
    def from_nu(cls, x: NuExpansion, basis: NuBasis) -> "BoundaryTrace":
        return cls(lambda p: basis.point_values(p) @ x.coeffs, "nu")

    def values(self, p) -> np.ndarray:
        return np.asarray(self.evaluate(np.asarray(p, float)), complex)

    def parts(self, p, j: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """``(gamma_ev, gamma_odd)`` at ``p`` for the involution ``j``."""
        g = self.values(p)
        gm = self.values(-np.asarray(p, float))
        ev = 0.5 * (g + j * gm)
        return ev, g - ev

    def pi(self, p, which: str, j: int = 1) -> np.ndarray:
        """``Pi_+- = Pi_ev +- sign(p) Pi_odd``."""
        ev, odd = self.parts(p, j)
        s = np.sign(p)
        if which == "plus":
            return ev + s * odd
        if which == "minus":
            return ev - s * odd
        raise ValidationError("which must be 'plus' or 'minus'")


def _trace_rule(A: BoundaryOperator | None, extent: float = 30.0) -> Quadrature:
    bps = A.breakpoints if A is not None else ()
    return build_quadrature(64, "|p|dp", extent=extent, breakpoints=bps)


def weighted_norm(values, q: Quadrature) -> float:
    return float(np.sqrt(np.real(q.integrate(np.abs(values) ** 2))))


@dataclass(frozen=True)
class BcDefect:
    direct: float
    cayley: float


def apply_bc_defect(gamma: BoundaryTrace, A: BoundaryOperator, sign_index: int = 1,
                    *, quadrature: Quadrature | None = None, tol: float = 1e-9) -> BcDefect:
    """Boundary-condition defect computed two ways.

    ``direct = ||gamma_odd -+ sign(p) A gamma_ev||``;
    ``cayley = (1/2) ||(1+A)(Pi_-+ gamma - C Pi_+- gamma)||`` with
    ``C = (1-A)/(1+A)``.  The two coincide algebraically; a mismatch above
    ``tol`` (relative to the trace norm) raises.
    """
    sigma = _sigma(sign_index)
    q = quadrature or _trace_rule(A)
    p = q.nodes
    ev, odd = gamma.parts(p, A.j)
    a = A.multiplier(p)
    s = np.sign(p)
    direct = weighted_norm(odd - sigma * s * a * ev, q)
    pi_plus = ev + s * odd
    pi_minus = ev - s * odd
    prescribed, response = (pi_minus, pi_plus) if sigma == 1 else (pi_plus, pi_minus)
    cay = (1.0 - a) / (1.0 + a)
    cayley = 0.5 * weighted_norm((1.0 + a) * (prescribed - cay * response), q)
    scale = max(weighted_norm(gamma.values(p), q), 1e-300)
    if abs(direct - cayley) > tol * max(scale, 1.0):
        raise NumericalFailure(
            f"BC defect mismatch: direct={direct:.3e} cayley={cayley:.3e}", value=abs(direct - cayley)
        )
    return BcDefect(direct, cayley)


def _sigma(sign_index) -> int:
    if sign_index in (1, "+", "plus"):
        return 1
    if sign_index in (-1, "-", "minus"):
        return -1
    raise ValidationError(f"sign_index must be + or -, got {sign_index!r}")


# -------------------------------------------------------------- Galerkin blocks

@dataclass(frozen=True)
class BoundaryGalerkin:
    """|p|dp Gram blocks of the pair basis ``e_{mu,ev}, e_{mu,odd}``.

    ``G_ev[m,n] = <e_{m,ev}, e_{n,ev}>``, ``G_A[m,n] = <e_{m,ev}, A e_{n,ev}>``,
    ``D[m,n] = <e_{m,ev}, sign(p) e_{n,odd}>`` (``= mu delta_mn``),
    ``X[m,n] = <e_{m,odd}, A e_{n,ev}>`` (parity leakage, ``= 0``).
    """

    basis: NuBasis
    A: BoundaryOperator
    G_ev: np.ndarray
    G_A: np.ndarray
    D: np.ndarray
    X: np.ndarray
    quadrature: Quadrature = field(repr=False)

    @property
    def mu(self) -> np.ndarray:
        return self.basis.values[0::2]

    @property
    def A_tilde(self) -> np.ndarray:
        """Matrix of the projected operator on the ev span."""
        return np.linalg.solve(self.G_ev, self.G_A)

    def pair_values(self, p) -> tuple[np.ndarray, np.ndarray]:
        vals = self.basis.point_values(p)
        j = self.A.j
        ev = (vals[:, 0::2] + j * vals[:, 1::2]) / np.sqrt(2.0)
        odd = (vals[:, 0::2] - j * vals[:, 1::2]) / np.sqrt(2.0)
        return ev, odd


def boundary_galerkin(basis: NuBasis, A: BoundaryOperator) -> BoundaryGalerkin:
    q = boundary_quadrature(basis, "|p|dp", breakpoints=A.breakpoints)
    p = q.nodes
    vals = basis.point_values(p)
    j = A.j
    ev = (vals[:, 0::2] + j * vals[:, 1::2]) / np.sqrt(2.0)
    odd = (vals[:, 0::2] - j * vals[:, 1::2]) / np.sqrt(2.0)
    w = q.weights[:, None]
    a = A.multiplier(p)[:, None]
    G_ev = ev.conj().T @ (w * ev)
    G_A = ev.conj().T @ (w * a * ev)
    D = ev.conj().T @ (w * np.sign(p)[:, None] * odd)
    X = odd.conj().T @ (w * a * ev)
    return BoundaryGalerkin(basis, A, G_ev, G_A, D, X, q)


# -------------------------------------------------------------- validation

@dataclass(frozen=True)
class ValidationReport:
    c_A: float
    norm_A: float
    commutator_norm: float
    cayley_norm: float
    cayley_bound: float | None
    galerkin_cayley_norm: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def validate(A: BoundaryOperator, basis: NuBasis | None = None, *, tol: float = 1e-8) -> ValidationReport:
    """Structural constants of ``A`` and the Cayley contraction bound check."""
    q = _trace_rule(A)
    r = q.nodes[q.nodes > 0]
    probe = np.concatenate([r, np.array(A.breakpoints)])
    a = A.multiplier(probe)
    c_A = float(a.real.min())
    norm_A = float(np.abs(a).max())
    if A.kind != "zero" and c_A <= 0:
        raise HypothesisViolation(f"A is not uniformly accretive (c_A={c_A:.3e})")
    cay = float(np.abs((1 - a) / (1 + a)).max())
    bound = None
    if c_A > 0:
        bound = float((1.0 + 2.0 * c_A / (1.0 + norm_A ** 2)) ** -0.5)
        if cay > bound + tol:
            raise NumericalFailure(f"Cayley norm {cay} exceeds the bound {bound}", value=cay)
    comm, gal = 0.0, None
    if basis is not None:
        bg = boundary_galerkin(basis, A)
        scale = max(np.linalg.norm(bg.G_A, 2), 1e-300)
        comm = float(np.linalg.norm(bg.X, 2) / scale) if A.kind != "zero" else float(np.linalg.norm(bg.X, 2))
        if comm > 1e-10:
            raise HypothesisViolation(f"A does not commute with Pi_ev (defect {comm:.2e})")
        if c_A > 0:
            gal = galerkin_cayley_norm(bg)
    return ValidationReport(c_A, norm_A, comm, cay, bound, gal)


def galerkin_cayley_norm(bg: BoundaryGalerkin) -> float:
    """Norm of ``(1-At)(1+At)^{-1}`` in the ``G_ev`` metric."""
    At = bg.A_tilde
    n = At.shape[0]
    C = np.linalg.solve((np.eye(n) + At).T, (np.eye(n) - At).T).T
    Lc = np.linalg.cholesky(0.5 * (bg.G_ev + bg.G_ev.conj().T))
    M = Lc.conj().T @ C @ np.linalg.inv(Lc.conj().T)
    return float(np.linalg.norm(M, 2))
