"""Langevin trajectories on ``[-L, 0]`` with boundary jump kernels.

``dq = p dt``, ``dp = (-V'(q) - p) dt + dW``; the stationary law is
``exp(-p^2 - 2V)``.  The density ``rho`` relates to the PDE unknown through
``varrho = exp(p^2/2 + V) rho`` which solves ``d_t varrho = -(K_+ - 1/2) varrho``.

At ``q = 0`` a crossing is reflected (``p -> -p``) with probability
``eps(|p|)`` and otherwise sent to the exterior state.  The wall at ``-L``
is specular.

Random streams: trajectories are grouped in fixed blocks of
``BLOCK_SIZE``; block ``b`` draws from
``PCG64(SeedSequence(seed, spawn_key=(b,)))``, so results do not depend on
how blocks are scheduled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.special import erf, roots_legendre

from .boundary import BoundaryOperator
from .discrete import DiscreteKfp, Potential, Wall, assemble, principal_pair
from .errors import NonStochasticPolicy, ValidationError
from .parallel import ordered_map

BLOCK_SIZE = 4096
RNG_ALGORITHM = "PCG64 via SeedSequence(seed, spawn_key=(block,)), block size 4096"


def policy_operator(policy, epsilon=None) -> BoundaryOperator:
    """Boundary operator of a named policy (``specular``, ``absorb``, ``partial``)."""
    if isinstance(policy, BoundaryOperator):
        A = policy
    else:
        name = str(policy).lower().replace("-", "_")
        if name in ("change_of_sign", "sign_change", "antispecular"):
            raise NonStochasticPolicy("the change-of-sign condition does not preserve positivity")
        if name == "partial":
            if epsilon is None:
                raise ValidationError("partial policy needs epsilon")
            A = BoundaryOperator.partial(epsilon)
        else:
            A = BoundaryOperator(name)
    A.require_stochastic()
    return A


@dataclass
class McConfig:
    n_traj: int = 100_000
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    L: float = 3.0
    policy: str = "specular"
    epsilon: object = None
    potential: Potential = field(default_factory=Potential)
    wall: Wall = field(default_factory=Wall)
    q0: float = -1.0
    q_spread: float = 0.3
    p0: float = 0.5
    hist_times: tuple = (1.0,)
    q_bins: int = 12
    p_bins: int = 12
    p_max: float = 3.0
    record_every: int = 10

    def __post_init__(self):
        if self.n_traj < 1 or self.dt <= 0 or self.T <= 0 or self.L <= 0:
            raise ValidationError("n_traj, dt, T and L must be positive")
        if not (-self.L < self.q0 < 0):
            raise ValidationError("q0 must lie inside (-L, 0)")
        if self.q_spread <= 0:
            raise ValidationError("q_spread must be positive")
        lip = self.potential.dV_lipschitz(self.L) + self.wall.dV_lipschitz
        if self.dt * lip > 0.1:
            raise ValidationError(f"dt * Lip(V') = {self.dt * lip:.3g} exceeds 0.1")
        steps = self.steps
        for t in self.hist_times:
            k = t / self.dt
            if abs(k - round(k)) > 1e-9 or not (0 < round(k) <= steps):
                raise ValidationError(f"histogram time {t} is not a step multiple within [dt, T]")
        self.potential.check(self.L)
        self.operator  # rejects policies without a jump-process realization

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def operator(self) -> BoundaryOperator:
        return policy_operator(self.policy, self.epsilon)

    @property
    def q_edges(self) -> np.ndarray:
        return np.linspace(-self.L, 0.0, self.q_bins + 1)

    @property
    def p_edges(self) -> np.ndarray:
        return np.linspace(-self.p_max, self.p_max, self.p_bins + 1)

    def dV(self, q):
        return self.potential.dV(q) + self.wall.dV(q, self.L)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("potential", "wall")}
        d["potential"] = self.potential.to_dict()
        d["wall"] = self.wall.to_dict()
        d["hist_times"] = list(self.hist_times)
        d["rng"] = RNG_ALGORITHM
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        d = dict(d)
        d.pop("rng", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown mc fields {sorted(unknown)}")
        if "potential" in d:
            d["potential"] = Potential.from_dict(d["potential"])
        if "wall" in d:
            d["wall"] = Wall.from_dict(d["wall"])
        if "hist_times" in d:
            d["hist_times"] = tuple(float(t) for t in d["hist_times"])
        return cls(**d)


@dataclass
class McResult:
    config: McConfig
    times: np.ndarray
    alive: np.ndarray  # counts at each recorded time
    histograms: dict  # time -> (q_bins x p_bins) counts of alive trajectories
    overflow: dict  # time -> alive count outside the p window
    block_survival: np.ndarray  # (n_blocks, len(times)) alive counts per block
    block_sizes: np.ndarray
    crossings: int
    reflections: int

    @property
    def survival(self) -> np.ndarray:
        return self.alive / self.config.n_traj

    @property
    def absorbed(self) -> np.ndarray:
        return (self.config.n_traj - self.alive) / self.config.n_traj

    def to_csv(self, prefix) -> list:
        files = [f"{prefix}_survival.csv"]
        with open(files[0], "w") as fh:
            fh.write("t,alive,survival,absorbed\n")
            for t, a in zip(self.times, self.alive):
                fh.write(f"{t:.17g},{int(a)},{a / self.config.n_traj:.17g},{1 - a / self.config.n_traj:.17g}\n")
        qe, pe = self.config.q_edges, self.config.p_edges
        for t, H in self.histograms.items():
            name = f"{prefix}_hist_t{t:g}.csv"
            files.append(name)
            with open(name, "w") as fh:
                fh.write("q_lo,q_hi,p_lo,p_hi,count\n")
                for i in range(H.shape[0]):
                    for k in range(H.shape[1]):
                        fh.write(f"{qe[i]:.17g},{qe[i+1]:.17g},{pe[k]:.17g},{pe[k+1]:.17g},{int(H[i, k])}\n")
        return files


def _initial(cfg: McConfig, rng: np.random.Generator, n: int):
    """q ~ N(q0, s^2) truncated to (-L, 0) by inversion; p ~ N(p0, 1/2)."""
    from scipy.special import ndtr, ndtri

    a = ndtr((-cfg.L - cfg.q0) / cfg.q_spread)
    b = ndtr((0.0 - cfg.q0) / cfg.q_spread)
    u = rng.random(n)
    q = cfg.q0 + cfg.q_spread * ndtri(a + u * (b - a))
    p = cfg.p0 + np.sqrt(0.5) * rng.standard_normal(n)
    return q, p


def _simulate_block(cfg: McConfig, block: int, n: int, eps_fn, record_idx, hist_steps):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(block,))))
    q, p = _initial(cfg, rng, n)
    alive = np.ones(n, bool)
    L, dt = cfg.L, cfg.dt
    sq = np.sqrt(dt)
    cell = cfg.L / cfg.q_bins
    partial = eps_fn is not None and cfg.operator.kind == "partial"
    absorb = cfg.operator.kind == "identity"
    counts = np.empty(len(record_idx), np.int64)
    hists, overflow = {}, {}
    crossings = reflections = 0
    rec = 0
    if record_idx[0] == 0:
        counts[0] = n
        rec = 1
    idx = np.arange(n)
    for step in range(1, cfg.steps + 1):
        ql, pl = q[idx], p[idx]
        dW = sq * rng.standard_normal(idx.size)
        fast = np.abs(pl) * dt > cell
        if fast.any():
            # one bisection level with a Brownian-bridge split of the increment
            eta = np.sqrt(dt) / 2 * rng.standard_normal(int(fast.sum()))
            w1 = dW[fast] / 2 + eta
            w2 = dW[fast] - w1
            qf, pf = ql[fast], pl[fast]
            qm = qf + 0.5 * dt * pf
            pm = pf + 0.5 * dt * (-cfg.dV(qf) - pf) + w1
            qn_f = qm + 0.5 * dt * pm
            pn_f = pm + 0.5 * dt * (-cfg.dV(qm) - pm) + w2
        qn = ql + dt * pl
        pn = pl + dt * (-cfg.dV(ql) - pl) + dW
        if fast.any():
            qn[fast], pn[fast] = qn_f, pn_f
        # crossing of q = 0
        out = qn > 0.0
        if out.any():
            crossings += int(out.sum())
            theta = np.where(out, -ql / np.where(out, qn - ql, 1.0), 0.0)
            p_cross = pl + theta * (pn - pl)
            if absorb:
                keep = np.zeros(out.sum(), bool)
            elif partial:
                u = rng.random(int(out.sum()))
                keep = u < eps_fn(np.abs(p_cross[out]))
            else:
                keep = np.ones(out.sum(), bool)
            oi = np.where(out)[0]
            ref = oi[keep]
            reflections += ref.size
            qn[ref] = -qn[ref]
            pn[ref] = -pn[ref]
            dead = oi[~keep]
            if dead.size:
                alive[idx[dead]] = False
        # specular wall at -L
        low = qn < -L
        if low.any():
            qn[low] = -2 * L - qn[low]
            pn[low] = -pn[low]
        q[idx], p[idx] = qn, pn
        idx = idx[alive[idx]]
        if rec < len(record_idx) and step == record_idx[rec]:
            counts[rec] = idx.size
            rec += 1
        if step in hist_steps:
            qa, pa = q[idx], p[idx]
            H, _, _ = np.histogram2d(qa, pa, bins=[cfg.q_edges, cfg.p_edges])
            hists[step] = H.astype(np.int64)
            overflow[step] = int(np.sum(np.abs(pa) > cfg.p_max))
    return counts, hists, overflow, crossings, reflections


def simulate(cfg: McConfig, workers: int | None = None) -> McResult:
    """Euler-Maruyama ensemble; returns survival counts and (q, p) histograms."""
    A = cfg.operator
    eps_fn = (lambda r: A.epsilon(r)) if A.kind == "partial" else None
    record_idx = list(range(0, cfg.steps + 1, cfg.record_every))
    if record_idx[-1] != cfg.steps:
        record_idx.append(cfg.steps)
    hist_steps = {int(round(t / cfg.dt)) for t in cfg.hist_times}
    sizes = [min(BLOCK_SIZE, cfg.n_traj - b * BLOCK_SIZE) for b in range(-(-cfg.n_traj // BLOCK_SIZE))]
    res = ordered_map(lambda b: _simulate_block(cfg, b, sizes[b], eps_fn, record_idx, hist_steps),
                      range(len(sizes)), workers)
    counts = np.array([r[0] for r in res])
    hists = {s * cfg.dt: sum(r[1][s] for r in res) for s in sorted(hist_steps)}
    overflow = {s * cfg.dt: sum(r[2][s] for r in res) for s in sorted(hist_steps)}
    times = np.array(record_idx) * cfg.dt
    return McResult(cfg, times, counts.sum(axis=0), hists, overflow, counts, np.array(sizes),
                    sum(r[3] for r in res), sum(r[4] for r in res))


# ------------------------------------------------------------------ comparison with the PDE

@dataclass
class PdeGrid:
    n_q: int = 48
    n_p: int = 32
    degree: int = 1


def matching_operator(cfg: McConfig, grid: PdeGrid) -> DiscreteKfp:
    n_q = cfg.q_bins * -(-grid.n_q // cfg.q_bins)  # cells aligned with the q bins
    return assemble(cfg.L, n_q, grid.n_p, cfg.operator, 1, potential=cfg.potential, wall_policy=cfg.wall,
                    degree=grid.degree)


def initial_state(op: DiscreteKfp, cfg: McConfig) -> np.ndarray:
    """``varrho_0 = exp(p^2/2 + V) rho_0`` for the truncated initial law."""
    Z = 0.5 * (erf((0 - cfg.q0) / (np.sqrt(2) * cfg.q_spread)) - erf((-cfg.L - cfg.q0) / (np.sqrt(2) * cfg.q_spread)))
    cq = 1.0 / (np.sqrt(2 * np.pi) * cfg.q_spread * Z)

    def f(q, p):
        rho = cq * np.exp(-0.5 * ((q - cfg.q0) / cfg.q_spread) ** 2) * np.exp(-(p - cfg.p0) ** 2) / np.sqrt(np.pi)
        return np.exp(0.5 * p * p + op.V_total(q)) * rho

    return op.project(f, n_gauss=op.degree + 10)


def bin_probabilities(op: DiscreteKfp, x: np.ndarray, cfg: McConfig, n_gauss: int = 8) -> tuple[np.ndarray, float]:
    """``int_bin exp(-p^2/2 - V) varrho`` per (q, p) bin and the total mass."""
    xg, wg = roots_legendre(n_gauss)
    a = op.edges[:-1]
    qg = (a[:, None] + 0.5 * op.h * (xg[None, :] + 1.0)).ravel()
    wq = np.tile(0.5 * op.h * wg, op.n_q)
    coef = op.hermite_coefficients(op.evaluate(x, qg))  # (m, n_p)
    pe = cfg.p_edges
    pl = (pe[:-1, None] + 0.5 * (pe[1:] - pe[:-1])[:, None] * (xg[None, :] + 1.0))  # (pb, g)
    wp = (0.5 * (pe[1:] - pe[:-1])[:, None] * wg[None, :])
    from .oscillator import hermite_table

    tab = hermite_table(op.n_p - 1, pl.ravel())  # (n_p, pb*g)
    vals = np.real(coef @ tab) * np.exp(-0.5 * pl.ravel() ** 2)[None, :]
    vals *= np.exp(-op.V_total(qg))[:, None]
    per_q = wq[:, None] * vals  # (m, pb*g)
    qbin = ((qg + op.L) / (op.L / cfg.q_bins)).astype(int).clip(0, cfg.q_bins - 1)
    P = np.zeros((cfg.q_bins, cfg.p_bins))
    pp = (per_q * wp.ravel()[None, :]).reshape(len(qg), cfg.p_bins, n_gauss).sum(axis=2)
    np.add.at(P, qbin, pp)
    # total mass: Hermite integral of exp(-p^2/2) phi_n is exact on the Gauss-Hermite nodes
    nodal = op.evaluate(x, qg)
    mass = float(np.sum(wq[:, None] * np.exp(-op.V_total(qg))[:, None] * np.real(nodal)
                        * (op.w_hat * np.exp(-0.5 * op.p ** 2))[None, :]))
    return P, mass


@dataclass
class Comparison:
    t: float
    tv: float
    sigma_mc: float
    threshold: float
    passed: bool
    pde_mass: float
    mc_survival: float


def compare_density(mc: McResult, t: float, grid: PdeGrid = PdeGrid(), *, tol: float = 2e-2) -> Comparison:
    """TV distance between MC bin frequencies and the PDE bins at time ``t``.

    Bins: the (q, p) window, the p-overflow, and the exterior (absorbed) state.
    """
    cfg = mc.config
    op = matching_operator(cfg, grid)
    x0 = initial_state(op, cfg)
    xt = np.exp(0.5 * t) * spla.expm_multiply(-t * op.matrix.tocsc(), x0)
    P, mass = bin_probabilities(op, xt, cfg)
    N = cfg.n_traj
    H = mc.histograms[min(mc.histograms, key=lambda s: abs(s - t))]
    k = int(np.argmin(np.abs(mc.times - t)))
    alive = mc.alive[k]
    f_mc = np.concatenate([H.ravel() / N, [mc.overflow[min(mc.overflow, key=lambda s: abs(s - t))] / N],
                           [(N - alive) / N]])
    f_pde = np.concatenate([P.ravel(), [max(mass - P.sum(), 0.0)], [max(1.0 - mass, 0.0)]])
    tv = 0.5 * float(np.abs(f_mc - f_pde).sum())
    sig = 0.5 * float(np.sum(np.sqrt(np.clip(f_pde * (1 - f_pde), 0, None) / N)))
    thr = 3 * sig + tol
    return Comparison(t, tv, sig, thr, tv <= thr, mass, alive / N)


@dataclass
class DecayComparison:
    slope: float
    slope_sigma: float
    spectral_rate: float
    eigenvalue: complex
    window: tuple
    passed: bool
    block_slopes: np.ndarray


def _fit_slope(t, logS, w):
    W = np.sqrt(w)
    A = np.vstack([t, np.ones_like(t)]).T * W[:, None]
    coef, *_ = np.linalg.lstsq(A, logS * W, rcond=None)
    return coef[0]


def compare_decay(mc: McResult, grid: PdeGrid = PdeGrid(n_q=96, n_p=32, degree=2),
                  window: tuple | None = None, batches: int = 10) -> DecayComparison:
    """``-d/dt log S`` over ``window`` against ``Re(lambda_1) - 1/2``.

    The error bar comes from batch means over groups of RNG blocks.
    """
    cfg = mc.config
    if cfg.operator.kind == "zero":
        raise ValidationError("no decay to compare for a mass-conserving policy")
    op = matching_operator(cfg, grid)
    mu, _, _ = principal_pair(op, 0)
    rate = float(mu.real - 0.5)
    t = mc.times
    if window is None:
        window = (cfg.T / 3, cfg.T)
    sel = (t >= window[0]) & (t <= window[1])
    S = mc.alive[sel] / cfg.n_traj
    if np.any(S <= 0):
        raise ValidationError("survival reached zero inside the fit window")
    w = cfg.n_traj * S / np.maximum(1 - S, 1e-12)  # inverse variance of log S
    slope = -_fit_slope(t[sel], np.log(S), w)
    nb = mc.block_survival.shape[0]
    groups = np.array_split(np.arange(nb), min(batches, nb))
    bs = []
    for g in groups:
        Sg = mc.block_survival[g][:, sel].sum(axis=0) / mc.block_sizes[g].sum()
        if np.all(Sg > 0):
            bs.append(-_fit_slope(t[sel], np.log(Sg), np.ones_like(Sg)))
    bs = np.array(bs)
    sig = float(np.std(bs, ddof=1) / np.sqrt(len(bs))) if len(bs) > 1 else float("inf")
    return DecayComparison(float(slope), sig, rate, complex(mu), tuple(window), abs(slope - rate) <= 3 * sig, bs)
