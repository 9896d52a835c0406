"""Command-line front end.

``kfpbench <command> [--config cfg.json] [--set key=value ...] [flags] --out DIR``

Configuration is resolved as defaults < JSON file < ``--set`` < named flags.
Every run writes ``manifest.json`` to the output directory with the resolved
configuration, versions, RNG description, outputs, summary and exit code.

Exit codes: 0 success, 1 usage, 2 validation error, 3 numerical failure
(including certificates above tolerance).
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import KfpBenchError, NumericalFailure, TruncationError, ValidationError
from .parallel import worker_count

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

_SOURCE = {"center": -3.0, "width": 0.5, "modes": [[0.7071067811865476, 1.0, 0.0], [-0.7071067811865476, 0.5, 0.0]]}
_DISCRETE = {"L": 3.0, "n_q": 24, "n_p": 16, "degree": 1, "A": "zero", "sign": 1,
             "potential": {"kind": "zero"}, "wall": {"policy": "specular"}}

DEFAULTS = {
    "basis-check": {"N": 20, "N_h": 160, "tol": 1e-8, "gram_tol": 1e-9},
    "bvp-solve": {"N": 10, "N_h": 64, "A": "zero", "sign": 1, "L": None, "source": _SOURCE,
                  "tol": 1e-7, "q_points": 41, "p_points": 41, "p_max": 4.0},
    "inhomogeneous": {"N": 10, "N_h": 64, "sign": 1, "j": 1, "L": None, "source": _SOURCE,
                      "boundary": [1.0, 0.5, 0.25], "tol": 1e-7},
    "resolvent-sweep": {**_DISCRETE, "shift": 0.0, "lmax": 50.0, "n_lambda": 21},
    "subelliptic": {**_DISCRETE, "lmax": 200.0, "n_lambda": 17, "refine": 2, "tol": 0.2},
    "spectrum": {**_DISCRETE, "k": 12, "sigma": 0.0, "tol": 1e-6, "pt_tol": 1e-8},
    "semigroup": {**_DISCRETE, "L": 3.0, "n_q": 16, "n_p": 12, "times": [0.1, 1.0], "tol": 1e-4,
                  "profile_times": [0.01, 0.1, 1.0, 10.0]},
    "airy": {"n_p": 64, "n_grid": 21, "xi_max": 50.0, "lmax": 100.0, "deltas": [0.0, 10.0, 100.0, 1000.0],
             "tol": 0.1},
    "mc": {"n_traj": 100000, "dt": 1e-3, "T": 1.0, "seed": 0, "L": 3.0, "policy": "specular",
           "epsilon": None, "potential": {"kind": "zero"}, "wall": {"policy": "specular"},
           "q0": -1.0, "q_spread": 0.3, "p0": 0.5, "hist_times": [1.0], "q_bins": 12, "p_bins": 12,
           "p_max": 3.0, "record_every": 10},
    "compare": {"n_traj": 100000, "dt": 1e-3, "T": None, "seed": 0, "L": 3.0, "policy": "specular",
                "epsilon": None, "potential": {"kind": "zero"}, "wall": {"policy": "specular"},
                "q0": None, "q_spread": None, "p0": 0.5, "q_bins": 12, "p_bins": 12, "p_max": 3.0,
                "record_every": 10, "t_density": 1.0, "window": None, "tv_tol": 2e-2,
                "pde": {"n_q": 48, "n_p": 32, "degree": 1}, "decay_pde": {"n_q": 96, "n_p": 32, "degree": 2}},
}

# flag -> config key
FLAGS = {
    "--modes": ("N", int), "--nh": ("N_h", int), "--A": ("A", str), "--sign": ("sign", int),
    "--L": ("L", float), "--n-q": ("n_q", int), "--n-p": ("n_p", int), "--degree": ("degree", int),
    "--lmax": ("lmax", float), "--tol": ("tol", float), "--k": ("k", int),
    "--policy": ("policy", str), "--traj": ("n_traj", int), "--dt": ("dt", float), "--T": ("T", float),
    "--seed": ("seed", int), "--epsilon": ("epsilon", float),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kfpbench", description="Half-line kinetic Fokker-Planck toolkit")
    parser.add_argument("--version", action="version", version=f"kfpbench {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name in DEFAULTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with configuration keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one key; VALUE is parsed as JSON when possible")
        p.add_argument("--out", default=f"kfpbench-{name}", help="output directory")
        for flag, (key, typ) in FLAGS.items():
            if key in DEFAULTS[name]:
                p.add_argument(flag, dest=key, type=typ, default=None)
    return parser


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(command: str, args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        loaded.pop("command", None)
        cfg.update(loaded)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _parse_value(v)
    for _, (key, _) in FLAGS.items():
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    unknown = set(cfg) - set(DEFAULTS[command])
    if unknown:
        raise ValidationError(f"unknown configuration keys for {command}: {sorted(unknown)}")
    for k, v in cfg.items():
        if (k == "tol" or k.endswith("_tol")) and v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ValidationError(f"tolerance {k} must be positive")
    return cfg


# ------------------------------------------------------------------ parsing helpers

def boundary_operator(spec, j: int = 1):
    """``"zero"``, ``"identity"``, ``"scalar:0.5"``, ``"scalar:1+2j"``, ``"partial:0.3"`` or a dict."""
    from .boundary import BoundaryOperator

    if isinstance(spec, dict):
        return BoundaryOperator.from_dict(spec)
    if not isinstance(spec, str):
        raise ValidationError(f"cannot interpret boundary operator {spec!r}")
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "scalar":
        try:
            return BoundaryOperator.scalar(complex(arg.replace(" ", "")), j)
        except ValueError as exc:
            raise ValidationError(f"bad scalar value {arg!r}") from exc
    if name == "partial":
        try:
            return BoundaryOperator.partial(float(arg), j=j)
        except ValueError as exc:
            raise ValidationError(f"bad epsilon {arg!r}") from exc
    return BoundaryOperator(name, j)


def _mode_source(basis, spec):
    from .halfline import ModeSource

    if not isinstance(spec, dict) or "modes" not in spec:
        raise ValidationError("source needs 'modes', a list of [nu, re, im]")
    c, w = float(spec.get("center", -3.0)), float(spec.get("width", 0.5))
    if w <= 0:
        raise ValidationError("source width must be positive")
    half = 8.0 * w
    lo, hi = c - half, min(c + half, 0.0)
    profiles = {}
    for row in spec["modes"]:
        nu, re, im = float(row[0]), float(row[1]), float(row[2]) if len(row) > 2 else 0.0
        amp = complex(re, im)
        profiles[nu] = (lambda a: (lambda q: a * np.exp(-((q - c) / w) ** 2)))(amp)
    return ModeSource.from_modes(basis, profiles, (lo, hi))


def _discrete_op(cfg):
    from .discrete import Potential, Wall, assemble

    A = boundary_operator(cfg["A"])
    return assemble(float(cfg["L"]), int(cfg["n_q"]), int(cfg["n_p"]), A, int(cfg["sign"]),
                    potential=Potential.from_dict(cfg["potential"]), wall_policy=Wall.from_dict(cfg["wall"]),
                    degree=int(cfg["degree"]))


def _lambda_grid(lmax, n):
    pos = np.concatenate([[0.0], np.geomspace(1.0, lmax, max(n - 1, 1))]) if lmax > 0 else np.array([0.0])
    return np.concatenate([-pos[1:][::-1], pos])


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in r) + "\n")


# ------------------------------------------------------------------ commands
# each returns (outputs, summary, ok)

def cmd_basis_check(cfg, out: Path):
    from .nu_basis import NuBasis, gram_matrices, verify_eigen

    basis = NuBasis(int(cfg["N"]), int(cfg["N_h"]))
    G = basis.h1_gram()
    gram_defect = float(np.abs(G - np.eye(G.shape[0])).max())
    gm = gram_matrices(basis)
    pairing = np.abs(gm.G_sgn - np.diag(basis.values))
    res = [verify_eigen(nu, basis.N_h) for nu in basis.values]
    rows = [(float(nu), float(r), float(pairing[k].max()), float(basis.tails[k]))
            for k, (nu, r) in enumerate(zip(basis.values, res))]
    _write_csv(out / "basis_check.csv", ["nu", "eigen_residual", "pairing_defect", "tail"], rows)
    summary = {"gram_defect": gram_defect, "max_eigen_residual": float(max(res)),
               "pairing_defect": float(pairing.max()), "min_M_eigenvalue": gm.min_M_eig}
    ok = gram_defect <= cfg["gram_tol"] and max(res) <= cfg["tol"] and pairing.max() <= cfg["tol"]
    return ["basis_check.csv"], summary, ok


def cmd_bvp_solve(cfg, out: Path):
    from .halfline import ipp_certificate, mode_residual, solve_half_line
    from .nu_basis import NuBasis

    basis = NuBasis(int(cfg["N"]), int(cfg["N_h"]))
    A = boundary_operator(cfg["A"])
    src = _mode_source(basis, cfg["source"])
    fld = solve_half_line(src, A, int(cfg["sign"]), L=cfg["L"])
    ipp = ipp_certificate(fld, A)
    mres = mode_residual(fld)
    fld.certificates.update({"ipp_residual": ipp, "mode_residual": mres})
    q = np.linspace(-fld.L, 0.0, int(cfg["q_points"]))
    p = np.linspace(-cfg["p_max"], cfg["p_max"], int(cfg["p_points"]))
    fld.to_csv(out / "field.csv", q, p)
    fld.to_json(out / "modes.json")
    summary = {k: float(v) for k, v in fld.certificates.items()}
    summary["L"] = fld.L
    return ["field.csv", "modes.json"], summary, ipp <= cfg["tol"] and mres <= cfg["tol"]


def cmd_inhomogeneous(cfg, out: Path):
    from .halfline import solve_inhomogeneous
    from .nu_basis import NuBasis, NuExpansion, from_pairs

    basis = NuBasis(int(cfg["N"]), int(cfg["N_h"]))
    src = _mode_source(basis, cfg["source"])
    a = np.zeros(basis.N, complex)
    data = np.asarray(cfg["boundary"], complex)[: basis.N]
    a[: data.size] = data
    j = int(cfg["j"])
    fb = NuExpansion(basis.index_set, from_pairs(a, np.zeros_like(a), j))
    res = solve_inhomogeneous(src, fb, int(cfg["sign"]), j=j, L=cfg["L"])
    res.field.to_json(out / "modes.json")
    summary = {"lhs": res.lhs, "rhs": res.rhs, "identity_residual": res.residual,
               "data_defect": res.data_defect, "truncation_defect": res.truncation_defect}
    return ["modes.json"], summary, res.residual <= cfg["tol"]


def cmd_resolvent_sweep(cfg, out: Path):
    from .discrete import resolvent_norm

    op = _discrete_op(cfg)
    lams = _lambda_grid(float(cfg["lmax"]), int(cfg["n_lambda"]))
    from .parallel import ordered_map

    norms = ordered_map(lambda l: resolvent_norm(op, cfg["shift"] + 1j * l), lams)
    _write_csv(out / "resolvent.csv", ["lambda", "resolvent_norm"],
               [(float(l), float(n)) for l, n in zip(lams, norms)])
    finite = bool(np.all(np.isfinite(norms)))
    return ["resolvent.csv"], {"max_norm": float(max(norms)), "op": op.describe()}, finite


def cmd_subelliptic(cfg, out: Path):
    from .discrete import subelliptic_sweep

    lams = _lambda_grid(float(cfg["lmax"]), int(cfg["n_lambda"]))
    op = _discrete_op(cfg)
    coarse = subelliptic_sweep(op, lams)
    fine_cfg = dict(cfg, n_q=int(cfg["n_q"]) * int(cfg["refine"]), n_p=int(cfg["n_p"]) * int(cfg["refine"]))
    fine = subelliptic_sweep(_discrete_op(fine_cfg), lams)
    coarse.to_csv(out / "sweep.csv")
    fine.to_csv(out / "sweep_refined.csv")
    change = coarse.stabilization(fine)
    summary = {"sups": coarse.sups, "sups_refined": fine.sups, "relative_change": change}
    ok = all(np.isfinite(v) for v in fine.sups.values()) and max(change.values()) <= cfg["tol"]
    return ["sweep.csv", "sweep_refined.csv"], summary, ok


def cmd_spectrum(cfg, out: Path):
    from .discrete import spectrum, structure_defects

    op = _discrete_op(cfg)
    sp_ = spectrum(op, int(cfg["k"]), sigma=float(cfg["sigma"]))
    sp_.to_csv(out / "spectrum.csv")
    summary = {"min_real": sp_.min_real, "pt_defect": sp_.pt_defect, "region_constant": sp_.region_constant,
               **structure_defects(op)}
    ok = sp_.min_real >= 0.5 - cfg["tol"] and (sp_.pt_defect is None or sp_.pt_defect <= cfg["pt_tol"])
    return ["spectrum.csv"], summary, ok


def cmd_semigroup(cfg, out: Path):
    from .discrete import ContourSemigroup, crank_nicolson, smoothing_profile

    op = _discrete_op(cfg)
    f = op.project(lambda q, p: np.exp(-4 * (q + 0.5 * op.L) ** 2 - 0.5 * (p - 0.5) ** 2))
    times = [float(t) for t in cfg["times"]]
    cs = ContourSemigroup.build(op, t_max=max(times))
    rows, worst = [], 0.0
    for t in times:
        a = cs.apply(f, t)
        b = crank_nicolson(op, f, t)
        err = float(np.linalg.norm(a - b) / np.linalg.norm(b))
        worst = max(worst, err)
        rows.append((t, err, float(np.linalg.norm(a))))
    _write_csv(out / "semigroup.csv", ["t", "contour_vs_stepping", "norm"], rows)
    pt = [float(t) for t in cfg["profile_times"]]
    prof = smoothing_profile(op, pt)
    _write_csv(out / "smoothing.csv", ["t", "norm"], [(t, float(v)) for t, v in zip(pt, prof)])
    summary = {"max_relative_difference": worst, "C_K": cs.C_K, "Y": cs.Y, "profile_max": float(np.max(prof))}
    return ["semigroup.csv", "smoothing.csv"], summary, worst <= cfg["tol"]


def cmd_airy(cfg, out: Path):
    from .airy import airy_resolvent_norm, delta_source_norm, mode_sweep
    from .oscillator import HermiteVector, apply_p

    n = int(cfg["n_grid"])
    xis = np.concatenate([[0.0], np.geomspace(0.05, cfg["xi_max"], n - 1)])
    lams = np.concatenate([[0.0], np.geomspace(0.05, cfg["lmax"], n - 1)])
    n_p = int(cfg["n_p"])
    coarse = mode_sweep(xis, lams, n_p)
    fine = mode_sweep(xis, lams, 2 * n_p)
    coarse.to_csv(out / "modes.csv")
    fine.to_csv(out / "modes_refined.csv")
    change = abs(fine.sup_resolved - coarse.sup_resolved) / fine.sup_resolved
    gamma = apply_p(HermiteVector.basis(0, 4))
    deltas = [delta_source_norm(gamma, float(l)) for l in cfg["deltas"]]
    _write_csv(out / "delta_source.csv", ["lambda", "u_norm", "gamma_norm", "ratio", "tail_uncertainty"],
               [(d.lam, d.u_norm, d.gamma_norm, d.ratio, d.tail_uncertainty) for d in deltas])
    ai = airy_resolvent_norm()
    summary = {"sup": coarse.sup_resolved, "sup_refined": fine.sup_resolved, "relative_change": change,
               "unresolved": coarse.unresolved, "unresolved_refined": fine.unresolved,
               "certified_sup": coarse.certified_sup, "delta_ratios": [d.ratio for d in deltas],
               "airy_norm": ai.norm}
    ok = change <= cfg["tol"] and fine.unresolved == 0 and all(np.isfinite(d.ratio) for d in deltas)
    return ["modes.csv", "modes_refined.csv", "delta_source.csv"], summary, ok


def _mc_config(cfg, **over):
    from .langevin import McConfig

    keys = set(McConfig.__dataclass_fields__)
    d = {k: v for k, v in cfg.items() if k in keys and v is not None}
    d.update(over)
    return McConfig.from_dict(d)


def cmd_mc(cfg, out: Path):
    from .langevin import simulate

    mc = simulate(_mc_config(cfg))
    files = [Path(f).name for f in mc.to_csv(str(out / "mc"))]
    summary = {"final_survival": float(mc.survival[-1]), "crossings": mc.crossings,
               "reflections": mc.reflections, "blocks": int(mc.block_sizes.size)}
    return files, summary, True


def cmd_compare(cfg, out: Path):
    from .langevin import PdeGrid, compare_decay, compare_density, policy_operator, simulate

    absorbing = policy_operator(cfg["policy"], cfg["epsilon"]).kind != "zero"
    T = cfg["T"] if cfg["T"] is not None else (12.0 if absorbing else float(cfg["t_density"]))
    q0 = cfg["q0"] if cfg["q0"] is not None else (-1.5 if absorbing else -1.0)
    qs = cfg["q_spread"] if cfg["q_spread"] is not None else (0.5 if absorbing else 0.3)
    t_d = float(cfg["t_density"])
    mc_cfg = _mc_config(cfg, T=T, q0=q0, q_spread=qs, hist_times=(t_d,))
    mc = simulate(mc_cfg)
    files = [Path(f).name for f in mc.to_csv(str(out / "mc"))]
    dens = compare_density(mc, t_d, PdeGrid(**cfg["pde"]), tol=cfg["tv_tol"])
    summary = {"tv": dens.tv, "sigma_mc": dens.sigma_mc, "tv_threshold": dens.threshold, "density_ok": dens.passed,
               "mc_config": mc_cfg.to_dict()}
    ok = dens.passed
    rows = [("tv", dens.tv, dens.threshold, int(dens.passed))]
    if absorbing:
        win = tuple(cfg["window"]) if cfg["window"] else (T / 2, T)
        dec = compare_decay(mc, PdeGrid(**cfg["decay_pde"]), window=win)
        summary.update({"slope": dec.slope, "slope_sigma": dec.slope_sigma, "spectral_rate": dec.spectral_rate,
                        "decay_ok": dec.passed})
        rows.append(("slope", dec.slope, dec.spectral_rate, int(dec.passed)))
        ok = ok and dec.passed
    _write_csv(out / "compare.csv", ["quantity", "value", "reference", "passed"], rows)
    return files + ["compare.csv"], summary, ok


COMMANDS = {
    "basis-check": cmd_basis_check, "bvp-solve": cmd_bvp_solve, "inhomogeneous": cmd_inhomogeneous,
    "resolvent-sweep": cmd_resolvent_sweep, "subelliptic": cmd_subelliptic, "spectrum": cmd_spectrum,
    "semigroup": cmd_semigroup, "airy": cmd_airy, "mc": cmd_mc, "compare": cmd_compare,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"kfpbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    out = Path(args.out)
    manifest = {"command": args.command, "argv": argv, "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                "threads": worker_count(), "config": None, "outputs": [], "summary": {}}
    start = time.perf_counter()
    try:
        cfg = resolve_config(args.command, args)
        manifest["config"] = cfg
        if args.command in ("mc", "compare"):
            from .langevin import RNG_ALGORITHM

            manifest["rng"] = {"algorithm": RNG_ALGORITHM, "seed": cfg["seed"]}
        out.mkdir(parents=True, exist_ok=True)
        outputs, summary, ok = COMMANDS[args.command](cfg, out)
        manifest.update(outputs=outputs, summary=summary)
        code = EXIT_OK if ok else EXIT_NUMERICAL
        if not ok:
            manifest["error"] = "certificates exceed tolerance"
    except UsageError as exc:
        print(f"kfpbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_VALIDATION
    except (NumericalFailure, TruncationError, KfpBenchError, np.linalg.LinAlgError) as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_NUMERICAL
    manifest["exit_code"] = code
    manifest["runtime_seconds"] = time.perf_counter() - start
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.json", "w") as fh:
            json.dump(_jsonable(manifest), fh, indent=2)
    except OSError as exc:
        print(f"kfpbench: cannot write manifest: {exc}", file=sys.stderr)
    if "error" in manifest:
        print(f"kfpbench: {manifest['error']}", file=sys.stderr)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
