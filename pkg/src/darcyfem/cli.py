"""Command-line driver.

Five subcommands cover the study workflows: ``solve`` (one mesh, one alpha),
``sweep`` (iteration counts over an alpha list), ``uniform-study`` (error
decay on structured meshes), ``adapt`` (solve-estimate-mark-refine loop) and
``diagnostics`` (the alpha bounds computable from the data).

Every run writes ``manifest.json`` echoing the merged configuration plus
library versions, so a single-threaded rerun from the manifest reproduces
the CSV outputs byte for byte.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure (details land in ``error.txt``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
import scipy

from . import __version__
from . import problems
from .adaptivity import AdaptConfig, adaptive_loop, uniform_study
from .assembly import CompatibilityError, LinearSolverError
from .indicators import IndicatorContext
from .mesh import MeshConformityError, MeshFormatError, load_mesh
from .nonlinear_solver import (SolverConfig, alpha_diagnostics, alpha_sweep,
                               solve)
from .render import render_mesh_svg
from .spaces import dump_p0, dump_p1

BUILTIN_PROBLEMS = ("gaussian-vortex", "reentrant-corner", "trivial-zero")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_float_list(text, what):
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list: {text!r}") from exc
    if not vals:
        raise ConfigError(f"empty {what} list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="darcyfem",
        description="Adaptive finite elements for Darcy-Forchheimer flow.")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with defaults; flags win")
    common.add_argument("--problem", help="builtin name or JSON problem file")
    common.add_argument("--beta", type=float)
    common.add_argument("--N", type=int, dest="n",
                        help="structured subdivisions for the initial mesh")
    common.add_argument("--mesh", help="mesh file (alternative to --N)")
    common.add_argument("--alpha", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--gamma-tilde", type=float, dest="gamma_tilde")
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--guess", choices=("zero", "darcy"))
    common.add_argument("--stopping",
                        choices=("fixed-tol", "indicator-balance"))
    common.add_argument("--jacobi", action="store_true", default=None)
    common.add_argument("--out", help="output directory "
                        "(default $DARCYFEM_OUT or ./darcyfem-out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)

    sub.add_parser("solve", parents=[common],
                   help="single solve; fields, trace and indicators")
    sp = sub.add_parser("sweep", parents=[common],
                        help="iteration counts over an alpha list")
    sp.add_argument("--alphas", help="comma-separated alpha values")
    up = sub.add_parser("uniform-study", parents=[common],
                        help="error decay on structured meshes")
    up.add_argument("--Ns", dest="ns", help="comma-separated subdivisions")
    ap = sub.add_parser("adapt", parents=[common],
                        help="adaptive refinement loop")
    ap.add_argument("--levels", type=int)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--marker", choices=("doerfler", "max"))
    sub.add_parser("diagnostics", parents=[common],
                   help="alpha bounds computable from the problem data")
    return top


# -- configuration merging --------------------------------------------------

_DEFAULTS = {
    "problem": "gaussian-vortex",
    "beta": None,
    "n": 10,
    "mesh": None,
    "alpha": 1.0,
    "tol": 1e-5,
    "gamma_tilde": 1e-3,
    "max_iter": 2000,
    "guess": "zero",
    "stopping": "fixed-tol",
    "jacobi": False,
    "out": None,
    "seed": 0,
    "threads": 1,
    "alphas": None,
    "ns": None,
    "levels": 7,
    "theta": 0.5,
    "marker": "doerfler",
}


def merge_config(args: argparse.Namespace) -> dict:
    """File defaults under flag overrides; flags always win."""
    cfg = dict(_DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in file_cfg.items():
            k = key.replace("-", "_").lower()
            if k == "N":
                k = "n"
            if k not in cfg and k != "problem_spec":
                raise ConfigError(f"unknown config key {key!r}")
            cfg[k] = val
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if getattr(args, "n", None) is not None and \
            getattr(args, "mesh", None) is not None:
        raise ConfigError("give exactly one mesh source: --N or --mesh")
    cfg["command"] = args.command
    return cfg


def _resolve_problem(cfg):
    name = cfg["problem"]
    if isinstance(name, dict):
        return problems.problem_from_config(name)
    if name in BUILTIN_PROBLEMS:
        beta = cfg["beta"]
        if name == "gaussian-vortex":
            return problems.gaussian_vortex(beta=1.0 if beta is None else beta)
        if name == "reentrant-corner":
            return problems.reentrant_corner(
                **({} if beta is None else {"beta": beta}))
        return problems.trivial_zero()
    if os.path.exists(str(name)):
        try:
            with open(name) as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read problem file {name}: {exc}")
        if cfg["beta"] is not None:
            spec.setdefault("beta", cfg["beta"])
        return problems.problem_from_config(spec)
    raise ConfigError(f"unknown problem {name!r} "
                      f"(builtins: {', '.join(BUILTIN_PROBLEMS)})")


def _resolve_mesh(cfg, problem):
    if cfg["mesh"]:
        try:
            with open(cfg["mesh"]) as fh:
                return load_mesh(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read mesh {cfg['mesh']}: {exc}")
    n = int(cfg["n"])
    if n < 1:
        raise ConfigError("--N must be positive")
    return problems.initial_mesh(problem, n)


def _solver_config(cfg, stopping=None, guess=None) -> SolverConfig:
    return SolverConfig(
        alpha=float(cfg["alpha"]),
        tol=float(cfg["tol"]),
        gamma_tilde=float(cfg["gamma_tilde"]),
        max_iter=int(cfg["max_iter"]),
        initial_guess=guess or cfg["guess"],
        stopping=(stopping or cfg["stopping"]).replace("-", "_"),
        jacobi=bool(cfg["jacobi"]),
    )


def _out_dir(cfg):
    out = cfg["out"] or os.environ.get("DARCYFEM_OUT") or "darcyfem-out"
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise ConfigError(f"output directory {out!r} not writable: {exc}")
    return out


def _manifest(out, cfg, timings, outputs):
    clean = {k: v for k, v in cfg.items() if v is not None}
    doc = {
        "config": clean,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "darcyfem": __version__,
        },
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "outputs": sorted(outputs),
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands -------------------------------------------------------------

def _cmd_solve(cfg, out):
    problem = _resolve_problem(cfg)
    mesh = _resolve_mesh(cfg, problem)
    t0 = time.perf_counter()
    result = solve(mesh, problem, _solver_config(cfg))
    t_solve = time.perf_counter() - t0

    files = {}
    files["trace.csv"] = (
        ("iter", "err_L", "eta_L", "eta_D", "nbr_cg_iters"),
        [(r.iteration, r.err_l, r.eta_l, r.eta_d, r.cg_iters)
         for r in result.trace])
    ind = result.indicators
    files["indicators.csv"] = (
        ("element", "eta_L", "eta_D1", "eta_D2", "osc_f", "osc_b", "osc_g"),
        [(k, ind.eta_l[k], ind.eta_d1[k], ind.eta_d2[k],
          ind.osc_f[k], ind.osc_b[k], ind.osc_g[k])
         for k in range(mesh.n_triangles)])
    outputs = []
    for name, (header, rows) in files.items():
        _write_csv(os.path.join(out, name), header, rows)
        outputs.append(name)
    with open(os.path.join(out, "velocity.p0field"), "w") as fh:
        fh.write(dump_p0(result.u))
    with open(os.path.join(out, "pressure.p1field"), "w") as fh:
        fh.write(dump_p1(result.p))
    outputs += ["velocity.p0field", "pressure.p1field"]

    speed = result.u.magnitudes()
    p_mean = result.p.values[mesh.tris].mean(axis=1)
    for name, svg in (
            ("mesh.svg", render_mesh_svg(mesh, title="mesh")),
            ("velocity.svg", render_mesh_svg(mesh, speed, title="|u|")),
            ("pressure.svg", render_mesh_svg(mesh, p_mean, title="p"))):
        with open(os.path.join(out, name), "w") as fh:
            fh.write(svg)
        outputs.append(name)
    _manifest(out, cfg, {"solve": t_solve}, outputs + ["manifest.json"])
    print(f"converged={result.converged} iterations={result.iterations} "
          f"err_L={result.err_l:.3e}")
    return 0


def _cmd_sweep(cfg, out):
    if not cfg["alphas"]:
        raise ConfigError("sweep needs --alphas")
    alphas = cfg["alphas"]
    if isinstance(alphas, str):
        alphas = _parse_float_list(alphas, "alpha")
    problem = _resolve_problem(cfg)
    mesh = _resolve_mesh(cfg, problem)
    t0 = time.perf_counter()
    rows = alpha_sweep(mesh, problem, alphas, _solver_config(cfg),
                       threads=int(cfg["threads"]))
    t_sweep = time.perf_counter() - t0
    _write_csv(os.path.join(out, "sweep.csv"),
               ("alpha", "nbr", "converged", "err", "log10_err"),
               [(r.alpha, r.iterations, r.converged, r.err, r.log10_err)
                for r in rows])
    _manifest(out, cfg, {"sweep": t_sweep}, ["sweep.csv", "manifest.json"])
    best = min((r for r in rows if r.converged),
               key=lambda r: r.iterations, default=None)
    if best is not None:
        print(f"best alpha={best.alpha:g} nbr={best.iterations}")
    return 0


def _study_rows(states):
    return [(s.record.level, s.record.vertices, s.record.triangles,
             s.record.eta_l, s.record.eta_d, s.record.err,
             s.record.ei, s.record.e_tot) for s in states]


_STUDY_HEADER = ("level", "vertices", "triangles", "eta_L", "eta_D",
                 "err", "EI", "E_tot")


def _cmd_uniform(cfg, out):
    if not cfg["ns"]:
        raise ConfigError("uniform-study needs --Ns")
    ns = cfg["ns"]
    if isinstance(ns, str):
        ns = [int(v) for v in _parse_float_list(ns, "N")]
    problem = _resolve_problem(cfg)
    t0 = time.perf_counter()
    states = uniform_study(problem, ns, _solver_config(cfg))
    t_run = time.perf_counter() - t0
    _write_csv(os.path.join(out, "study.csv"), _STUDY_HEADER,
               _study_rows(states))
    _manifest(out, cfg, {"study": t_run}, ["study.csv", "manifest.json"])
    return 0


def _cmd_adapt(cfg, out):
    problem = _resolve_problem(cfg)
    mesh = _resolve_mesh(cfg, problem)
    solver = _solver_config(cfg, stopping="indicator-balance", guess="darcy")
    adapt = AdaptConfig(theta=float(cfg["theta"]), marker=cfg["marker"])
    t0 = time.perf_counter()
    states = adaptive_loop(problem, levels=int(cfg["levels"]),
                           solver=solver, adapt=adapt, mesh=mesh)
    t_run = time.perf_counter() - t0
    outputs = ["study.csv", "manifest.json"]
    _write_csv(os.path.join(out, "study.csv"), _STUDY_HEADER,
               _study_rows(states))
    for s in states:
        name = f"mesh_level{s.record.level:02d}.svg"
        with open(os.path.join(out, name), "w") as fh:
            fh.write(render_mesh_svg(s.mesh, title=f"level {s.record.level}"))
        outputs.append(name)
    _manifest(out, cfg, {"adapt": t_run}, outputs)
    last = states[-1].record
    print(f"levels={len(states)} final_vertices={last.vertices} "
          f"final_eta_D={last.eta_d:.3e}")
    return 0


def _cmd_diagnostics(cfg, out):
    problem = _resolve_problem(cfg)
    mesh = _resolve_mesh(cfg, problem)
    t0 = time.perf_counter()
    diag = alpha_diagnostics(mesh, problem)
    t_run = time.perf_counter() - t0
    path = os.path.join(out, "diagnostics.json")
    with open(path, "w") as fh:
        json.dump(diag.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(out, cfg, {"diagnostics": t_run},
              ["diagnostics.json", "manifest.json"])
    print(f"alpha_star={diag.alpha_star:.6g} "
          f"alpha_cubic={diag.alpha_cubic:.6g}")
    return 0


_DISPATCH = {
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "uniform-study": _cmd_uniform,
    "adapt": _cmd_adapt,
    "diagnostics": _cmd_diagnostics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_config(args)
        out = _out_dir(cfg)
    except (ConfigError, problems.ProblemConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        try:
            return _DISPATCH[args.command](cfg, out)
        except (ConfigError, problems.ProblemConfigError,
                MeshFormatError, MeshConformityError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except (LinearSolverError, CompatibilityError,
                FloatingPointError) as exc:
            path = os.path.join(out, "error.txt")
            with open(path, "w") as fh:
                fh.write(f"{type(exc).__name__}: {exc}\n")
                hist = getattr(exc, "residual_history", None)
                if hist is not None:
                    fh.write("residual history:\n")
                    for r in hist:
                        fh.write(f"  {r:.17g}\n")
            print(f"numerical failure: {exc} (details in {path})",
                  file=sys.stderr)
            return 3
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
