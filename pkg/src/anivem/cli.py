"""Command-line front end: mesh generation, shape checks, solves, studies.

Configuration comes from a TOML or JSON file (``--config``) with any flag
overriding the file; outputs are deterministic, so identical configurations
produce byte-identical files.  Exit codes: 0 success, 2 when the ``check``
command finds a failed admissibility assumption, 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import geomcheck, meshgen, solver
from .mesh import export_vtk, load_json, save_json

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib


MESH_KINDS = ("cube", "tet", "cutplane", "sphere-interface", "notch")
PROBLEM_IDS = ("smooth", "sphere-interface", "patch-linear", "patch-ife")


@dataclass
class RunConfig:
    command: str = ""
    mesh: str = "cube"
    mesh_file: Optional[str] = None
    n: int = 4
    levels: int = 3
    plane: tuple = (1.0, 1.0, 1.0, 1.5)
    r0: Optional[float] = None
    depth: float = 0.4
    width: float = 0.4
    problem: str = "smooth"
    beta_minus: float = 1.0
    beta_plus: float = 1.0
    eps: float = 1.0
    theta_m: float = math.pi / 6.0
    rho: float = 0.5
    stab: str = "face"
    cg_tol: float = 1e-10
    threads: int = 1
    out: Optional[str] = None

    def validate(self):
        if self.mesh not in MESH_KINDS and self.mesh_file is None:
            raise ValueError(f"unknown mesh kind '{self.mesh}'")
        if self.problem not in PROBLEM_IDS:
            raise ValueError(f"unknown problem id '{self.problem}'")
        if self.beta_minus <= 0 or self.beta_plus <= 0:
            raise ValueError("beta values must be positive")


def _load_config_file(path) -> dict:
    if str(path).endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _config_from(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        data = _load_config_file(args.config)
        names = {f.name for f in fields(RunConfig)}
        for key, val in data.items():
            k = key.replace("-", "_")
            if k not in names:
                raise ValueError(f"unknown config key '{key}'")
            if k == "plane":
                val = tuple(float(x) for x in val)
            setattr(cfg, k, val)
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    cfg.command = args.cmd
    env_threads = os.environ.get("ANIVEM_THREADS")
    if getattr(args, "threads", None) is None and env_threads:
        cfg.threads = int(env_threads)
    cfg.validate()
    return cfg


def _parse_plane(text: str) -> tuple:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("plane needs 'nx,ny,nz,d'")
    return tuple(parts)


def _sphere_radius(cfg: RunConfig, n: int) -> float:
    # default offset keeps the interface away from grid vertices
    return cfg.r0 if cfg.r0 is not None else 0.5 + (1.0 / n) / 7.0


def build_mesh(cfg: RunConfig, n: int):
    if cfg.mesh_file:
        return load_json(cfg.mesh_file)
    if cfg.mesh == "cube":
        return meshgen.cube_mesh(n)
    if cfg.mesh == "tet":
        return meshgen.tet_mesh(n)
    if cfg.mesh == "cutplane":
        nx, ny, nz, d = cfg.plane
        return meshgen.cut_by_plane(
            meshgen.cube_mesh(n), meshgen.CutPlane((nx, ny, nz), d)
        )
    if cfg.mesh == "sphere-interface":
        ls = meshgen.sphere_levelset((0.5, 0.5, 0.5), _sphere_radius(cfg, n))
        return meshgen.cut_by_levelset(meshgen.tet_mesh(n), ls)
    if cfg.mesh == "notch":
        return meshgen.notch_mesh(n, cfg.depth, cfg.width)
    raise ValueError(f"unknown mesh kind '{cfg.mesh}'")


def build_problem(cfg: RunConfig, n: int) -> solver.Problem:
    if cfg.problem == "smooth":
        return solver.smooth_problem()
    if cfg.problem == "patch-linear":
        return solver.patch_linear_problem(beta=cfg.beta_minus)
    if cfg.problem == "patch-ife":
        nx, ny, nz, d = cfg.plane
        return solver.patch_ife_problem(
            normal=(nx, ny, nz), offset=d,
            beta_minus=cfg.beta_minus, beta_plus=cfg.beta_plus,
        )
    if cfg.problem == "sphere-interface":
        return solver.sphere_interface_problem(
            _sphere_radius(cfg, n), cfg.beta_minus, cfg.beta_plus
        )
    raise ValueError(f"unknown problem id '{cfg.problem}'")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    mesh = build_mesh(cfg, cfg.n)
    report = mesh.validate()
    if not report.ok:
        print(str(report), file=sys.stderr)
        return 1
    out = cfg.out or "mesh.json"
    save_json(mesh, out)
    print(f"wrote {out}: {mesh.n_cells} cells, {mesh.n_dofs} DoFs, h={mesh.h!r}")
    return 0


def cmd_check(cfg: RunConfig) -> int:
    mesh = load_json(cfg.mesh_file) if cfg.mesh_file else build_mesh(cfg, cfg.n)
    reports = [
        geomcheck.shape_report(mesh, cid, eps=cfg.eps, theta_min=cfg.theta_m, rho=cfg.rho)
        for cid in range(mesh.n_cells)
    ]
    header = (
        f"{'cell':>6} {'theta_max':>10} {'N_T':>4} {'path':>5} {'nbhd':>5} "
        f"{'kappa':>8} {'poincare':>9} {'ball':>6} {'det':>6}"
    )
    print(header)
    worst = None
    for r in reports:
        print(
            f"{r.cell:>6} {math.degrees(r.theta_max):>10.2f} {r.n_tris:>4} "
            f"{str(r.path_ok):>5} {str(r.neighbor_ok):>5} {r.kappa:>8.3f} "
            f"{(r.poincare if r.poincare is not None else float('nan')):>9.3f} "
            f"{r.inscribed_ratio:>6.3f} {r.edge_det:>6.3f}"
        )
        if worst is None or r.theta_max > worst.theta_max:
            worst = r
    ok = all(r.path_ok for r in reports)
    print(
        f"worst cell {worst.cell}: theta_max={math.degrees(worst.theta_max):.2f} deg, "
        f"path condition {'passes' if ok else 'FAILS'} at eps={cfg.eps}"
    )
    if cfg.out:
        with open(cfg.out, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, sort_keys=True)
        print(f"wrote {cfg.out}")
    return 0 if ok else 2


def cmd_solve(cfg: RunConfig) -> int:
    mesh = build_mesh(cfg, cfg.n)
    problem = build_problem(cfg, cfg.n)
    u_h, system, info = solver.solve_problem(
        mesh, problem, stab=cfg.stab, cg_tol=cfg.cg_tol
    )
    summary = {
        "mesh": cfg.mesh,
        "problem": cfg.problem,
        "n": cfg.n,
        "ndof": mesh.n_dofs,
        "h": mesh.h,
        "cg_iterations": info.iterations,
        "cg_relres": info.relres,
    }
    if problem.has_exact and problem.grad_minus is not None:
        e = solver.energy_error(mesh, problem, u_h, system.groups)
        l = solver.l2_error(mesh, problem, u_h, system.groups)
        summary["energy_err"] = e
        summary["l2_err"] = l
    base = cfg.out or "solution"
    export_vtk(mesh, base + ".vtk", {"u": u_h})
    with open(base + ".json", "w") as fh:
        json.dump(summary, fh, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    ns = [cfg.n * 2**k for k in range(cfg.levels)]

    def make_level(n):
        return build_mesh(cfg, n), build_problem(cfg, n)

    report = solver.convergence_study(
        make_level, ns, stab=cfg.stab, cg_tol=cfg.cg_tol
    )
    csv = report.to_csv()
    out = cfg.out or "table.csv"
    with open(out, "w") as fh:
        fh.write(csv)
    print(csv, end="")
    print(f"wrote {out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="anivem",
        description="virtual element solver on anisotropic polyhedral meshes",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON configuration file")
        p.add_argument("--mesh", dest="mesh", choices=MESH_KINDS, default=None)
        p.add_argument("--mesh-file", dest="mesh_file", default=None,
                       help="read the mesh from a JSON file instead of generating")
        p.add_argument("--n", type=int, default=None, help="cells per axis")
        p.add_argument("--plane", type=_parse_plane, default=None,
                       help="cut plane 'nx,ny,nz,d'")
        p.add_argument("--r0", type=float, default=None, help="interface sphere radius")
        p.add_argument("--depth", type=float, default=None, help="notch depth fraction")
        p.add_argument("--width", type=float, default=None, help="notch width fraction")
        p.add_argument("--beta-minus", dest="beta_minus", type=float, default=None)
        p.add_argument("--beta-plus", dest="beta_plus", type=float, default=None)
        p.add_argument("--eps", type=float, default=None, help="path-condition eps")
        p.add_argument("--theta-m", dest="theta_m", type=float, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--stab", choices=("face", "edge"), default=None)
        p.add_argument("--cg-tol", dest="cg_tol", type=float, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (serial execution always satisfies it)")
        p.add_argument("--out", default=None)

    p = sub.add_parser("gen", help="generate a mesh and write JSON")
    common(p)
    p = sub.add_parser("check", help="run the shape checks per cell")
    common(p)
    p = sub.add_parser("solve", help="solve one problem on one mesh")
    common(p)
    p.add_argument("--problem", choices=PROBLEM_IDS, default=None)
    p = sub.add_parser("converge", help="run a refinement study")
    common(p)
    p.add_argument("--problem", choices=PROBLEM_IDS, default=None)
    p.add_argument("--levels", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = _config_from(args)
        if args.cmd == "gen":
            return cmd_gen(cfg)
        if args.cmd == "check":
            return cmd_check(cfg)
        if args.cmd == "solve":
            return cmd_solve(cfg)
        if args.cmd == "converge":
            return cmd_converge(cfg)
        raise ValueError(f"unknown command {args.cmd}")
    except Exception as exc:
        print(f"anivem: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
