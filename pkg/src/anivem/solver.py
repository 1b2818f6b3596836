"""Global assembly, boundary conditions, CG solve, error norms, studies.

The discrete space carries one value per skeleton vertex.  Assembly scatters
the per-cell stiffness blocks and projected load vectors; Dirichlet data is
interpolated at boundary vertices and eliminated symmetrically; the reduced
system is solved by Jacobi-preconditioned conjugate gradients.

Errors are measured against the computable projection of the discrete
solution (the quantity the convergence theory controls): the reported
"energy" error is the broken weighted gradient error
``(sum_K int_K beta |grad u - grad Pi u_h|^2)^(1/2)``; virtual functions are
never evaluated inside cells.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import PolyMesh
from .meshgen import LevelSet, plane_levelset, sphere_levelset
from .quadrature import tet_rule
from . import vemcore

__all__ = [
    "Problem",
    "AssemblyError",
    "SolverError",
    "AssembledSystem",
    "ReducedSystem",
    "CGInfo",
    "ConvergenceReport",
    "assemble",
    "apply_dirichlet",
    "solve_cg",
    "energy_error",
    "l2_error",
    "convergence_study",
    "smooth_problem",
    "patch_linear_problem",
    "patch_ife_problem",
    "sphere_interface_problem",
    "jump_residuals",
]


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class Problem:
    """Diffusion problem -div(beta grad u) = f with Dirichlet data.

    Callables act on (n, 3) point arrays.  For interface problems the
    minus/plus pairs differ and ``levelset`` classifies evaluation points;
    otherwise the minus entries are used everywhere.
    """

    beta_minus: float = 1.0
    beta_plus: float = 1.0
    f_minus: Callable = None
    f_plus: Callable = None
    u_minus: Optional[Callable] = None
    u_plus: Optional[Callable] = None
    grad_minus: Optional[Callable] = None
    grad_plus: Optional[Callable] = None
    g: Optional[Callable] = None
    levelset: Optional[LevelSet] = None

    def __post_init__(self):
        if self.f_minus is None:
            self.f_minus = lambda p: np.zeros(len(p))
        if self.f_plus is None:
            self.f_plus = self.f_minus
        if self.u_plus is None:
            self.u_plus = self.u_minus
        if self.grad_plus is None:
            self.grad_plus = self.grad_minus
        if self.beta_minus <= 0 or self.beta_plus <= 0:
            raise ValueError("beta must be positive")

    @property
    def source(self):
        return (self.f_minus, self.f_plus)

    @property
    def has_exact(self) -> bool:
        return self.u_minus is not None

    def sides(self, pts: np.ndarray) -> np.ndarray:
        if self.levelset is None:
            return np.ones(len(pts), dtype=np.int8)
        return np.where(np.asarray(self.levelset(pts)) < 0, -1, 1).astype(np.int8)

    def _piecewise(self, fm, fp, pts, shape):
        out = np.empty(shape)
        s = self.sides(pts)
        if (s < 0).any():
            out[s < 0] = fm(pts[s < 0])
        if (s > 0).any():
            out[s > 0] = fp(pts[s > 0])
        return out

    def exact(self, pts: np.ndarray) -> np.ndarray:
        if not self.has_exact:
            raise ValueError("problem has no exact solution")
        return self._piecewise(self.u_minus, self.u_plus, pts, (len(pts),))

    def exact_grad(self, pts: np.ndarray) -> np.ndarray:
        if self.grad_minus is None:
            raise ValueError("problem has no exact gradient")
        return self._piecewise(self.grad_minus, self.grad_plus, pts, (len(pts), 3))

    def dirichlet(self, pts: np.ndarray) -> np.ndarray:
        if self.g is not None:
            return np.asarray(self.g(pts), float)
        if self.has_exact:
            return self.exact(pts)
        return np.zeros(len(pts))


def jump_residuals(problem: Problem, pts: np.ndarray, normals: np.ndarray):
    """Value and flux mismatch of the exact solution at interface points."""
    vj = problem.u_plus(pts) - problem.u_minus(pts)
    fj = problem.beta_plus * np.einsum(
        "ij,ij->i", problem.grad_plus(pts), normals
    ) - problem.beta_minus * np.einsum("ij,ij->i", problem.grad_minus(pts), normals)
    return np.asarray(vj), np.asarray(fj)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    mesh: PolyMesh
    problem: Problem
    groups: list = field(repr=False, default_factory=list)  # vemcore.CellGroup


def assemble(mesh: PolyMesh, problem: Problem, stab: str = "face") -> AssembledSystem:
    """Scatter per-cell stiffness and load into the global sparse system.

    Cells run through the batched same-signature engine; failures are
    re-attributed per cell before reporting.
    """
    ndof = mesh.n_dofs
    try:
        groups = vemcore.build_groups(
            mesh, beta_minus=problem.beta_minus, beta_plus=problem.beta_plus, stab=stab
        )
    except Exception:
        failures = []
        for cid in range(mesh.n_cells):
            try:
                vemcore.local_stiffness(
                    mesh, cid,
                    beta_minus=problem.beta_minus, beta_plus=problem.beta_plus,
                    stab=stab,
                )
            except Exception as exc:
                failures.append(f"cell {cid}: {exc}")
                if len(failures) >= 20:
                    break
        raise AssemblyError("; ".join(failures) or "assembly failed")
    rows, cols, vals = [], [], []
    rhs = np.zeros(ndof)
    for g in groups:
        load = vemcore.group_load(mesh, g, problem.source)
        gd = mesh.dof_index[g.dofs].astype(np.int32)      # (C, N)
        n = gd.shape[1]
        rows.append(np.repeat(gd, n, axis=1).ravel())
        cols.append(np.tile(gd, (1, n)).ravel())
        vals.append(g.A.ravel())
        np.add.at(rhs, gd.ravel(), load.ravel())
        g.A = None
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()
    return AssembledSystem(matrix=a, rhs=rhs, mesh=mesh, problem=problem, groups=groups)


@dataclass
class ReducedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    ndof: int

    def expand(self, x_interior: np.ndarray) -> np.ndarray:
        full = np.zeros(self.ndof)
        full[self.interior] = x_interior
        full[self.boundary] = self.boundary_values
        return full


def apply_dirichlet(system: AssembledSystem, g: Optional[Callable] = None) -> ReducedSystem:
    """Fix boundary DoFs to the Dirichlet data and eliminate symmetrically."""
    mesh = system.mesh
    bidx = mesh.dof_index[mesh.boundary_dofs]
    mask = np.ones(mesh.n_dofs, bool)
    mask[bidx] = False
    iidx = np.flatnonzero(mask)
    pts = mesh.vertices[mesh.boundary_dofs]
    gvals = np.asarray(g(pts), float) if g is not None else system.problem.dirichlet(pts)
    a = system.matrix
    a_ii = a[iidx][:, iidx].tocsr()
    a_ib = a[iidx][:, bidx]
    rhs = system.rhs[iidx] - a_ib @ gvals
    return ReducedSystem(
        matrix=a_ii, rhs=rhs, interior=iidx, boundary=bidx,
        boundary_values=gvals, ndof=mesh.n_dofs,
    )


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------

@dataclass
class CGInfo:
    iterations: int
    relres: float
    prec_norms: list = field(repr=False, default_factory=list)


def solve_cg(matrix, rhs, tol: float = 1e-10, max_iter: Optional[int] = None):
    """Jacobi-preconditioned CG; returns (solution, CGInfo).

    Raises :class:`SolverError` when the relative residual has not reached
    the tolerance within the iteration budget.
    """
    n = len(rhs)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), CGInfo(0, 0.0, [0.0])
    if max_iter is None:
        max_iter = max(200, 4 * n)
    diag = np.asarray(matrix.diagonal() if sp.issparse(matrix) else np.diag(matrix))
    if np.any(diag <= 0):
        raise SolverError("system diagonal is not positive")
    dinv = 1.0 / diag
    x = np.zeros(n)
    r = rhs.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    info = CGInfo(0, 1.0, [math.sqrt(rz)])
    for it in range(1, max_iter + 1):
        ap = matrix @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = dinv * r
        rz_new = float(r @ z)
        info.iterations = it
        info.prec_norms.append(math.sqrt(max(rz_new, 0.0)))
        info.relres = float(np.linalg.norm(r)) / bnorm
        if info.relres <= tol:
            return x, info
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {info.iterations} iterations "
        f"(relative residual {info.relres:.3e})"
    )


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

def _group_errors(mesh, problem, u_h, g, degree):
    rule = tet_rule(degree)
    coeff = np.einsum("cin,cn->ci", g.D, u_h[mesh.dof_index[g.dofs]])   # (C, 4)
    verts = mesh.vertices[g.subtets]                                    # (C, k, 4, 3)
    pts = np.einsum("qk,cskj->csqj", rule.points, verts)                # (C, k, q, 3)
    q = len(rule.weights)
    e_energy = 0.0
    e_l2 = 0.0
    for si, s in enumerate((-1, 1)):
        mask = g.subtet_tags == s
        if not mask.any():
            continue
        cidx, kidx = np.nonzero(mask)
        flat = pts[cidx, kidx].reshape(-1, 3)
        uex = np.asarray((problem.u_minus if s < 0 else problem.u_plus)(flat), float)
        gex = np.asarray(
            (problem.grad_minus if s < 0 else problem.grad_plus)(flat), float
        ).reshape(-1, 3)
        grad_h = np.einsum("mj,mjk->mk", coeff[cidx, 1:], g.grads[cidx, si])
        rel = pts[cidx, kidx] - g.anchor[cidx, None]
        uh = coeff[cidx, 0][:, None] + np.einsum("mqk,mk->mq", rel, grad_h)
        beta = problem.beta_minus if s < 0 else problem.beta_plus
        wq = g.vols[cidx, kidx][:, None] * rule.weights[None, :]
        dg = gex.reshape(-1, q, 3) - grad_h[:, None, :]
        e_energy += beta * float(np.einsum("mq,mqj,mqj->", wq, dg, dg))
        du = uex.reshape(-1, q) - uh
        e_l2 += float(np.einsum("mq,mq,mq->", wq, du, du))
    return e_energy, e_l2


def _errors(mesh, problem, u_h, groups=None, degree=4):
    if not problem.has_exact or problem.grad_minus is None:
        raise ValueError("error norms need the exact solution and gradient")
    if groups is None:
        groups = vemcore.build_groups(
            mesh, beta_minus=problem.beta_minus, beta_plus=problem.beta_plus
        )
    te, tl = 0.0, 0.0
    for g in groups:
        e, l = _group_errors(mesh, problem, u_h, g, degree)
        te += e
        tl += l
    return math.sqrt(te), math.sqrt(tl)


def energy_error(mesh, problem, u_h, groups=None, degree: int = 4) -> float:
    """Broken beta-weighted gradient error against the projected solution."""
    return _errors(mesh, problem, u_h, groups, degree)[0]


def l2_error(mesh, problem, u_h, groups=None, degree: int = 4) -> float:
    """L2 error against the projected discrete solution."""
    return _errors(mesh, problem, u_h, groups, degree)[1]


def solve_problem(mesh, problem, stab="face", cg_tol=1e-10):
    """Assemble, reduce, solve; returns (full DoF vector, system, info)."""
    system = assemble(mesh, problem, stab=stab)
    reduced = apply_dirichlet(system)
    x, info = solve_cg(reduced.matrix, reduced.rhs, tol=cg_tol)
    return reduced.expand(x), system, info


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    levels: list
    h: list
    ndof: list
    energy: list
    l2: list

    @property
    def energy_orders(self) -> list:
        return self._orders(self.energy)

    @property
    def l2_orders(self) -> list:
        return self._orders(self.l2)

    def _orders(self, err):
        out = [None]
        for i in range(1, len(err)):
            if err[i] > 0 and err[i - 1] > 0:
                out.append(
                    math.log(err[i - 1] / err[i]) / math.log(self.h[i - 1] / self.h[i])
                )
            else:
                out.append(None)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,h,ndof,energy_err,energy_order,l2_err,l2_order\n")
        eo, lo = self.energy_orders, self.l2_orders
        for i in range(len(self.levels)):
            buf.write(
                f"{self.levels[i]},{self.h[i]!r},{self.ndof[i]},"
                f"{self.energy[i]!r},{'' if eo[i] is None else repr(eo[i])},"
                f"{self.l2[i]!r},{'' if lo[i] is None else repr(lo[i])}\n"
            )
        return buf.getvalue()


def convergence_study(make_level: Callable, levels: Sequence[int], stab: str = "face",
                      cg_tol: float = 1e-10) -> ConvergenceReport:
    """Run mesh generation, assembly, solve and error norms per level.

    ``make_level(n)`` returns a (mesh, problem) pair; levels must refine (h
    strictly decreasing).
    """
    if len(levels) < 1:
        raise ValueError("at least one level required")
    rep = ConvergenceReport([], [], [], [], [])
    for n in levels:
        mesh, problem = make_level(n)
        u_h, system, _ = solve_problem(mesh, problem, stab=stab, cg_tol=cg_tol)
        e, l = _errors(mesh, problem, u_h, system.groups)
        rep.levels.append(int(n))
        rep.h.append(float(mesh.h))
        rep.ndof.append(int(mesh.n_dofs))
        rep.energy.append(float(e))
        rep.l2.append(float(l))
    if any(rep.h[i] <= rep.h[i + 1] for i in range(len(rep.h) - 1)):
        raise ValueError("levels do not refine: h must decrease")
    return rep


# ---------------------------------------------------------------------------
# named problems
# ---------------------------------------------------------------------------

def smooth_problem() -> Problem:
    """u = sin(pi x) sin(pi y) sin(pi z) on the unit cube, beta = 1."""

    def u(p):
        return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])

    def grad(p):
        sx, sy, sz = (np.sin(np.pi * p[:, i]) for i in range(3))
        cx, cy, cz = (np.cos(np.pi * p[:, i]) for i in range(3))
        return np.pi * np.column_stack([cx * sy * sz, sx * cy * sz, sx * sy * cz])

    return Problem(
        f_minus=lambda p: 3.0 * np.pi**2 * u(p),
        u_minus=u,
        grad_minus=grad,
        g=lambda p: np.zeros(len(p)),
    )


def patch_linear_problem(beta: float = 1.0, const: float = 0.3,
                         slope=(1.0, 2.0, 3.0)) -> Problem:
    """Exact global linear solution; the scheme must reproduce it."""
    b = np.asarray(slope, float)

    def u(p):
        return const + p @ b

    return Problem(
        beta_minus=beta, beta_plus=beta,
        u_minus=u,
        grad_minus=lambda p: np.broadcast_to(b, (len(p), 3)).copy(),
    )


def patch_ife_problem(normal=(0.0, 0.0, 1.0), offset: float = 0.527,
                      beta_minus: float = 2.0, beta_plus: float = 1.0,
                      slope_plus=(1.0, 2.0, 3.0), const: float = 0.4) -> Problem:
    """Globally broken-linear solution across a plane interface.

    The plus-side gradient is prescribed; the minus side transports it with
    the jump matrix, so both interface conditions hold exactly and the
    solution lies in every cell's projection space.
    """
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    from .mesh import plane_frame

    t1, t2 = plane_frame(n)
    m_minus = vemcore.jump_matrix_minus(t1, t2, n, beta_minus, beta_plus)
    qp = np.asarray(slope_plus, float)
    qm = m_minus @ qp
    x0 = offset * n
    ls = plane_levelset(n, offset)

    def u_m(p):
        return const + (p - x0) @ qm

    def u_p(p):
        return const + (p - x0) @ qp

    return Problem(
        beta_minus=beta_minus, beta_plus=beta_plus,
        u_minus=u_m, u_plus=u_p,
        grad_minus=lambda p: np.broadcast_to(qm, (len(p), 3)).copy(),
        grad_plus=lambda p: np.broadcast_to(qp, (len(p), 3)).copy(),
        levelset=ls,
    )


def sphere_interface_problem(r0: float, beta_minus: float, beta_plus: float,
                             center=(0.5, 0.5, 0.5)) -> Problem:
    """Radial manufactured solution for a spherical interface.

    u- = r^3/beta-, u+ = (r^3 - r0^3)/beta+ + r0^3/beta-; both interface
    conditions hold at r = r0 and -div(beta grad u) = -12 r on both sides.
    """
    c = np.asarray(center, float)

    def r(p):
        return np.linalg.norm(p - c, axis=-1)

    def u_m(p):
        return r(p) ** 3 / beta_minus

    def u_p(p):
        return (r(p) ** 3 - r0**3) / beta_plus + r0**3 / beta_minus

    def grad_m(p):
        return 3.0 * r(p)[:, None] * (p - c) / beta_minus

    def grad_p(p):
        return 3.0 * r(p)[:, None] * (p - c) / beta_plus

    def f(p):
        return -12.0 * r(p)

    return Problem(
        beta_minus=beta_minus, beta_plus=beta_plus,
        f_minus=f, f_plus=f,
        u_minus=u_m, u_plus=u_p,
        grad_minus=grad_m, grad_plus=grad_p,
        levelset=sphere_levelset(c, r0),
    )
