"""Per-cell operators for the lowest-order virtual element method.

All degrees of freedom are vertex values on a cell's boundary triangulation;
nothing is ever evaluated in the element interior except the projection onto
the four-dimensional computable space.  That space is either P1 or, on cells
crossed by a material interface, the broken-linear space glued by value and
flux continuity across the dividing plane.  The projection uses only exact
boundary integrals (hat functions integrate to area/3, the projected
functions are linear per boundary triangle), so the scheme's bilinear form is
quadrature-error free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .mesh import PolyMesh
from .quadrature import tet_rule

__all__ = [
    "TraceSpace",
    "ProjectionSpace",
    "LocalOperators",
    "trace_space",
    "jump_matrix_minus",
    "projection_space",
    "projection",
    "stabilization_face",
    "stabilization_edge",
    "local_stiffness",
    "local_load",
    "interpolate_boundary",
    "quasi_interp",
    "stabilization_rayleigh",
]


@dataclass
class TraceSpace:
    """Piecewise-linear trace space on a cell's boundary triangulation.

    Hat functions sit at the triangulation vertices (``dofs``, ascending
    global ids); ``tris`` indexes them locally.  Geometry is cached per
    triangle: area, outward unit normal, centroid and the constant surface
    gradients of the three hats.
    """

    cell: int
    dofs: np.ndarray       # (N,) global vertex ids
    points: np.ndarray     # (N, 3)
    tris: np.ndarray       # (m, 3) local indices
    area: np.ndarray       # (m,)
    normal: np.ndarray     # (m, 3) outward
    centroid: np.ndarray   # (m, 3)
    grads: np.ndarray      # (m, 3, 3) hat gradients
    h: float

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def boundary_area(self) -> float:
        return float(self.area.sum())


def trace_space(mesh: PolyMesh, cid: int) -> TraceSpace:
    tris_g = mesh.cell_tris(cid)
    dofs = np.unique(tris_g)
    local = np.searchsorted(dofs, tris_g)
    p = mesh.vertices[tris_g]
    raw = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    two_a = np.linalg.norm(raw, axis=1)
    if np.any(two_a <= 0):
        raise ValueError(f"cell {cid}: degenerate boundary triangle")
    nrm = raw / two_a[:, None]
    grads = np.empty((len(tris_g), 3, 3))
    grads[:, 0] = np.cross(nrm, p[:, 2] - p[:, 1]) / two_a[:, None]
    grads[:, 1] = np.cross(nrm, p[:, 0] - p[:, 2]) / two_a[:, None]
    grads[:, 2] = np.cross(nrm, p[:, 1] - p[:, 0]) / two_a[:, None]
    return TraceSpace(
        cell=cid,
        dofs=dofs,
        points=mesh.vertices[dofs],
        tris=local,
        area=0.5 * two_a,
        normal=nrm,
        centroid=p.mean(axis=1),
        grads=grads,
        h=float(mesh.cell_h[cid]),
    )


# ---------------------------------------------------------------------------
# projection spaces
# ---------------------------------------------------------------------------

def jump_matrix_minus(t1, t2, n, beta_minus: float, beta_plus: float) -> np.ndarray:
    """Matrix transporting plus-side gradients to the minus side.

    With interface frame (t1, t2, n) the transported gradient keeps its
    tangential components and scales the normal one by beta_plus/beta_minus,
    which encodes value continuity and flux continuity across the plane.
    """
    frame = np.column_stack([t1, t2, n]).astype(float)
    gram = frame.T @ frame
    if np.abs(gram - np.eye(3)).max() > 1e-10:
        raise ValueError("interface frame is not orthonormal")
    if beta_minus <= 0 or beta_plus <= 0:
        raise ValueError("diffusion coefficients must be positive")
    f_minus = frame * np.array([1.0, 1.0, beta_minus])
    f_plus = frame * np.array([1.0, 1.0, beta_plus])
    return scipy.linalg.solve(f_minus.T, f_plus.T)


@dataclass
class ProjectionSpace:
    """Four-dimensional computable space: 1 plus three gradient modes.

    ``grads[s]`` holds the three basis gradients (rows) on side s (0 = minus,
    1 = plus); they coincide for the P1 variant.  Basis functions are
    w_j(x) = q_j^side . (x - anchor), continuous across the dividing plane.
    """

    kind: str
    anchor: np.ndarray
    grads: np.ndarray          # (2, 3, 3)
    beta: tuple                # (beta_minus, beta_plus)
    vol: tuple                 # (vol_minus, vol_plus)
    normal: Optional[np.ndarray] = None   # dividing plane normal (minus -> plus)

    def side_of(self, pts: np.ndarray) -> np.ndarray:
        """+1/-1 per point; points on the plane count as plus."""
        if self.normal is None:
            return np.ones(len(pts), dtype=np.int8)
        s = (pts - self.anchor) @ self.normal
        return np.where(s < 0, -1, 1).astype(np.int8)

    def grad_rows(self, side: int) -> np.ndarray:
        return self.grads[0 if side < 0 else 1]

    def basis_values(self, pts: np.ndarray, sides: np.ndarray) -> np.ndarray:
        """(n, 3) values of the three gradient-mode basis functions."""
        rel = pts - self.anchor
        vals = np.empty((len(pts), 3))
        for s in (-1, 1):
            m = sides == s
            if np.any(m):
                vals[m] = rel[m] @ self.grad_rows(s).T
        return vals

    def gram(self) -> np.ndarray:
        """beta-weighted gradient Gram matrix of the three gradient modes."""
        g = np.zeros((3, 3))
        for k, s in enumerate((-1, 1)):
            q = self.grads[k]
            g += self.beta[k] * self.vol[k] * (q @ q.T)
        return g


def projection_space(
    mesh: PolyMesh, cid: int, beta_minus: float, beta_plus: float
) -> ProjectionSpace:
    """P1 space on single-material cells, broken-linear on interface cells."""
    cell = mesh.cells[cid]
    p = mesh.vertices[cell.subtets]
    vols = np.abs(
        np.einsum(
            "ij,ij->i", p[:, 1] - p[:, 0],
            np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]),
        ) / 6.0
    )
    vol_m = float(vols[cell.subtet_tags < 0].sum())
    vol_p = float(vols[cell.subtet_tags > 0].sum())
    if cell.tag == "interface":
        n, t1, t2, anchor = mesh.interface_frame(cid)
        m_minus = jump_matrix_minus(t1, t2, n, beta_minus, beta_plus)
        q_plus = np.stack([t1, t2, n])
        q_minus = q_plus @ m_minus.T      # rows q_j^- = M^- q_j^+
        return ProjectionSpace(
            kind="immersed",
            anchor=anchor,
            grads=np.stack([q_minus, q_plus]),
            beta=(beta_minus, beta_plus),
            vol=(vol_m, vol_p),
            normal=n,
        )
    beta = beta_minus if cell.tag == "minus" else beta_plus
    anchor = mesh.vertices[mesh.cell_vertex_ids(cid)].mean(axis=0)
    eye = np.eye(3)
    return ProjectionSpace(
        kind="p1",
        anchor=anchor,
        grads=np.stack([eye, eye]),
        beta=(beta, beta),
        vol=(vol_m, vol_p),
    )


# ---------------------------------------------------------------------------
# projection and stabilization
# ---------------------------------------------------------------------------

def projection(mesh: PolyMesh, cid: int, W: ProjectionSpace, B: TraceSpace) -> np.ndarray:
    """Energy projection onto W as a (4, N) coefficient map.

    Row 0 is the constant, rows 1..3 the gradient-mode coefficients.  The
    gradient part solves the 3x3 beta-weighted Gram system against exact
    boundary flux integrals; the constant matches the boundary average.
    """
    n_dofs = B.n_dofs
    sides = W.side_of(B.centroid)
    beta_t = np.where(sides < 0, W.beta[0], W.beta[1])
    # flux of basis mode j through triangle t: beta_T * q_j^side . n_T
    qn = np.empty((len(B.tris), 3))
    for s in (-1, 1):
        m = sides == s
        if np.any(m):
            qn[m] = B.normal[m] @ W.grad_rows(s).T
    qn *= beta_t[:, None]
    scale = (B.area / 3.0)[:, None] * qn       # (m, 3): per-vertex weight
    bmat = np.zeros((3, n_dofs))
    for k in range(3):
        np.add.at(bmat.T, B.tris[:, k], scale)
    gram = W.gram()
    try:
        coeff = scipy.linalg.solve(gram, bmat, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:
        raise ValueError(f"cell {cid}: singular gradient Gram matrix") from exc
    # constant from the boundary-average constraint
    hat_int = np.zeros(n_dofs)
    np.add.at(hat_int, B.tris.ravel(), np.repeat(B.area / 3.0, 3))
    mode_int = B.area @ W.basis_values(B.centroid, sides)   # exact: linear per tri
    const = (hat_int - mode_int @ coeff) / B.boundary_area
    return np.vstack([const, coeff])


def stabilization_face(B: TraceSpace) -> np.ndarray:
    """h_K * sum over boundary triangles of surface-gradient inner products."""
    n = B.n_dofs
    s = np.zeros((n, n))
    blocks = B.h * B.area[:, None, None] * np.einsum("tik,tjk->tij", B.grads, B.grads)
    np.add.at(s, (B.tris[:, :, None], B.tris[:, None, :]), blocks)
    return s


def stabilization_edge(mesh: PolyMesh, cid: int, B: TraceSpace) -> np.ndarray:
    """h_K^2 * sum over polyhedron edges of tangential-derivative products.

    Needs only values on the geometric edges of the cell, not on the full
    boundary triangulation; valid when auxiliary triangulation edges are
    either long or bounded by short polygon edges.
    """
    n = B.n_dofs
    s = np.zeros((n, n))
    lookup = {int(v): i for i, v in enumerate(B.dofs)}
    for a, b in mesh.cell_edges(cid):
        la, lb = lookup[int(a)], lookup[int(b)]
        ell = float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]))
        w = B.h**2 / ell
        s[la, la] += w
        s[lb, lb] += w
        s[la, lb] -= w
        s[lb, la] -= w
    return s


@dataclass
class LocalOperators:
    """Projection, stabilization and stiffness of one cell."""

    cell: int
    dofs: np.ndarray
    D: np.ndarray            # (4, N) projection coefficients
    consistency: np.ndarray  # (N, N)
    S: np.ndarray            # (N, N) stabilization
    P: np.ndarray            # (N, N) DoF samples of the projected function
    A: np.ndarray            # (N, N) stiffness
    space: ProjectionSpace
    trace: TraceSpace


def local_stiffness(
    mesh: PolyMesh,
    cid: int,
    W: Optional[ProjectionSpace] = None,
    B: Optional[TraceSpace] = None,
    beta_minus: float = 1.0,
    beta_plus: float = 1.0,
    stab: str = "face",
) -> LocalOperators:
    """Stiffness A = D'GD + (I-P)'S(I-P) with P the DoF trace of the
    projection; constants span the kernel."""
    if B is None:
        B = trace_space(mesh, cid)
    if W is None:
        W = projection_space(mesh, cid, beta_minus, beta_plus)
    d = projection(mesh, cid, W, B)
    gram = W.gram()
    cons = d[1:].T @ gram @ d[1:]
    if stab == "face":
        s = stabilization_face(B)
    elif stab == "edge":
        s = stabilization_edge(mesh, cid, B)
    else:
        raise ValueError(f"unknown stabilization '{stab}'")
    sides = W.side_of(B.points)
    eval_mat = np.hstack([np.ones((B.n_dofs, 1)), W.basis_values(B.points, sides)])
    p = eval_mat @ d
    ip = np.eye(B.n_dofs) - p
    a = cons + ip.T @ s @ ip
    return LocalOperators(
        cell=cid, dofs=B.dofs, D=d, consistency=cons, S=s, P=p, A=a, space=W, trace=B
    )


def project_at(ops: LocalOperators, pts: np.ndarray, side: int) -> np.ndarray:
    """(n, N): values of the projected hat functions at points on one side."""
    w = ops.space
    rel = (pts - w.anchor) @ w.grad_rows(side).T
    return ops.D[0][None, :] + rel @ ops.D[1:]


def local_load(mesh: PolyMesh, ops: LocalOperators, f, degree: int = 2) -> np.ndarray:
    """Load vector b_i = integral of f times the projected hat functions.

    ``f`` is a callable on (n, 3) points or an ``(f_minus, f_plus)`` pair for
    interface cells; integration runs over the sub-tetrahedra at the given
    quadrature degree.
    """
    cell = mesh.cells[ops.cell]
    rule = tet_rule(degree)
    verts = mesh.vertices[cell.subtets]
    vols = np.abs(
        np.einsum(
            "ij,ij->i", verts[:, 1] - verts[:, 0],
            np.cross(verts[:, 2] - verts[:, 0], verts[:, 3] - verts[:, 0]),
        ) / 6.0
    )
    pts = rule.map_to(verts)      # (k, q, 3)
    b = np.zeros(len(ops.dofs))
    for s in (-1, 1):
        m = cell.subtet_tags == s
        if not np.any(m):
            continue
        flat = pts[m].reshape(-1, 3)
        if isinstance(f, tuple):
            fv = f[0](flat) if s < 0 else f[1](flat)
        else:
            fv = f(flat)
        fv = np.asarray(fv, float).reshape(m.sum(), -1)
        phi = project_at(ops, flat, s).reshape(m.sum(), len(rule.weights), -1)
        b += np.einsum("k,q,kq,kqn->n", vols[m], rule.weights, fv, phi)
    return b


def interpolate_boundary(u: Callable, mesh: PolyMesh, cid: int) -> np.ndarray:
    """DoF values of u on the cell: vertex evaluation at triangulation nodes."""
    tris = mesh.cell_tris(cid)
    dofs = np.unique(tris)
    return np.asarray(u(mesh.vertices[dofs]), float)


# ---------------------------------------------------------------------------
# quasi-interpolation onto the interface space
# ---------------------------------------------------------------------------

def patch_cells(mesh: PolyMesh, cid: int) -> list:
    """The cell and its face neighbours."""
    out = {cid}
    for fid, _ in mesh.cells[cid].faces:
        for c in mesh.faces[fid].cells:
            if c >= 0:
                out.add(c)
    return sorted(out)


def quasi_interp(
    mesh: PolyMesh,
    cid: int,
    W: ProjectionSpace,
    u_minus: Callable,
    degree: int = 2,
) -> np.ndarray:
    """Interface-space coefficients of the quasi-interpolant of u.

    ``u_minus`` is the analytic extension of the minus-side solution.  Its L2
    projection onto P1 over the patch (cell plus face neighbours) gives the
    minus-side polynomial; the plus side scales the normal slope by
    beta_minus/beta_plus, so the result satisfies both interface conditions
    by construction.  Returned in the cell's projection-space basis.
    """
    if W.kind != "immersed":
        raise ValueError("quasi-interpolation targets interface cells")
    rule = tet_rule(degree)
    tets = np.concatenate([mesh.cells[c].subtets for c in patch_cells(mesh, cid)])
    verts = mesh.vertices[tets]
    vols = np.abs(
        np.einsum(
            "ij,ij->i", verts[:, 1] - verts[:, 0],
            np.cross(verts[:, 2] - verts[:, 0], verts[:, 3] - verts[:, 0]),
        ) / 6.0
    )
    pts = rule.map_to(verts).reshape(-1, 3)
    wts = (vols[:, None] * rule.weights[None, :]).ravel()
    basis = np.hstack([np.ones((len(pts), 1)), pts - W.anchor])   # (n, 4)
    mass = basis.T @ (wts[:, None] * basis)
    rhs = basis.T @ (wts * np.asarray(u_minus(pts), float))
    sol = scipy.linalg.solve(mass, rhs, assume_a="pos")
    c0, p_m = float(sol[0]), sol[1:]
    # express the minus-side gradient in the cell's basis rows
    coeff = scipy.linalg.solve(W.grads[0].T, p_m)
    return np.concatenate([[c0], coeff])


# ---------------------------------------------------------------------------
# stability eigenvalue
# ---------------------------------------------------------------------------

# ---------------------------------------------------------------------------
# batched same-signature engine
# ---------------------------------------------------------------------------
# Cells sharing a signature (interface flag, triangle count, DoF count,
# sub-tet count) run through the projection/stabilization pipeline as stacked
# arrays; per-cell results are identical to the scalar functions above up to
# floating-point association.  Groups are chunked to bound peak memory.

@dataclass
class CellGroup:
    """Stacked local operators for cells of one signature."""

    cids: np.ndarray          # (C,)
    dofs: np.ndarray          # (C, N) global vertex ids
    D: np.ndarray             # (C, 4, N)
    A: Optional[np.ndarray]   # (C, N, N); dropped after scatter
    grads: np.ndarray         # (C, 2, 3, 3) basis gradients per side
    anchor: np.ndarray        # (C, 3)
    beta: np.ndarray          # (C, 2) minus/plus coefficients
    subtets: np.ndarray       # (C, k, 4)
    subtet_tags: np.ndarray   # (C, k)
    vols: np.ndarray          # (C, k)
    normal: Optional[np.ndarray]   # (C, 3) dividing plane, interface groups


def _batch_frames(polys: np.ndarray):
    """Batched interface frames from (C, p, 3) polygon loops."""
    rel = polys - polys.mean(axis=1, keepdims=True)
    n = 0.5 * np.cross(rel, np.roll(rel, -1, axis=1)).sum(axis=1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    a = np.zeros_like(n)
    use_y = np.abs(n[:, 0]) > 0.9
    a[use_y, 1] = 1.0
    a[~use_y, 0] = 1.0
    t1 = a - np.einsum("ci,ci->c", a, n)[:, None] * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return n, t1, t2, polys.mean(axis=1)


def _batch_group(mesh, cids, tris_g, subtets, subtet_tags, interface_polys,
                 beta_minus, beta_plus, stab):
    verts = mesh.vertices
    c_count, m = tris_g.shape[:2]

    srt = np.sort(tris_g.reshape(c_count, -1), axis=1)
    first = np.ones_like(srt, dtype=bool)
    first[:, 1:] = srt[:, 1:] != srt[:, :-1]
    n_dofs = int(first[0].sum())
    if not np.all(first.sum(axis=1) == n_dofs):
        raise ValueError("inconsistent DoF counts within a signature group")
    dofs = srt[first].reshape(c_count, n_dofs)
    stride = np.int64(mesh.n_vertices)
    offs = stride * np.arange(c_count, dtype=np.int64)
    keys = (dofs + offs[:, None]).ravel()
    loc = np.searchsorted(keys, (tris_g + offs[:, None, None]).ravel())
    loc = (loc - (np.arange(c_count) * n_dofs)[:, None, None].repeat(m, 1).repeat(3, 2).reshape(-1)
           ).reshape(c_count, m, 3)

    p = verts[tris_g]                                  # (C, m, 3, 3)
    raw = np.cross(p[:, :, 1] - p[:, :, 0], p[:, :, 2] - p[:, :, 0])
    two_a = np.linalg.norm(raw, axis=2)
    if np.any(two_a <= 0):
        raise ValueError("degenerate boundary triangle in group")
    nrm = raw / two_a[..., None]
    area = 0.5 * two_a
    grads_hat = np.empty((c_count, m, 3, 3))
    grads_hat[:, :, 0] = np.cross(nrm, p[:, :, 2] - p[:, :, 1]) / two_a[..., None]
    grads_hat[:, :, 1] = np.cross(nrm, p[:, :, 0] - p[:, :, 2]) / two_a[..., None]
    grads_hat[:, :, 2] = np.cross(nrm, p[:, :, 1] - p[:, :, 0]) / two_a[..., None]
    centroid = p.mean(axis=2)
    h_k = mesh.cell_h[cids]

    tp = verts[subtets]
    vols = np.abs(
        np.einsum(
            "ckj,ckj->ck", tp[:, :, 1] - tp[:, :, 0],
            np.cross(tp[:, :, 2] - tp[:, :, 0], tp[:, :, 3] - tp[:, :, 0]),
        ) / 6.0
    )
    vol_m = np.where(subtet_tags < 0, vols, 0.0).sum(axis=1)
    vol_p = np.where(subtet_tags > 0, vols, 0.0).sum(axis=1)

    if interface_polys is not None:
        n, t1, t2, anchor = _batch_frames(verts[interface_polys])
        f_minus = np.stack([t1, t2, beta_minus * n], axis=2)    # columns
        f_plus = np.stack([t1, t2, beta_plus * n], axis=2)
        m_minus = np.linalg.solve(f_minus.transpose(0, 2, 1), f_plus.transpose(0, 2, 1))
        q_plus = np.stack([t1, t2, n], axis=1)                  # rows
        q_minus = q_plus @ m_minus.transpose(0, 2, 1)
        grads = np.stack([q_minus, q_plus], axis=1)             # (C, 2, 3, 3)
        tri_side = np.where(
            np.einsum("cmj,cj->cm", centroid - anchor[:, None], n) < 0, 0, 1
        )
        beta_arr = np.stack(
            [np.full(c_count, beta_minus), np.full(c_count, beta_plus)], axis=1
        )
        normal = n
    else:
        tags = np.array([1 if mesh.cells[c].tag == "plus" else 0 for c in cids])
        beta_cell = np.where(tags == 1, beta_plus, beta_minus)
        anchor = np.stack([verts[dofs[c]].mean(axis=0) for c in range(c_count)])
        grads = np.broadcast_to(np.eye(3), (c_count, 2, 3, 3)).copy()
        tri_side = None
        beta_arr = np.stack([beta_cell, beta_cell], axis=1)
        normal = None

    # beta-weighted gradient Gram
    gram = (
        beta_arr[:, 0, None, None] * vol_m[:, None, None]
        * np.einsum("cik,cjk->cij", grads[:, 0], grads[:, 0])
        + beta_arr[:, 1, None, None] * vol_p[:, None, None]
        * np.einsum("cik,cjk->cij", grads[:, 1], grads[:, 1])
    )

    rows = np.arange(c_count)[:, None]

    # boundary flux matrix: per triangle, beta_T * q_j . n_T, share area/3
    if tri_side is None:
        qn = nrm * beta_arr[:, 1, None, None]
    else:
        g_tri = grads[rows, tri_side]           # (C, m, 3, 3) side-resolved
        qn = np.einsum("cmjk,cmk->cmj", g_tri, nrm)
        beta_tri = np.where(tri_side == 0, beta_arr[:, 0, None], beta_arr[:, 1, None])
        qn = qn * beta_tri[..., None]
    scale = (area / 3.0)[..., None] * qn                      # (C, m, 3)
    bmat_t = np.zeros((c_count, n_dofs, 3))
    for k in range(3):
        np.add.at(bmat_t, (rows, loc[:, :, k]), scale)
    coeff = np.linalg.solve(gram, bmat_t.transpose(0, 2, 1))  # (C, 3, N)

    hat_int = np.zeros((c_count, n_dofs))
    third = area / 3.0
    for k in range(3):
        np.add.at(hat_int, (rows, loc[:, :, k]), third)
    rel_c = centroid - anchor[:, None]
    if tri_side is None:
        basis_c = rel_c                                        # (C, m, 3)
    else:
        basis_c = np.einsum("cmjk,cmk->cmj", g_tri, rel_c)
    mode_int = np.einsum("cm,cmj->cj", area, basis_c)
    barea = area.sum(axis=1)
    const = (hat_int - np.einsum("cj,cjn->cn", mode_int, coeff)) / barea[:, None]
    d = np.concatenate([const[:, None, :], coeff], axis=1)    # (C, 4, N)

    cons = np.einsum("cki,ckl,clj->cij", coeff, gram, coeff)
    if stab == "face":
        s = np.zeros((c_count, n_dofs, n_dofs))
        blocks = (h_k[:, None] * area)[..., None, None] * np.einsum(
            "cmik,cmjk->cmij", grads_hat, grads_hat
        )
        for i in range(3):
            for j in range(3):
                np.add.at(s, (rows, loc[:, :, i], loc[:, :, j]), blocks[:, :, i, j])
    else:
        raise ValueError("batched assembly supports the face stabilization")

    pts = verts[dofs]                                          # (C, N, 3)
    rel_p = pts - anchor[:, None]
    if tri_side is None:
        basis_p = rel_p
    else:
        side_p = np.where(np.einsum("cnj,cj->cn", rel_p, normal) < 0, 0, 1)
        g_pt = grads[np.arange(c_count)[:, None], side_p]
        basis_p = np.einsum("cnjk,cnk->cnj", g_pt, rel_p)
    eval_mat = np.concatenate([np.ones((c_count, n_dofs, 1)), basis_p], axis=2)
    proj = eval_mat @ d
    ip = np.broadcast_to(np.eye(n_dofs), proj.shape) - proj
    a = cons + np.einsum("cki,ckl,clj->cij", ip, s, ip)

    return CellGroup(
        cids=cids, dofs=dofs, D=d, A=a, grads=grads, anchor=anchor,
        beta=beta_arr, subtets=subtets, subtet_tags=subtet_tags, vols=vols,
        normal=normal,
    )


def build_groups(mesh: PolyMesh, beta_minus: float = 1.0, beta_plus: float = 1.0,
                 stab: str = "face", chunk_entries: int = 6_000_000) -> list:
    """Local operators for every cell, grouped by signature and chunked."""
    sigs: dict = {}
    for cid in range(mesh.n_cells):
        tris = mesh.cell_tris(cid)
        cell = mesh.cells[cid]
        iface = cell.tag == "interface"
        key = (iface, tris.shape[0], len(cell.subtets),
               0 if not iface else len(cell.interface))
        sigs.setdefault(key, []).append(cid)
    groups = []
    for (iface, m, k, np_), cids in sorted(sigs.items(), key=lambda kv: kv[1][0]):
        cids = np.asarray(cids)
        chunk = max(1, chunk_entries // max(m * 9 * 4, 1))
        for lo in range(0, len(cids), chunk):
            part = cids[lo:lo + chunk]
            tris_g = np.stack([mesh.cell_tris(c) for c in part])
            subtets = np.stack([mesh.cells[c].subtets for c in part])
            tags = np.stack([mesh.cells[c].subtet_tags for c in part])
            polys = (
                np.stack([mesh.cells[c].interface for c in part]) if iface else None
            )
            groups.append(
                _batch_group(mesh, part, tris_g, subtets, tags, polys,
                             beta_minus, beta_plus, stab)
            )
    return groups


def group_load(mesh: PolyMesh, group: CellGroup, f, degree: int = 2) -> np.ndarray:
    """(C, N) load vectors for a signature group."""
    rule = tet_rule(degree)
    pts = np.einsum("qk,sckj->scqj", rule.points, mesh.vertices[group.subtets].transpose(1, 0, 2, 3))
    # pts axes: (k subtets, C, q, 3)
    pts = pts.transpose(1, 0, 2, 3)                            # (C, k, q, 3)
    c_count, k, q, _ = pts.shape
    n_dofs = group.dofs.shape[1]
    b = np.zeros((c_count, n_dofs))
    for si, s in enumerate((-1, 1)):
        mask = group.subtet_tags == s
        if not mask.any():
            continue
        cidx, kidx = np.nonzero(mask)
        flat = pts[cidx, kidx].reshape(-1, 3)
        if isinstance(f, tuple):
            fv = f[0](flat) if s < 0 else f[1](flat)
        else:
            fv = f(flat)
        fv = np.asarray(fv, float).reshape(len(cidx), q)
        rel = pts[cidx, kidx] - group.anchor[cidx, None]
        gh = group.grads[cidx, si]                             # (M, 3, 3)
        basis = np.einsum("mqk,mjk->mqj", rel, gh)
        phi = group.D[cidx, 0][:, None, :] + np.einsum(
            "mqj,mjn->mqn", basis, group.D[cidx, 1:]
        )
        w = group.vols[cidx, kidx][:, None] * rule.weights[None, :]
        contrib = np.einsum("mq,mq,mqn->mn", w, fv, phi)
        np.add.at(b, cidx, contrib)
    return b


def boundary_mass(B: TraceSpace) -> np.ndarray:
    """Piecewise-linear mass matrix of the boundary triangulation."""
    n = B.n_dofs
    m = np.zeros((n, n))
    block = (np.ones((3, 3)) + np.eye(3)) / 12.0
    blocks = B.area[:, None, None] * block[None, :, :]
    np.add.at(m, (B.tris[:, :, None], B.tris[:, None, :]), blocks)
    return m


def stabilization_rayleigh(mesh: PolyMesh, cid: int) -> float:
    """Largest eigenvalue of the boundary mass against h_K times the face
    stabilization, restricted to the mean-zero subspace.

    Scale invariant; bounded by 5 * kappa^2 * N_T for cells satisfying the
    path condition.
    """
    B = trace_space(mesh, cid)
    s = B.h * stabilization_face(B)
    m = boundary_mass(B)
    weights = m.sum(axis=1)                      # M @ 1
    basis = scipy.linalg.null_space(weights[None, :])
    sm = basis.T @ m @ basis
    ss = basis.T @ s @ basis
    try:
        vals = scipy.linalg.eigh(sm, ss, eigvals_only=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError(
            f"cell {cid}: stabilization singular on the mean-zero subspace"
        ) from exc
    return float(vals[-1])
