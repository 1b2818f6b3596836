"""Verifiers for the geometric admissibility conditions and their constants.

The checks operate on a cell's boundary triangulation: the maximum-angle
condition, the path condition (every triangulation vertex must reach the
largest triangle through edges whose opposite angles are controlled), its
easier local variant (every triangle has a well-shaped edge neighbour), the
inscribed-ball ratio, the near-coplanarity of edge directions, and the strip
condition for a discrete interface.  All functions are pure and trivially
parallel over cells.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .mesh import PolyMesh, newell_normal

__all__ = [
    "tri_angles",
    "kappa",
    "degeneracy_threshold",
    "check_path_condition",
    "check_neighbor_condition",
    "neighbor_condition_eps",
    "poincare_bound",
    "inscribed_ratio",
    "degeneracy",
    "check_strip_condition",
    "strip_deviation",
    "tet_dihedral_angles",
    "tet_max_angle",
    "ShapeReport",
    "shape_report",
]


def tri_angles(p0, p1, p2):
    """Interior angles of a 3D triangle, returned as (min, max) in radians."""
    p0, p1, p2 = (np.asarray(p, float) for p in (p0, p1, p2))
    e0, e1, e2 = p1 - p0, p2 - p1, p0 - p2
    l0, l1, l2 = (np.linalg.norm(e) for e in (e0, e1, e2))
    h = max(l0, l1, l2)
    area = 0.5 * np.linalg.norm(np.cross(e0, -e2))
    if area <= 1e-14 * h * h:
        raise ValueError(f"degenerate triangle (area {area:.3e})")
    a0 = math.acos(max(-1.0, min(1.0, np.dot(e0, -e2) / (l0 * l2))))
    a1 = math.acos(max(-1.0, min(1.0, np.dot(-e0, e1) / (l0 * l1))))
    a2 = math.acos(max(-1.0, min(1.0, np.dot(-e1, e2) / (l1 * l2))))
    return min(a0, a1, a2), max(a0, a1, a2)


def kappa(theta_max: float, eps: float) -> float:
    """Constant bounding endpoint differences of linear functions along
    admissible edges: sqrt(2)/sin((pi - theta_max)/(2 + eps))."""
    if not 0.0 < theta_max < math.pi:
        raise ValueError("maximum angle must lie in (0, pi)")
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    return math.sqrt(2.0) / math.sin((math.pi - theta_max) / (2.0 + eps))


def degeneracy_threshold(theta_max: float) -> float:
    """Lower bound for the best edge-triple determinant of a tetrahedron
    whose face and dihedral angles stay below theta_max."""
    s = math.sin(theta_max)
    return min(math.sqrt(3.0) / 2.0, s) * min(math.cos(theta_max / 2.0), s) ** 2


# ---------------------------------------------------------------------------
# triangulation bookkeeping
# ---------------------------------------------------------------------------

def _tri_data(points, tris):
    """Per-triangle areas and per-vertex angles (same layout as tris)."""
    p = points[tris]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    ln = np.linalg.norm(e, axis=2)
    areas = 0.5 * np.linalg.norm(np.cross(e[:, 0], -e[:, 2]), axis=1)
    # angle at local vertex k is between edges k and k-1
    ang = np.empty_like(ln)
    for k in range(3):
        num = np.einsum("ij,ij->i", e[:, k], -e[:, k - 1])
        den = ln[:, k] * ln[:, k - 1]
        ang[:, k] = np.arccos(np.clip(num / den, -1.0, 1.0))
    return areas, ang


def _admissible_edges(tris, angles, eps):
    """Edges with an opposite angle within (1+eps) of its triangle's minimum."""
    theta_min = angles.min(axis=1)
    adm = set()
    seen = {}
    for t in range(len(tris)):
        for k in range(3):
            a, b = int(tris[t, (k + 1) % 3]), int(tris[t, (k + 2) % 3])
            e = (a, b) if a < b else (b, a)
            ok = angles[t, k] <= (1.0 + eps) * theta_min[t] + 1e-14
            seen.setdefault(e, False)
            seen[e] = seen[e] or ok
            if seen[e]:
                adm.add(e)
    return adm, set(seen) - adm


def path_condition(points, tris, eps):
    """Path check on a raw triangle set.

    Marks an edge admissible when one of its opposite angles theta_e in an
    adjacent triangle T satisfies theta_e <= (1 + eps) * theta_min(T), then
    searches breadth-first from the vertices of the largest triangle.

    Returns (ok, paths, inadmissible_edges); paths maps every reached vertex
    to a vertex chain ending in the largest triangle.
    """
    tris = np.asarray(tris, np.int64).reshape(-1, 3)
    areas, angles = _tri_data(points, tris)
    t_max = int(np.argmax(areas))  # ties: lowest index wins (argmax does)
    adm, inadm = _admissible_edges(tris, angles, eps)
    graph: dict = {}
    for a, b in adm:
        graph.setdefault(a, []).append(b)
        graph.setdefault(b, []).append(a)
    start = [int(v) for v in tris[t_max]]
    pred = {v: v for v in start}
    queue = deque(start)
    while queue:
        v = queue.popleft()
        for w in sorted(graph.get(v, ())):
            if w not in pred:
                pred[w] = v
                queue.append(w)
    verts = np.unique(tris)
    paths = {}
    for v in verts:
        v = int(v)
        if v not in pred:
            continue
        chain = [v]
        while pred[chain[-1]] != chain[-1]:
            chain.append(pred[chain[-1]])
        paths[v] = chain
    ok = len(paths) == len(verts)
    return ok, paths, inadm


def check_path_condition(mesh: PolyMesh, cid: int, eps: float):
    """Path check over a cell's boundary triangulation: (ok, witness paths)."""
    ok, paths, _ = path_condition(mesh.vertices, mesh.cell_tris(cid), eps)
    return ok, paths


def neighbor_condition_eps(theta_min: float, theta_max: float, rho: float) -> float:
    """Path-condition eps implied by the local neighbour condition."""
    return theta_max / math.asin(rho * math.sin(theta_min) * math.sin(theta_max))


def check_neighbor_condition(mesh: PolyMesh, cid: int, theta_min: float, rho: float):
    """Local variant: every triangle must share an edge with some triangle
    (possibly itself) of minimum angle >= theta_min and diameter >= rho
    times its own.  Returns (ok, eps) with the implied path-condition eps.
    """
    if not 0.0 < theta_min <= math.pi / 3.0:
        raise ValueError("theta_min must lie in (0, pi/3]")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    tris = mesh.cell_tris(cid)
    _, angles = _tri_data(mesh.vertices, tris)
    p = mesh.vertices[tris]
    diam = np.maximum(
        np.maximum(
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        ),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    )
    theta = angles.min(axis=1)
    theta_cap = angles.max()
    by_edge: dict = {}
    for t in range(len(tris)):
        for k in range(3):
            a, b = int(tris[t, (k + 1) % 3]), int(tris[t, (k + 2) % 3])
            by_edge.setdefault((min(a, b), max(a, b)), []).append(t)
    ok = True
    for t in range(len(tris)):
        good = False
        for k in range(3):
            a, b = int(tris[t, (k + 1) % 3]), int(tris[t, (k + 2) % 3])
            for s in by_edge[(min(a, b), max(a, b))]:
                if theta[s] >= theta_min - 1e-14 and diam[s] >= rho * diam[t] - 1e-14:
                    good = True
                    break
            if good:
                break
        if not good:
            ok = False
            break
    return ok, (neighbor_condition_eps(theta_min, theta_cap, rho) if ok else math.inf)


def poincare_bound(mesh: PolyMesh, cid: int, eps: float) -> float:
    """sqrt(5) * kappa * h_K * sqrt(N_T) for a cell passing the path check."""
    ok, _ = check_path_condition(mesh, cid, eps)
    if not ok:
        raise ValueError(f"cell {cid} fails the path condition at eps={eps}")
    tris = mesh.cell_tris(cid)
    _, angles = _tri_data(mesh.vertices, tris)
    k = kappa(float(angles.max()), eps)
    return math.sqrt(5.0) * k * mesh.cell_h[cid] * math.sqrt(len(tris))


# ---------------------------------------------------------------------------
# inscribed ball
# ---------------------------------------------------------------------------

def _point_tri_dists(p, tp):
    """Distances from one point to triangles given as (m, 3, 3)."""
    a, b, c = tp[:, 0], tp[:, 1], tp[:, 2]
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=1)
    nn = np.where(nn > 0, nn, 1.0)
    nu = n / nn[:, None]
    # orthogonal projection, then barycentric inside test
    d = np.einsum("ij,ij->i", p - a, nu)
    q = p - d[:, None] * nu
    v0, v1, v2 = b - a, c - a, q - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    den = np.where(np.abs(den) > 0, den, 1.0)
    u = (d11 * d20 - d01 * d21) / den
    v = (d00 * d21 - d01 * d20) / den
    inside = (u >= 0) & (v >= 0) & (u + v <= 1)
    dist = np.abs(d)

    def seg(p0, p1):
        t = np.einsum("ij,ij->i", p - p0, p1 - p0)
        L = np.einsum("ij,ij->i", p1 - p0, p1 - p0)
        t = np.clip(t / np.where(L > 0, L, 1.0), 0.0, 1.0)
        proj = p0 + t[:, None] * (p1 - p0)
        return np.linalg.norm(p - proj, axis=1)

    dedge = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    return np.where(inside, dist, dedge)


def inscribed_ratio(mesh: PolyMesh, cid: int) -> float:
    """Certified lower bound on (largest inscribed ball radius) / h_K.

    Starts from the sub-tetrahedra barycentres and refines the best one by a
    shrinking coordinate search; steps are capped below the current clearance
    so every iterate stays interior, which keeps the bound valid.
    """
    cell = mesh.cells[cid]
    tp = mesh.vertices[mesh.cell_tris(cid)]
    seeds = mesh.vertices[cell.subtets].mean(axis=1)
    dists = np.array([_point_tri_dists(s, tp).min() for s in seeds])
    k = int(np.argmax(dists))
    best_p, best_d = seeds[k], float(dists[k])
    h = mesh.cell_h[cid]
    step = h / 4.0
    for _ in range(20):
        improved = False
        for axis in range(3):
            for sgn in (1.0, -1.0):
                delta = min(step, 0.9 * best_d)
                if delta <= 0:
                    break
                cand = best_p.copy()
                cand[axis] += sgn * delta
                d = float(_point_tri_dists(cand, tp).min())
                if d > best_d:
                    best_p, best_d = cand, d
                    improved = True
        if not improved:
            step *= 0.5
    return best_d / h


# ---------------------------------------------------------------------------
# edge-direction degeneracy
# ---------------------------------------------------------------------------

def degeneracy(mesh: PolyMesh, cid: int):
    """Best |det| over unit-direction triples of cell edges, and the
    threshold evaluated at the cell's boundary maximum angle."""
    edges = mesh.cell_edges(cid)
    if len(edges) < 3:
        raise ValueError(f"cell {cid} has fewer than 3 edges")
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    d = d / np.linalg.norm(d, axis=1)[:, None]
    idx = np.array(list(combinations(range(len(edges)), 3)))
    mats = d[idx]  # (C, 3, 3)
    best = float(np.abs(np.linalg.det(mats)).max())
    _, angles = _tri_data(mesh.vertices, mesh.cell_tris(cid))
    return best, degeneracy_threshold(float(angles.max()))


# ---------------------------------------------------------------------------
# interface strip condition
# ---------------------------------------------------------------------------

_BARY10 = np.array(
    [
        [1, 0, 0], [0, 1, 0], [0, 0, 1],
        [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5],
        [1 / 3, 1 / 3, 1 / 3],
        [2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3],
    ]
)


def strip_deviation(levelset, mesh: PolyMesh) -> float:
    """max |phi| / |grad phi| sampled on the discrete interface polygons."""
    worst = 0.0
    for cid, cell in enumerate(mesh.cells):
        if cell.interface is None:
            continue
        loop = cell.interface
        pts = mesh.vertices[np.asarray(loop)]
        for k in range(1, len(loop) - 1):
            tri = np.stack([pts[0], pts[k], pts[k + 1]])
            samples = _BARY10 @ tri
            phi = np.asarray(levelset(samples), float)
            grad = np.asarray(levelset.gradient(samples), float)
            gn = np.linalg.norm(grad, axis=1)
            if np.any(gn < 1e-8):
                raise ValueError(f"level-set gradient vanishes near cell {cid}")
            worst = max(worst, float(np.max(np.abs(phi) / gn)))
    return worst


def check_strip_condition(levelset, mesh: PolyMesh, C: float) -> bool:
    """True when the discrete interface stays within C*h^2 of the zero set."""
    return strip_deviation(levelset, mesh) <= C * mesh.h**2


# ---------------------------------------------------------------------------
# tetrahedron angle helpers
# ---------------------------------------------------------------------------

def tet_dihedral_angles(p) -> np.ndarray:
    """The six interior dihedral angles of a tetrahedron (4, 3) -> (6,)."""
    p = np.asarray(p, float)
    out = []
    for (i, j) in combinations(range(4), 2):
        k, l = [m for m in range(4) if m not in (i, j)]
        e = p[j] - p[i]
        e = e / np.linalg.norm(e)
        v1 = p[k] - p[i]
        v1 = v1 - (v1 @ e) * e
        v2 = p[l] - p[i]
        v2 = v2 - (v2 @ e) * e
        c = v1 @ v2 / (np.linalg.norm(v1) * np.linalg.norm(v2))
        out.append(math.acos(max(-1.0, min(1.0, c))))
    return np.asarray(out)


def tet_max_angle(p) -> float:
    """Largest angle among a tetrahedron's face angles and dihedral angles."""
    p = np.asarray(p, float)
    worst = max(tet_dihedral_angles(p))
    for f in combinations(range(4), 3):
        worst = max(worst, tri_angles(p[f[0]], p[f[1]], p[f[2]])[1])
    return worst


# ---------------------------------------------------------------------------
# per-cell report
# ---------------------------------------------------------------------------

@dataclass
class ShapeReport:
    """Geometry admissibility summary for one cell."""

    cell: int
    theta_max: float
    theta_min: float
    n_tris: int
    eps: float
    path_ok: bool
    neighbor_ok: bool
    neighbor_eps: float
    kappa: float
    poincare: Optional[float]
    inscribed_ratio: float
    edge_det: float
    det_threshold: float
    paths: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        d = {
            "cell": self.cell,
            "theta_max": self.theta_max,
            "theta_min": self.theta_min,
            "n_tris": self.n_tris,
            "eps": self.eps,
            "path_ok": self.path_ok,
            "neighbor_ok": self.neighbor_ok,
            "neighbor_eps": None if math.isinf(self.neighbor_eps) else self.neighbor_eps,
            "kappa": self.kappa,
            "poincare": self.poincare,
            "inscribed_ratio": self.inscribed_ratio,
            "edge_det": self.edge_det,
            "det_threshold": self.det_threshold,
            "paths": {str(k): v for k, v in self.paths.items()},
        }
        return d


def shape_report(
    mesh: PolyMesh,
    cid: int,
    eps: float = 1.0,
    theta_min: float = math.pi / 6.0,
    rho: float = 0.5,
) -> ShapeReport:
    """Run every per-cell check and collect the explicit constants."""
    tris = mesh.cell_tris(cid)
    _, angles = _tri_data(mesh.vertices, tris)
    th_max, th_min = float(angles.max()), float(angles.min())
    ok, paths, _ = path_condition(mesh.vertices, tris, eps)
    n_ok, n_eps = check_neighbor_condition(mesh, cid, theta_min, rho)
    k = kappa(th_max, eps)
    poin = (
        math.sqrt(5.0) * k * mesh.cell_h[cid] * math.sqrt(len(tris)) if ok else None
    )
    det, thr = degeneracy(mesh, cid)
    return ShapeReport(
        cell=cid,
        theta_max=th_max,
        theta_min=th_min,
        n_tris=len(tris),
        eps=eps,
        path_ok=ok,
        neighbor_ok=n_ok,
        neighbor_eps=n_eps,
        kappa=k,
        poincare=poin,
        inscribed_ratio=inscribed_ratio(mesh, cid),
        edge_det=det,
        det_threshold=thr,
        paths=paths,
    )
