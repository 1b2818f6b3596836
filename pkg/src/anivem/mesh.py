"""Polyhedral mesh data model.

A :class:`PolyMesh` stores vertices, faces and cells.  Every face carries a
triangulation of its polygon; the triangulation is stored once per face and is
therefore automatically shared by the two adjacent cells, which makes the
piecewise-linear skeleton trace space globally conforming.  Every cell carries
an explicit list of sub-tetrahedra that tile it exactly; volume quadrature
never re-derives a decomposition (cells may be non-star-convex, so a generic
fan decomposition would be unsafe).

Degrees of freedom are the triangulation vertices on the mesh skeleton.  A
mesh may contain additional vertices (e.g. interior coning points used by
sub-tetrahedra) that are not DoFs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "MeshFormatError",
    "NonPlanarFaceError",
    "SelfIntersectingFaceError",
    "Face",
    "Cell",
    "PolyMesh",
    "ValidationReport",
    "triangulate_face",
    "load_json",
    "save_json",
    "export_vtk",
]


class MeshFormatError(ValueError):
    """Raised when a mesh file violates the JSON schema."""


class NonPlanarFaceError(ValueError):
    """Raised when a polygon handed to the triangulator is not planar."""


class SelfIntersectingFaceError(ValueError):
    """Raised when a polygon handed to the triangulator self-intersects."""


TAG_NAMES = {1: "plus", -1: "minus", 0: "interface"}
TAG_VALUES = {v: k for k, v in TAG_NAMES.items()}


@dataclass
class Face:
    """Planar polygonal face with its boundary triangulation.

    ``loop`` is the ordered polygon boundary (global vertex ids); ``tris``
    is an (m, 3) array of global vertex ids oriented consistently with the
    loop.  ``cells`` holds the two adjacent cell ids: slot 0 is the cell for
    which the stored orientation is outward, slot 1 the flipped one; -1 marks
    the exterior.
    """

    loop: list
    tris: np.ndarray
    cells: list = field(default_factory=lambda: [-1, -1])

    def __post_init__(self):
        self.loop = [int(v) for v in self.loop]
        self.tris = np.asarray(self.tris, dtype=np.int64).reshape(-1, 3)
        self.cells = [int(c) for c in self.cells]


@dataclass
class Cell:
    """Polyhedral cell: oriented face list plus a sub-tetra decomposition.

    ``faces`` is a list of ``(face_id, flip)`` pairs; ``flip`` is True when
    the face's stored orientation points into the cell.  ``subtets`` is a
    (k, 4) array of vertex ids, positively oriented, tiling the cell;
    ``subtet_tags`` assigns each to the plus (+1) or minus (-1) material.
    Interface cells additionally store the polygon along which the two
    materials meet, ordered so its normal points from minus to plus.
    """

    faces: list
    tag: str = "plus"
    subtets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))
    subtet_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    interface: Optional[list] = None

    def __post_init__(self):
        self.faces = [(int(f), bool(s)) for f, s in self.faces]
        self.subtets = np.asarray(self.subtets, dtype=np.int64).reshape(-1, 4)
        self.subtet_tags = np.asarray(self.subtet_tags, dtype=np.int8).reshape(-1)
        if self.interface is not None:
            self.interface = [int(v) for v in self.interface]


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)

    def __str__(self) -> str:
        if self.ok:
            return "mesh ok"
        return "\n".join(self.violations)


# ---------------------------------------------------------------------------
# basic polygon geometry
# ---------------------------------------------------------------------------

def newell_normal(pts: np.ndarray) -> np.ndarray:
    """Area-weighted (Newell) normal of a closed 3D polygon.

    Computed about the vertex mean; without the translation the cross
    products are O(|x|^2) and cancel catastrophically for small polygons
    far from the origin.
    """
    p = pts - pts.mean(axis=0)
    q = np.roll(p, -1, axis=0)
    n = np.sum(np.cross(p, q), axis=0)
    return 0.5 * n


def polygon_area(pts: np.ndarray) -> float:
    return float(np.linalg.norm(newell_normal(pts)))


def tri_area_normal(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    a = np.linalg.norm(n, axis=-1)
    return 0.5 * a, n


def plane_frame(normal: np.ndarray) -> tuple:
    """Two orthonormal in-plane axes for a unit normal."""
    a = np.array([1.0, 0.0, 0.0])
    if abs(normal @ a) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    t1 = a - (a @ normal) * normal
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    return t1, t2


def _segments_properly_intersect(a, b, c, d) -> bool:
    # 2D proper intersection test (shared endpoints do not count)
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


def _point_in_polygon(pt, poly2d) -> bool:
    # ray casting; boundary points count as inside
    x, y = pt
    inside = False
    n = len(poly2d)
    for i in range(n):
        x1, y1 = poly2d[i]
        x2, y2 = poly2d[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def max_tri_angle(p0, p1, p2) -> float:
    v0 = p1 - p0
    v1 = p2 - p1
    v2 = p0 - p2
    l0, l1, l2 = (np.linalg.norm(v) for v in (v0, v1, v2))
    c0 = np.clip(np.dot(v0, -v2) / (l0 * l2), -1.0, 1.0)
    c1 = np.clip(np.dot(-v0, v1) / (l0 * l1), -1.0, 1.0)
    c2 = np.clip(np.dot(-v1, v2) / (l1 * l2), -1.0, 1.0)
    return float(np.max(np.arccos([c0, c1, c2])))


# ---------------------------------------------------------------------------
# face triangulation
# ---------------------------------------------------------------------------

def _fan_candidates(part, coords2d, normal2d_sign):
    """All valid fan triangulations of a simple sub-polygon.

    Yields (max_angle, apex_position, tris).  A fan is valid when every
    triangle is positively oriented and no fan edge crosses a polygon edge.
    """
    m = len(part)
    poly = [coords2d[i] for i in range(m)]
    edges = [(i, (i + 1) % m) for i in range(m)]
    for a in range(m):
        tris = []
        ok = True
        worst = 0.0
        for k in range(m - 2):
            i, j = (a + 1 + k) % m, (a + 2 + k) % m
            p0, p1, p2 = poly[a], poly[i], poly[j]
            area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
            if area2 * normal2d_sign <= 0:
                ok = False
                break
            # fan edge (a, j) must not cross any polygon edge
            for (e0, e1) in edges:
                if a in (e0, e1) or j in (e0, e1):
                    continue
                if _segments_properly_intersect(poly[a], poly[j], poly[e0], poly[e1]):
                    ok = False
                    break
            if not ok:
                break
            cen = ((p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0)
            if not _point_in_polygon(cen, poly):
                ok = False
                break
            tris.append((a, i, j))
        if ok and tris:
            pts3 = [np.array([poly[t][0], poly[t][1], 0.0]) for t in range(m)]
            worst = max(max_tri_angle(pts3[t[0]], pts3[t[1]], pts3[t[2]]) for t in tris)
            yield worst, a, tris


def _fan(part_ids, pts2d):
    """Best-apex fan of a simple polygon given as 2D points; returns id triples."""
    best = None
    for worst, apex, tris in _fan_candidates(part_ids, pts2d, 1.0):
        if best is None or worst < best[0] - 1e-14:
            best = (worst, apex, tris)
    if best is None:
        raise SelfIntersectingFaceError("no valid fan triangulation found")
    return [(part_ids[i], part_ids[j], part_ids[k]) for i, j, k in best[2]]


def triangulate_face(loop: Sequence[int], coords: np.ndarray, trace=None) -> np.ndarray:
    """Triangulate a simple planar polygon by a best-apex fan.

    The apex is chosen by brute force over the polygon vertices to minimise
    the maximum triangle angle.  When ``trace`` (a pair of loop vertex ids)
    is given, the chord splits the polygon first and each part is fanned
    separately, so no triangle straddles the trace.

    Parameters
    ----------
    loop : sequence of int
        Ordered polygon boundary, at most 8 global vertex ids.
    coords : (n, 3) array
        Global vertex coordinates.
    trace : (int, int), optional
        Chord given by two vertex ids contained in ``loop``.

    Returns
    -------
    (m, 3) int array of vertex-id triangles, oriented like the loop.
    """
    loop = [int(v) for v in loop]
    if len(loop) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    if len(loop) > 8:
        raise ValueError("polygon has more than 8 vertices")
    pts = np.asarray(coords, float)[loop]
    diam = max(np.ptp(pts, axis=0).max(), 1e-300)
    n = newell_normal(pts)
    nn = np.linalg.norm(n)
    if nn <= 1e-14 * diam * diam:
        raise SelfIntersectingFaceError("degenerate polygon (zero area)")
    n = n / nn
    centroid = pts.mean(axis=0)
    dev = np.abs((pts - centroid) @ n)
    # noise floor: double-precision coordinates carry eps * |x| jitter
    tol = max(1e-10 * diam, 64.0 * np.finfo(float).eps * np.abs(pts).max())
    if dev.max() > tol:
        raise NonPlanarFaceError(
            f"polygon deviates from plane by {dev.max():.3e} (tol {tol:.3e})"
        )
    t1, t2 = plane_frame(n)
    pts2d = np.column_stack(((pts - centroid) @ t1, (pts - centroid) @ t2))
    m = len(loop)
    for i in range(m):
        for j in range(i + 1, m):
            if j in (i, (i + 1) % m, (i - 1) % m) or (i == 0 and j == m - 1):
                continue
            if _segments_properly_intersect(
                pts2d[i], pts2d[(i + 1) % m], pts2d[j], pts2d[(j + 1) % m]
            ):
                raise SelfIntersectingFaceError("polygon boundary self-intersects")

    coord2d = {loop[i]: pts2d[i] for i in range(m)}

    def fan_ids(ids):
        local = np.array([coord2d[v] for v in ids])
        return _fan(ids, local)

    if trace is None:
        tris = fan_ids(loop)
    else:
        a, b = int(trace[0]), int(trace[1])
        if a not in loop or b not in loop:
            raise ValueError("trace endpoints must be loop vertices")
        ia, ib = loop.index(a), loop.index(b)
        if ia == ib or (ib - ia) % m == 1 or (ia - ib) % m == 1:
            # chord along an existing edge: nothing to split
            tris = fan_ids(loop)
        else:
            part1 = [loop[(ia + k) % m] for k in range((ib - ia) % m + 1)]
            part2 = [loop[(ib + k) % m] for k in range((ia - ib) % m + 1)]
            tris = fan_ids(part1) + fan_ids(part2)
    return np.asarray(tris, dtype=np.int64)


# ---------------------------------------------------------------------------
# the mesh
# ---------------------------------------------------------------------------

class PolyMesh:
    """Immutable polyhedral mesh; safe for concurrent read once built."""

    def __init__(self, vertices, faces, cells, boundary_dofs=None):
        self.vertices = np.ascontiguousarray(np.asarray(vertices, float).reshape(-1, 3))
        self.faces = list(faces)
        self.cells = list(cells)
        self._cell_cache: dict = {}
        self._finalize(boundary_dofs)

    # -- construction helpers ------------------------------------------------

    def _finalize(self, boundary_dofs):
        ids = [f.tris.ravel() for f in self.faces if f.tris.size]
        skel = np.unique(np.concatenate(ids)) if ids else np.zeros(0, np.int64)
        self.dof_vertices = skel
        self.dof_index = np.full(len(self.vertices), -1, dtype=np.int64)
        self.dof_index[skel] = np.arange(len(skel))
        self.cell_h = np.array([self._diameter(c) for c in range(len(self.cells))])
        self.h = float(self.cell_h.max()) if len(self.cells) else 0.0
        if boundary_dofs is None:
            self.boundary_dofs = self._boundary_dofs_from_faces()
        else:
            self.boundary_dofs = np.unique(np.asarray(boundary_dofs, np.int64))

    def _boundary_dofs_from_faces(self):
        bnd = [f.tris.ravel() for f in self.faces if -1 in f.cells]
        return np.unique(np.concatenate(bnd)) if bnd else np.zeros(0, np.int64)

    def _diameter(self, cid: int) -> float:
        vids = self.cell_vertex_ids(cid)
        pts = self.vertices[vids]
        # diameter of a polyhedron is attained at boundary vertices
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.max()))

    # -- accessors -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_vertices)

    def cell_vertex_ids(self, cid: int) -> np.ndarray:
        """Unique skeleton vertex ids of a cell's boundary triangulation."""
        key = ("verts", cid)
        if key not in self._cell_cache:
            tris = [self.faces[f].tris.ravel() for f, _ in self.cells[cid].faces]
            self._cell_cache[key] = np.unique(np.concatenate(tris))
        return self._cell_cache[key]

    def cell_tris(self, cid: int):
        """Oriented boundary triangles of a cell: (m, 3) ids, outward order."""
        key = ("tris", cid)
        if key not in self._cell_cache:
            out = []
            for fid, flip in self.cells[cid].faces:
                t = self.faces[fid].tris
                out.append(t[:, ::-1] if flip else t)
            self._cell_cache[key] = np.concatenate(out, axis=0)
        return self._cell_cache[key]

    def cell_volume(self, cid: int) -> float:
        tets = self.cells[cid].subtets
        return float(np.abs(_signed_tet_volumes(self.vertices, tets)).sum())

    def cell_edges(self, cid: int) -> np.ndarray:
        """Geometric edges of the polyhedron (from face loops), as id pairs."""
        key = ("edges", cid)
        if key not in self._cell_cache:
            seen = set()
            for fid, _ in self.cells[cid].faces:
                lp = self.faces[fid].loop
                for i in range(len(lp)):
                    a, b = lp[i], lp[(i + 1) % len(lp)]
                    seen.add((a, b) if a < b else (b, a))
            self._cell_cache[key] = np.array(sorted(seen), dtype=np.int64)
        return self._cell_cache[key]

    def total_volume(self) -> float:
        if not self.cells:
            return 0.0
        tets = np.concatenate([c.subtets for c in self.cells], axis=0)
        return float(np.abs(_signed_tet_volumes(self.vertices, tets)).sum())

    def interface_frame(self, cid: int):
        """(normal, t1, t2, anchor) of an interface cell's dividing polygon.

        The normal points from the minus material to the plus material; t1 is
        the normalised projection of the global x-axis onto the plane (y-axis
        when x is parallel to the normal) and t2 = n x t1.
        """
        cell = self.cells[cid]
        if cell.interface is None:
            raise ValueError(f"cell {cid} has no interface polygon")
        pts = self.vertices[np.asarray(cell.interface)]
        n = newell_normal(pts)
        n = n / np.linalg.norm(n)
        t1, t2 = plane_frame(n)
        return n, t1, t2, pts.mean(axis=0)

    # -- validation ----------------------------------------------------------

    def validate(self) -> ValidationReport:
        """Check every structural and geometric invariant; report violations."""
        rep = ValidationReport()
        nv = len(self.vertices)
        if not np.all(np.isfinite(self.vertices)):
            rep.add("non-finite vertex coordinates")

        seen_loops = {}
        for fid, face in enumerate(self.faces):
            self._validate_face(fid, face, nv, rep)
            key = tuple(sorted(face.loop))
            if key in seen_loops:
                rep.add(
                    f"face {fid} not shared: duplicates face {seen_loops[key]} "
                    "instead of being stored once for both cells"
                )
            else:
                seen_loops[key] = fid

        for fid, face in enumerate(self.faces):
            for slot, cid in enumerate(face.cells):
                if cid == -1:
                    continue
                if not (0 <= cid < len(self.cells)):
                    rep.add(f"face {fid}: cell reference {cid} out of range")
                    continue
                want = (fid, bool(slot))
                if want not in self.cells[cid].faces:
                    rep.add(f"face {fid}: cell {cid} does not reference it with flip={bool(slot)}")
            if face.cells[0] == -1 and face.cells[1] == -1:
                rep.add(f"face {fid}: no adjacent cell")

        for cid in range(len(self.cells)):
            self._validate_cell(cid, rep)

        h = self.cell_h.max() if len(self.cells) else 0.0
        if abs(h - self.h) > 1e-12 * max(h, 1.0):
            rep.add(f"cached h={self.h} differs from recomputed {h}")

        bd = self._boundary_dofs_from_faces()
        if not np.array_equal(bd, self.boundary_dofs):
            rep.add("boundary DoF marks do not match boundary-face triangulation vertices")
        return rep

    def _validate_face(self, fid, face, nv, rep):
        if len(face.loop) < 3:
            rep.add(f"face {fid}: loop has fewer than 3 vertices")
            return
        if face.tris.size == 0:
            rep.add(f"face {fid}: empty triangulation")
            return
        allids = np.concatenate([np.asarray(face.loop), face.tris.ravel()])
        if allids.min() < 0 or allids.max() >= nv:
            rep.add(f"face {fid}: vertex id out of range")
            return
        for t in face.tris:
            if len(set(t.tolist())) != 3:
                rep.add(f"face {fid}: duplicate vertex ids in a triangle {t.tolist()}")
                return
        # work in a frame translated to the first loop vertex: keeps the area
        # comparison meaningful for faces far from the origin
        origin = self.vertices[face.loop[0]]
        lp = self.vertices[face.loop] - origin
        diam = max(np.ptp(lp, axis=0).max(), 1e-300)
        nrm = newell_normal(lp)
        area = np.linalg.norm(nrm)
        if area <= 0:
            rep.add(f"face {fid}: zero polygon area")
            return
        nrm = nrm / area
        tp = self.vertices[face.tris] - origin
        dev = np.abs((tp - lp[0]) @ nrm).max()
        if dev > 1e-9 * diam:
            rep.add(f"face {fid}: triangle vertices off the face plane by {dev:.2e}")
        ta, tn = tri_area_normal(tp[:, 0], tp[:, 1], tp[:, 2])
        if np.any(tn @ nrm <= 0):
            rep.add(f"face {fid}: triangle orientation disagrees with loop orientation")
        if abs(ta.sum() - area) > 1e-12 * area:
            rep.add(
                f"face {fid} area mismatch: triangles sum to {ta.sum():.16g}, "
                f"polygon area is {area:.16g}"
            )
        # interior edges must be shared by exactly two triangles, boundary
        # (consecutive-loop) edges by exactly one
        loop_edges = set()
        m = len(face.loop)
        for i in range(m):
            a, b = face.loop[i], face.loop[(i + 1) % m]
            loop_edges.add((min(a, b), max(a, b)))
        count: dict = {}
        for t in face.tris:
            for k in range(3):
                a, b = int(t[k]), int(t[(k + 1) % 3])
                e = (min(a, b), max(a, b))
                count[e] = count.get(e, 0) + 1
        for e, c in count.items():
            want = 1 if e in loop_edges else 2
            if c != want:
                rep.add(f"face {fid}: edge {e} appears {c} times (expected {want})")
                break

    def _validate_cell(self, cid, rep):
        cell = self.cells[cid]
        if not cell.faces:
            rep.add(f"cell {cid}: no faces")
            return
        # closed, consistently oriented surface: every directed edge occurs
        # exactly once and its reverse exactly once
        directed: dict = {}
        for fid, flip in cell.faces:
            tris = self.faces[fid].tris
            if flip:
                tris = tris[:, ::-1]
            for t in tris:
                for k in range(3):
                    e = (int(t[k]), int(t[(k + 1) % 3]))
                    directed[e] = directed.get(e, 0) + 1
        for (a, b), c in directed.items():
            if c != 1 or directed.get((b, a), 0) != 1:
                rep.add(f"cell {cid}: boundary not watertight at edge ({a},{b})")
                break

        if cell.subtets.size == 0:
            rep.add(f"cell {cid}: no sub-tetrahedra")
            return
        origin = self.vertices[self.faces[cell.faces[0][0]].loop[0]]
        shifted = self.vertices - origin  # shared frame for both volume paths
        sv = _signed_tet_volumes(shifted, cell.subtets)
        if np.any(sv <= 0):
            rep.add(f"cell {cid}: sub-tetrahedron with non-positive volume")
        vol_tets = np.abs(sv).sum()
        vol_bnd = 0.0
        for fid, flip in cell.faces:
            tris = self.faces[fid].tris
            if flip:
                tris = tris[:, ::-1]
            p = shifted[tris]
            vol_bnd += np.einsum("ij,ij->", p[:, 0], np.cross(p[:, 1], p[:, 2])) / 6.0
        if abs(vol_tets - vol_bnd) > 1e-12 * max(abs(vol_bnd), 1e-300):
            rep.add(
                f"cell {cid}: sub-tetrahedra volume {vol_tets:.16g} != "
                f"cell volume {vol_bnd:.16g}"
            )

        if cell.tag == "interface":
            if cell.interface is None or len(cell.interface) < 3:
                rep.add(f"cell {cid}: interface cell without interface polygon")
            else:
                n, _, _, x0 = self.interface_frame(cid)
                tol = 1e-9 * self.cell_h[cid]
                cen = self.vertices[cell.subtets].mean(axis=1)
                side = (cen - x0) @ n
                bad = (cell.subtet_tags * side) < -tol
                if np.any(bad):
                    rep.add(f"cell {cid}: sub-tetrahedron on the wrong side of the interface")
        else:
            want = TAG_VALUES.get(cell.tag, 1)
            if np.any(cell.subtet_tags != want):
                rep.add(f"cell {cid}: sub-tetrahedron tags disagree with cell tag '{cell.tag}'")


def _signed_tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    if tets.size == 0:
        return np.zeros(0)
    p = vertices[tets]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------

def save_json(mesh: PolyMesh, path) -> None:
    """Write the mesh in the documented JSON schema (round-trip exact)."""
    doc = {
        "vertices": [[float(x), float(y), float(z)] for x, y, z in mesh.vertices],
        "faces": [
            {
                "loop": list(map(int, f.loop)),
                "tris": f.tris.tolist(),
                "cells": list(map(int, f.cells)),
            }
            for f in mesh.faces
        ],
        "cells": [],
        "boundary_dofs": mesh.boundary_dofs.tolist(),
    }
    for c in mesh.cells:
        entry = {
            "faces": [{"id": int(f), "flip": bool(s)} for f, s in c.faces],
            "tag": c.tag,
            "subtets": [
                {"v": list(map(int, t)), "tag": TAG_NAMES[int(s)]}
                for t, s in zip(c.subtets, c.subtet_tags)
            ],
        }
        if c.interface is not None:
            entry["interface"] = list(map(int, c.interface))
        doc["cells"].append(entry)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _expect(doc, key, kind, where):
    if key not in doc:
        raise MeshFormatError(f"{where}: missing key '{key}'")
    val = doc[key]
    if not isinstance(val, kind):
        raise MeshFormatError(f"{where}: key '{key}' has wrong type")
    return val


def load_json(path) -> PolyMesh:
    """Read a mesh from the documented JSON schema, with field diagnostics."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError(f"{path}: invalid JSON ({exc})") from exc
    verts = _expect(doc, "vertices", list, "mesh")
    raw_faces = _expect(doc, "faces", list, "mesh")
    raw_cells = _expect(doc, "cells", list, "mesh")
    bdofs = _expect(doc, "boundary_dofs", list, "mesh")
    nv = len(verts)
    for i, v in enumerate(verts):
        if not (isinstance(v, list) and len(v) == 3):
            raise MeshFormatError(f"vertices[{i}]: expected [x, y, z]")
    faces = []
    for i, rf in enumerate(raw_faces):
        where = f"faces[{i}]"
        loop = _expect(rf, "loop", list, where)
        tris = _expect(rf, "tris", list, where)
        cells = _expect(rf, "cells", list, where)
        if len(cells) != 2:
            raise MeshFormatError(f"{where}: 'cells' must have two entries")
        for t in tris:
            if not (isinstance(t, list) and len(t) == 3):
                raise MeshFormatError(f"{where}: triangle must have 3 vertex ids")
            if len(set(t)) != 3:
                raise MeshFormatError(f"{where}: duplicate vertex ids in a triangle")
            if min(t) < 0 or max(t) >= nv:
                raise MeshFormatError(f"{where}: triangle vertex id out of range")
        if loop and (min(loop) < 0 or max(loop) >= nv):
            raise MeshFormatError(f"{where}: loop vertex id out of range")
        faces.append(Face(loop=loop, tris=np.asarray(tris), cells=cells))
    cells = []
    for i, rc in enumerate(raw_cells):
        where = f"cells[{i}]"
        fl = _expect(rc, "faces", list, where)
        tag = _expect(rc, "tag", str, where)
        if tag not in TAG_VALUES:
            raise MeshFormatError(f"{where}: unknown tag '{tag}'")
        sts = _expect(rc, "subtets", list, where)
        fpairs = []
        for e in fl:
            fid = _expect(e, "id", int, where)
            if not (0 <= fid < len(faces)):
                raise MeshFormatError(f"{where}: face id {fid} out of range")
            fpairs.append((fid, bool(_expect(e, "flip", bool, where))))
        tets, tags = [], []
        for e in sts:
            v = _expect(e, "v", list, where)
            if len(v) != 4 or len(set(v)) != 4:
                raise MeshFormatError(f"{where}: subtet must have 4 distinct vertex ids")
            if min(v) < 0 or max(v) >= nv:
                raise MeshFormatError(f"{where}: subtet vertex id out of range")
            stag = _expect(e, "tag", str, where)
            if stag not in ("plus", "minus"):
                raise MeshFormatError(f"{where}: unknown subtet tag '{stag}'")
            tets.append(v)
            tags.append(TAG_VALUES[stag])
        iface = rc.get("interface")
        cells.append(
            Cell(
                faces=fpairs,
                tag=tag,
                subtets=np.asarray(tets).reshape(-1, 4),
                subtet_tags=np.asarray(tags, np.int8),
                interface=iface,
            )
        )
    return PolyMesh(np.asarray(verts, float), faces, cells, boundary_dofs=bdofs)


# ---------------------------------------------------------------------------
# VTK export
# ---------------------------------------------------------------------------

def export_vtk(mesh: PolyMesh, path, fields: Optional[dict] = None) -> None:
    """Write a legacy ASCII VTK unstructured-grid file.

    Polyhedral cells are emitted as their sub-tetrahedra together with a
    ``cell_id`` array so viewers can reassemble them.  Field arrays must be
    sized to the cell count (emitted per sub-tetrahedron) or to the DoF count
    (emitted per point, zero on non-DoF vertices).
    """
    fields = fields or {}
    cell_fields, point_fields = {}, {}
    for name, arr in fields.items():
        arr = np.asarray(arr, float).ravel()
        if arr.size == mesh.n_cells:
            cell_fields[name] = arr
        elif arr.size == mesh.n_dofs:
            point_fields[name] = arr
        else:
            raise ValueError(
                f"field '{name}' has size {arr.size}; expected cell count "
                f"{mesh.n_cells} or DoF count {mesh.n_dofs}"
            )
    tets = []
    owner = []
    mat = []
    for cid, c in enumerate(mesh.cells):
        for t, s in zip(c.subtets, c.subtet_tags):
            tets.append(t)
            owner.append(cid)
            mat.append(int(s))
    tets = np.asarray(tets, np.int64).reshape(-1, 4)
    owner = np.asarray(owner, np.int64)
    lines = [
        "# vtk DataFile Version 2.0",
        "anivem unstructured grid",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in mesh.vertices]
    lines.append(f"CELLS {len(tets)} {5 * len(tets)}")
    lines += [f"4 {t[0]} {t[1]} {t[2]} {t[3]}" for t in tets]
    lines.append(f"CELL_TYPES {len(tets)}")
    lines += ["10"] * len(tets)
    lines.append(f"CELL_DATA {len(tets)}")
    lines += ["SCALARS cell_id int 1", "LOOKUP_TABLE default"]
    lines += [str(c) for c in owner]
    lines += ["SCALARS material int 1", "LOOKUP_TABLE default"]
    lines += [str(m) for m in mat]
    for name, arr in cell_fields.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{arr[c]:.17g}" for c in owner]
    if point_fields:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, arr in point_fields.items():
            full = np.zeros(mesh.n_vertices)
            full[mesh.dof_vertices] = arr
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in full]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
