"""Generators for the anisotropic mesh classes and reference meshes.

Three families beyond the reference cube/tet meshes:

* ``cut_by_plane`` splits cuboid cells along an arbitrary plane (fitted cut
  cells, which may shrink to slivers);
* ``cut_by_levelset`` keeps tetrahedra crossed by a linear interface whole
  and equips them with two-sided sub-tetrahedra, interface-conforming face
  triangulations and the dividing polygon (unfitted cells);
* ``notch_mesh`` tiles the box with notched cubes plus their plug boxes
  (cells that contain a large ball but are not star convex to it).

All generators are deterministic and their outputs pass ``validate()``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Callable

import numpy as np

from .mesh import Cell, Face, PolyMesh, newell_normal, triangulate_face

__all__ = [
    "MeshGenError",
    "CutPlane",
    "LevelSet",
    "sphere_levelset",
    "plane_levelset",
    "cube_mesh",
    "tet_mesh",
    "cut_by_plane",
    "cut_by_levelset",
    "notch_element",
    "notch_mesh",
]


class MeshGenError(RuntimeError):
    """Raised when a generator cannot produce a valid mesh."""


@dataclass(frozen=True)
class CutPlane:
    """Plane normal . x = offset with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, float).reshape(3)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ValueError("zero plane normal")
        object.__setattr__(self, "normal", n / nn)
        object.__setattr__(self, "offset", float(self.offset) / nn)


@dataclass(frozen=True)
class LevelSet:
    """Callable level set with analytic gradient; negative inside the minus
    material."""

    func: Callable
    gradient: Callable

    def __call__(self, pts):
        return self.func(np.asarray(pts, float))


def sphere_levelset(center, r0: float) -> LevelSet:
    center = np.asarray(center, float)

    def phi(p):
        return np.linalg.norm(p - center, axis=-1) - r0

    def grad(p):
        d = p - center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.where(r > 0, r, 1.0)

    return LevelSet(phi, grad)


def plane_levelset(normal, offset: float) -> LevelSet:
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    off = float(offset) / np.linalg.norm(np.asarray(normal, float))

    def phi(p):
        return p @ n - off

    def grad(p):
        return np.broadcast_to(n, p.shape).copy()

    return LevelSet(phi, grad)


# ---------------------------------------------------------------------------
# incremental construction helper
# ---------------------------------------------------------------------------

class _Builder:
    def __init__(self):
        self.verts: list = []
        self._vmap: dict = {}
        self.faces: list = []
        self._fmap: dict = {}
        self.cells: list = []

    def vertex(self, x: float, y: float, z: float) -> int:
        key = (x, y, z)
        vid = self._vmap.get(key)
        if vid is None:
            vid = len(self.verts)
            self._vmap[key] = vid
            self.verts.append(key)
        return vid

    def face(self, loop, tris) -> int:
        key = tuple(sorted(loop))
        fid = self._fmap.get(key)
        if fid is None:
            fid = len(self.faces)
            self._fmap[key] = fid
            self.faces.append(Face(loop=list(loop), tris=np.asarray(tris)))
        return fid

    def rect(self, c0, c1, c2, c3) -> int:
        """Rectangle given as a CCW loop; split along the (c0, c2) diagonal."""
        return self.face([c0, c1, c2, c3], [[c0, c1, c2], [c0, c2, c3]])

    def add_cell(self, face_pairs, tag, subtets, subtet_tags, interface=None) -> int:
        cid = len(self.cells)
        self.cells.append(
            Cell(
                faces=face_pairs,
                tag=tag,
                subtets=np.asarray(subtets),
                subtet_tags=np.asarray(subtet_tags, np.int8),
                interface=interface,
            )
        )
        return cid

    def build(self) -> PolyMesh:
        for f in self.faces:
            f.cells = [-1, -1]
        for cid, cell in enumerate(self.cells):
            for fid, flip in cell.faces:
                self.faces[fid].cells[1 if flip else 0] = cid
        return PolyMesh(np.asarray(self.verts, float), self.faces, self.cells)


def _oriented(verts, tet):
    a, b, c, d = (np.asarray(verts[i], float) for i in tet)
    vol = np.dot(b - a, np.cross(c - a, d - a))
    if vol < 0:
        return (tet[0], tet[1], tet[3], tet[2])
    return tuple(tet)


_KUHN_PERMS = list(permutations(range(3)))


def _kuhn_tets(verts, corner):
    """Six tetrahedra of a box; ``corner[(ix, iy, iz)]`` are the vertex ids."""
    tets = []
    for perm in _KUHN_PERMS:
        path = [(0, 0, 0)]
        for axis in perm:
            nxt = list(path[-1])
            nxt[axis] = 1
            path.append(tuple(nxt))
        tets.append(_oriented(verts, tuple(corner[p] for p in path)))
    return tets


# ---------------------------------------------------------------------------
# reference meshes
# ---------------------------------------------------------------------------

def _grid_coords(n, box):
    (x0, y0, z0), (x1, y1, z1) = box
    xs = x0 + (x1 - x0) * np.arange(n + 1) / n
    ys = y0 + (y1 - y0) * np.arange(n + 1) / n
    zs = z0 + (z1 - z0) * np.arange(n + 1) / n
    return xs, ys, zs


def cube_mesh(n: int, box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> PolyMesh:
    """n^3 cuboid cells; faces split in two triangles, five sub-tets per cell.

    Face diagonals connect the corners of even grid-coordinate parity, which
    makes the alternating five-tet decompositions of neighbouring cells agree
    with the shared face triangulations.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    b = _Builder()
    xs, ys, zs = _grid_coords(n, box)
    vid = {}
    for i in range(n + 1):
        for j in range(n + 1):
            for k in range(n + 1):
                vid[i, j, k] = b.vertex(xs[i], ys[j], zs[k])

    def quad_face(corners, grid):
        # diagonal between the two even-parity corners
        par = [(sum(g) % 2) for g in grid]
        c = list(corners)
        if par[0] == 0:
            tris = [[c[0], c[1], c[2]], [c[0], c[2], c[3]]]
        else:
            tris = [[c[1], c[2], c[3]], [c[1], c[3], c[0]]]
        return b.face(c, tris)

    fx = {}
    for i in range(n + 1):
        for j in range(n):
            for k in range(n):
                g = [(i, j, k), (i, j + 1, k), (i, j + 1, k + 1), (i, j, k + 1)]
                fx[i, j, k] = quad_face([vid[t] for t in g], g)
    fy = {}
    for j in range(n + 1):
        for i in range(n):
            for k in range(n):
                g = [(i, j, k), (i, j, k + 1), (i + 1, j, k + 1), (i + 1, j, k)]
                fy[i, j, k] = quad_face([vid[t] for t in g], g)
    fz = {}
    for k in range(n + 1):
        for i in range(n):
            for j in range(n):
                g = [(i, j, k), (i + 1, j, k), (i + 1, j + 1, k), (i, j + 1, k)]
                fz[i, j, k] = quad_face([vid[t] for t in g], g)

    even_tets = [
        ((0, 0, 0), (1, 1, 0), (0, 1, 1), (1, 0, 1)),
        ((1, 0, 0), (0, 0, 0), (1, 0, 1), (1, 1, 0)),
        ((0, 1, 0), (0, 0, 0), (1, 1, 0), (0, 1, 1)),
        ((0, 0, 1), (0, 0, 0), (0, 1, 1), (1, 0, 1)),
        ((1, 1, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1)),
    ]
    odd_tets = [
        ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)),
        ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)),
        ((1, 1, 0), (1, 0, 0), (1, 1, 1), (0, 1, 0)),
        ((1, 0, 1), (1, 0, 0), (0, 0, 1), (1, 1, 1)),
        ((0, 1, 1), (0, 1, 0), (1, 1, 1), (0, 0, 1)),
    ]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                local = lambda c: vid[i + c[0], j + c[1], k + c[2]]
                pattern = even_tets if (i + j + k) % 2 == 0 else odd_tets
                tets = [tuple(local(c) for c in t) for t in pattern]
                fp = [
                    (fx[i, j, k], True), (fx[i + 1, j, k], False),
                    (fy[i, j, k], True), (fy[i, j + 1, k], False),
                    (fz[i, j, k], True), (fz[i, j, k + 1], False),
                ]
                b.add_cell(fp, "plus", tets, [1] * 5)
    return b.build()


_TET_FACES = [(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)]


def _mesh_from_tets(verts, tets) -> PolyMesh:
    faces = []
    fmap = {}
    cells = []
    for cid, tet in enumerate(tets):
        pairs = []
        for lf in _TET_FACES:
            tri = tuple(tet[v] for v in lf)
            key = tuple(sorted(tri))
            if key in fmap:
                fid = fmap[key]
                pairs.append((fid, True))
            else:
                fid = len(faces)
                fmap[key] = fid
                faces.append(Face(loop=list(tri), tris=np.asarray([tri])))
                pairs.append((fid, False))
        cells.append(
            Cell(faces=pairs, tag="plus", subtets=np.asarray([tet]), subtet_tags=[1])
        )
    for f in faces:
        f.cells = [-1, -1]
    for cid, cell in enumerate(cells):
        for fid, flip in cell.faces:
            faces[fid].cells[1 if flip else 0] = cid
    return PolyMesh(np.asarray(verts, float), faces, cells)


def tet_mesh(n: int, box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> PolyMesh:
    """Six tetrahedra per cube (Kuhn subdivision); conforming across cubes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    b = _Builder()
    xs, ys, zs = _grid_coords(n, box)
    vid = {}
    for i in range(n + 1):
        for j in range(n + 1):
            for k in range(n + 1):
                vid[i, j, k] = b.vertex(xs[i], ys[j], zs[k])
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                corner = {
                    (a, c, d): vid[i + a, j + c, k + d]
                    for a in (0, 1) for c in (0, 1) for d in (0, 1)
                }
                tets.extend(_kuhn_tets(b.verts, corner))
    return _mesh_from_tets(b.verts, tets)


# ---------------------------------------------------------------------------
# plane cuts (fitted)
# ---------------------------------------------------------------------------

def _split_loop(loop, signs, cut_vertex):
    """Split a polygon loop by vertex signs; returns (minus, plus, chord)."""
    minus, plus, chord = [], [], []
    m = len(loop)
    for i in range(m):
        a, bb = loop[i], loop[(i + 1) % m]
        sa, sb = signs[a], signs[bb]
        if sa <= 0:
            minus.append(a)
        if sa >= 0:
            plus.append(a)
        if sa == 0:
            chord.append(a)
        if sa * sb < 0:
            v = cut_vertex(a, bb)
            minus.append(v)
            plus.append(v)
            chord.append(v)
    chord = list(dict.fromkeys(chord))
    return minus, plus, chord


def cut_by_plane(mesh: PolyMesh, plane: CutPlane) -> PolyMesh:
    """Replace every cell crossed by the plane with its two halves.

    Sliced faces are re-triangulated with the cut trace as a chord (the two
    parts become separate faces shared with the matching half of the
    neighbouring cell), the planar cross-section becomes a new face, and each
    half is re-decomposed by coning its boundary triangles to its vertex
    centroid.  Halves thinner than 1e-12 of the cell volume are merged back.
    Returns the input unchanged when the plane misses the mesh.
    """
    verts = [tuple(v) for v in mesh.vertices]
    coords = mesh.vertices
    s = coords @ plane.normal - plane.offset
    s[np.abs(s) <= 1e-12 * max(mesh.h, 1.0)] = 0.0
    sign = np.sign(s).astype(int)

    cut_cells = []
    for cid in range(mesh.n_cells):
        sv = sign[mesh.cell_vertex_ids(cid)]
        if (sv > 0).any() and (sv < 0).any():
            cut_cells.append(cid)
    if not cut_cells:
        return mesh

    cut_cache: dict = {}

    def cut_vertex(a, bb):
        key = (a, bb) if a < bb else (bb, a)
        if key not in cut_cache:
            t = s[a] / (s[a] - s[bb])
            p = coords[a] + t * (coords[bb] - coords[a])
            cut_cache[key] = len(verts)
            verts.append((float(p[0]), float(p[1]), float(p[2])))
        return cut_cache[key]

    # pass 1: create every cut vertex so a single coordinate array suffices
    mixed = []
    for fid, face in enumerate(mesh.faces):
        sv = sign[np.asarray(face.loop)]
        if (sv > 0).any() and (sv < 0).any():
            mixed.append(fid)
            lp = face.loop
            for i in range(len(lp)):
                a, bb = lp[i], lp[(i + 1) % len(lp)]
                if sign[a] * sign[bb] < 0:
                    cut_vertex(a, bb)
    cs = np.asarray(verts, float)
    mixed_set = set(mixed)

    # pass 2: split faces so the two adjacent cells share the parts
    new_faces: list = []
    face_map: dict = {}   # old fid -> ("keep", new fid) | ("split", fm, fp, chord)
    for fid, face in enumerate(mesh.faces):
        if fid not in mixed_set:
            face_map[fid] = ("keep", len(new_faces))
            new_faces.append(Face(loop=list(face.loop), tris=face.tris.copy()))
            continue
        minus, plus, chord = _split_loop(face.loop, sign, cut_vertex)
        if len(chord) != 2:
            raise MeshGenError(f"face {fid}: cut trace is not a single chord")
        fm = len(new_faces)
        new_faces.append(Face(loop=minus, tris=triangulate_face(minus, cs)))
        fp = len(new_faces)
        new_faces.append(Face(loop=plus, tris=triangulate_face(plus, cs)))
        face_map[fid] = ("split", fm, fp, tuple(chord))

    new_cells: list = []

    def clone_cell(cell, tag):
        pairs = []
        for fid, flip in cell.faces:
            entry = face_map[fid]
            if entry[0] == "keep":
                pairs.append((entry[1], flip))
            else:
                pairs.append((entry[1], flip))
                pairs.append((entry[2], flip))
        new_cells.append(
            Cell(faces=pairs, tag=tag, subtets=cell.subtets.copy(),
                 subtet_tags=np.full(len(cell.subtets), 1 if tag == "plus" else -1, np.int8))
        )

    def gather_tris(face_pairs, extra=None):
        tris = []
        for fid, flip in face_pairs:
            t = new_faces[fid].tris
            tris.append(t[:, ::-1] if flip else t)
        if extra is not None:
            tris.append(extra)
        return np.concatenate(tris, axis=0)

    def oriented_volume(tris):
        p = np.asarray([[verts[v] for v in t] for t in tris.tolist()], float)
        p -= p[0, 0]
        return float(
            np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0
        )

    def cone_half(tris, tag):
        vids = np.unique(tris)
        pts = np.asarray([verts[v] for v in vids], float)
        centroid = pts.mean(axis=0)
        o = len(verts)
        verts.append((float(centroid[0]), float(centroid[1]), float(centroid[2])))
        tets = np.column_stack([np.full(len(tris), o, np.int64), tris])
        tags = np.full(len(tets), 1 if tag == "plus" else -1, np.int8)
        return tets, tags

    cut_set = set(cut_cells)
    for cid, cell in enumerate(mesh.cells):
        if cid not in cut_set:
            sv = sign[mesh.cell_vertex_ids(cid)]
            clone_cell(cell, "minus" if (sv < 0).any() else "plus")
            continue
        minus_pairs, plus_pairs, chords = [], [], []
        for fid, flip in cell.faces:
            entry = face_map[fid]
            if entry[0] == "keep":
                sv = sign[np.asarray(mesh.faces[fid].loop)]
                (minus_pairs if (sv < 0).any() else plus_pairs).append((entry[1], flip))
            else:
                minus_pairs.append((entry[1], flip))
                plus_pairs.append((entry[2], flip))
                chords.append(entry[3])
        # chain the chords into the cross-section polygon
        link: dict = {}
        for a, bb in chords:
            link.setdefault(a, []).append(bb)
            link.setdefault(bb, []).append(a)
        start = chords[0][0]
        loop = [start]
        prev = None
        while True:
            nxts = [w for w in link[loop[-1]] if w != prev]
            if not nxts:
                raise MeshGenError(f"cell {cid}: open cut cross-section")
            prev = loop[-1]
            loop.append(nxts[0])
            if loop[-1] == start:
                loop.pop()
                break
        nrm = newell_normal(cs[np.asarray(loop)])
        if nrm @ plane.normal < 0:
            loop.reverse()
        cut_tris = triangulate_face(loop, cs)
        tris_m = gather_tris(minus_pairs, cut_tris)          # cut normal -> plus
        tris_p = gather_tris(plus_pairs, cut_tris[:, ::-1])
        vol_m, vol_p = oriented_volume(tris_m), oriented_volume(tris_p)
        if min(vol_m, vol_p) < 1e-12 * (vol_m + vol_p):
            # sliver: keep the cell whole on the dominant side
            clone_cell(cell, "minus" if vol_m > vol_p else "plus")
            continue
        cut_fid = len(new_faces)
        new_faces.append(Face(loop=loop, tris=cut_tris))
        minus_pairs.append((cut_fid, False))
        plus_pairs.append((cut_fid, True))
        tets_m, tags_m = cone_half(tris_m, "minus")
        tets_p, tags_p = cone_half(tris_p, "plus")
        new_cells.append(Cell(faces=minus_pairs, tag="minus", subtets=tets_m, subtet_tags=tags_m))
        new_cells.append(Cell(faces=plus_pairs, tag="plus", subtets=tets_p, subtet_tags=tags_p))

    for f in new_faces:
        f.cells = [-1, -1]
    for cid, cell in enumerate(new_cells):
        for fid, flip in cell.faces:
            new_faces[fid].cells[1 if flip else 0] = cid
    return PolyMesh(np.asarray(verts, float), new_faces, new_cells)


# ---------------------------------------------------------------------------
# level-set cuts (unfitted)
# ---------------------------------------------------------------------------

def cut_by_levelset(mesh: PolyMesh, levelset: LevelSet) -> PolyMesh:
    """Mark tetrahedra crossed by the linear interpolant of the level set.

    Cells are kept whole: a crossed tetrahedron becomes a polyhedral cell
    whose faces carry interface-conforming triangulations, whose
    sub-tetrahedra are tagged by material, and which stores the dividing
    polygon (ordered so its normal points from minus to plus).
    """
    verts = [tuple(v) for v in mesh.vertices]
    coords = mesh.vertices
    phi = np.asarray(levelset(coords), float).copy()
    phi[phi == 0.0] = 1e-12 * max(mesh.h, 1.0)

    cut_cache: dict = {}

    def cut_vertex(a, bb):
        key = (a, bb) if a < bb else (bb, a)
        if key not in cut_cache:
            t = phi[a] / (phi[a] - phi[bb])
            p = coords[a] + t * (coords[bb] - coords[a])
            cut_cache[key] = len(verts)
            verts.append((float(p[0]), float(p[1]), float(p[2])))
        return cut_cache[key]

    # pass 1: cut vertices on crossing edges
    mixed = []
    for fid, face in enumerate(mesh.faces):
        lp = face.loop
        if len(lp) != 3:
            raise MeshGenError("level-set cutting expects a tetrahedral mesh")
        sv = np.sign(phi[np.asarray(lp)])
        if (sv > 0).any() and (sv < 0).any():
            mixed.append(fid)
            for i in range(3):
                a, bb = lp[i], lp[(i + 1) % 3]
                if phi[a] * phi[bb] < 0:
                    cut_vertex(a, bb)
    cs = np.asarray(verts, float)
    mixed_set = set(mixed)

    # pass 2: interface-conforming face triangulations (faces stay shared)
    new_faces = []
    for fid, face in enumerate(mesh.faces):
        lp = list(face.loop)
        if fid not in mixed_set:
            new_faces.append(Face(loop=lp, tris=face.tris.copy(), cells=list(face.cells)))
            continue
        loop2, chord = [], []
        for i in range(3):
            a, bb = lp[i], lp[(i + 1) % 3]
            loop2.append(a)
            if phi[a] * phi[bb] < 0:
                v = cut_vertex(a, bb)
                loop2.append(v)
                chord.append(v)
        tris = triangulate_face(loop2, cs, trace=tuple(chord))
        new_faces.append(Face(loop=loop2, tris=tris, cells=list(face.cells)))

    new_cells = []
    for cid, cell in enumerate(mesh.cells):
        if len(cell.subtets) != 1:
            raise MeshGenError("level-set cutting expects a tetrahedral mesh")
        tet = [int(v) for v in cell.subtets[0]]
        sv = phi[np.asarray(tet)]
        neg = [v for v in tet if phi[v] < 0]
        pos = [v for v in tet if phi[v] > 0]
        if not neg or not pos:
            tag = "minus" if neg else "plus"
            new_cells.append(
                Cell(faces=list(cell.faces), tag=tag, subtets=cell.subtets.copy(),
                     subtet_tags=np.full(1, -1 if neg else 1, np.int8))
            )
            continue
        if len(neg) == 1 or len(pos) == 1:
            lone, others = (neg[0], pos) if len(neg) == 1 else (pos[0], neg)
            p = [cut_vertex(lone, o) for o in others]
            iface = list(p)
            tip = [_oriented(verts, (lone, p[0], p[1], p[2]))]
            o = others
            prism = [
                _oriented(verts, (o[0], o[1], o[2], p[0])),
                _oriented(verts, (o[1], o[2], p[0], p[1])),
                _oriented(verts, (o[2], p[0], p[1], p[2])),
            ]
            if len(neg) == 1:
                tets = tip + prism
                tags = [-1] + [1, 1, 1]
            else:
                tets = prism + tip
                tags = [-1, -1, -1] + [1]
        else:
            a, bb = neg
            c, d = pos
            pac, pad = cut_vertex(a, c), cut_vertex(a, d)
            pbc, pbd = cut_vertex(bb, c), cut_vertex(bb, d)
            iface = [pac, pbc, pbd, pad]
            tets = [
                _oriented(verts, (a, pac, pad, bb)),
                _oriented(verts, (pac, pad, bb, pbc)),
                _oriented(verts, (pad, bb, pbc, pbd)),
                _oriented(verts, (c, pac, pbc, d)),
                _oriented(verts, (pac, pbc, d, pad)),
                _oriented(verts, (pbc, d, pad, pbd)),
            ]
            tags = [-1, -1, -1, 1, 1, 1]
        tets = np.asarray(tets)
        tags = np.asarray(tags, np.int8)
        p = cs[tets]
        vols = np.abs(
            np.einsum(
                "ij,ij->i", p[:, 1] - p[:, 0],
                np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]),
            ) / 6.0
        )
        vol_m = float(vols[tags < 0].sum())
        vol_p = float(vols[tags > 0].sum())
        if min(vol_m, vol_p) < 1e-12 * (vol_m + vol_p):
            # level set grazes the cell: snap it whole to the dominant side
            tag = "minus" if vol_m > vol_p else "plus"
            new_cells.append(
                Cell(faces=list(cell.faces), tag=tag, subtets=cell.subtets.copy(),
                     subtet_tags=np.full(1, -1 if vol_m > vol_p else 1, np.int8))
            )
            continue
        nrm = newell_normal(cs[np.asarray(iface)])
        if np.linalg.norm(nrm) <= 1e-14 * mesh.cell_h[cid] ** 2:
            raise MeshGenError(f"cell {cid}: degenerate interface polygon")
        to_plus = cs[np.asarray(pos)].mean(axis=0) - cs[np.asarray(neg)].mean(axis=0)
        if nrm @ to_plus < 0:
            iface.reverse()
        new_cells.append(
            Cell(faces=list(cell.faces), tag="interface",
                 subtets=tets, subtet_tags=tags, interface=iface)
        )
    return PolyMesh(np.asarray(verts, float), new_faces, new_cells)


# ---------------------------------------------------------------------------
# notched cells
# ---------------------------------------------------------------------------

def _notch_pair(b: _Builder, lo, hi, depth, width, with_plug: bool):
    """Add a notched cube (and its plug) filling the box [lo, hi]."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    xa = x0 + (0.5 - width / 2.0) * (x1 - x0)
    xb = x0 + (0.5 + width / 2.0) * (x1 - x0)
    zf = z1 - depth * (z1 - z0)

    V = b.vertex
    xs = (x0, xa, xb, x1)

    def rect_x(x, ylo, yhi, zlo, zhi):
        # normal +x
        return b.rect(V(x, ylo, zlo), V(x, yhi, zlo), V(x, yhi, zhi), V(x, ylo, zhi))

    def rect_y(y, xlo, xhi, zlo, zhi):
        # normal +y
        return b.rect(V(xlo, y, zlo), V(xlo, y, zhi), V(xhi, y, zhi), V(xhi, y, zlo))

    def rect_z(z, xlo, xhi, ylo, yhi):
        # normal +z
        return b.rect(V(xlo, ylo, z), V(xhi, ylo, z), V(xhi, yhi, z), V(xlo, yhi, z))

    # U-cell faces: (face id, flip) with flip=True when +axis points inward
    fp = []
    for xlo, xhi in ((x0, xa), (xa, xb), (xb, x1)):
        fp.append((rect_z(z0, xlo, xhi, y0, y1), True))            # bottom
    fp.append((rect_z(z1, x0, xa, y0, y1), False))                 # top strips
    fp.append((rect_z(z1, xb, x1, y0, y1), False))
    fp.append((rect_x(x0, y0, y1, z0, zf), True))                  # x = x0, split at zf
    fp.append((rect_x(x0, y0, y1, zf, z1), True))
    fp.append((rect_x(x1, y0, y1, z0, zf), False))
    fp.append((rect_x(x1, y0, y1, zf, z1), False))
    for y, flip in ((y0, True), (y1, False)):
        fp.append((rect_y(y, x0, xa, z0, zf), flip))
        fp.append((rect_y(y, x0, xa, zf, z1), flip))
        fp.append((rect_y(y, xa, xb, z0, zf), flip))
        fp.append((rect_y(y, xb, x1, z0, zf), flip))
        fp.append((rect_y(y, xb, x1, zf, z1), flip))
    wall_a = rect_x(xa, y0, y1, zf, z1)
    wall_b = rect_x(xb, y0, y1, zf, z1)
    floor = rect_z(zf, xa, xb, y0, y1)
    fp.append((wall_a, False))   # notch void is at x > xa
    fp.append((wall_b, True))
    fp.append((floor, False))

    tets = []
    for xlo, xhi, ztop in ((x0, xa, z1), (xa, xb, zf), (xb, x1, z1)):
        corner = {
            (a, c, d): V((xlo, xhi)[a], (y0, y1)[c], (z0, ztop)[d])
            for a in (0, 1) for c in (0, 1) for d in (0, 1)
        }
        tets.extend(_kuhn_tets(b.verts, corner))
    b.add_cell(fp, "plus", tets, [1] * len(tets))

    if with_plug:
        fp2 = [
            (wall_a, True),
            (wall_b, False),
            (floor, True),
            (rect_z(z1, xa, xb, y0, y1), False),
            (rect_y(y0, xa, xb, zf, z1), True),
            (rect_y(y1, xa, xb, zf, z1), False),
        ]
        corner = {
            (a, c, d): V((xa, xb)[a], (y0, y1)[c], (zf, z1)[d])
            for a in (0, 1) for c in (0, 1) for d in (0, 1)
        }
        tets2 = _kuhn_tets(b.verts, corner)
        b.add_cell(fp2, "plus", tets2, [1] * len(tets2))


def notch_element(depth: float, width: float) -> PolyMesh:
    """Single-cell mesh: the unit cube with a rectangular notch removed.

    The notch spans the full y extent of the top face; the cell contains a
    ball of radius O(h_K) but is not star convex to it.
    """
    if not (0.0 < depth < 0.5 and 0.0 < width < 0.5):
        raise ValueError("depth and width must lie in (0, 0.5)")
    b = _Builder()
    _notch_pair(b, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), depth, width, with_plug=False)
    return b.build()


def notch_mesh(n: int, depth: float = 0.4, width: float = 0.4,
               box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> PolyMesh:
    """Periodic tiling of the box by notched cubes plus their plug boxes.

    Every other cell is non-star-convex; with the default notch size every
    cell (U-solid and plug alike) keeps an inscribed-ball ratio above 0.15.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    b = _Builder()
    xs, ys, zs = _grid_coords(n, box)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                _notch_pair(
                    b,
                    (xs[i], ys[j], zs[k]),
                    (xs[i + 1], ys[j + 1], zs[k + 1]),
                    depth,
                    width,
                    with_plug=True,
                )
    return b.build()
