"""Quadrature on triangles and tetrahedra, and integration over cells.

Low-degree rules are the classical symmetric ones; the degree-3/4 rules are
conical products built from Gauss-Jacobi lines, so their exactness follows
from the 1D rules rather than from copied coefficient tables.  Points are
stored in barycentric coordinates and weights sum to one on the reference
simplex.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

__all__ = ["QuadRule", "tri_rule", "tet_rule", "integrate_cell", "integrate_boundary"]


@dataclass(frozen=True)
class QuadRule:
    """Simplex rule: barycentric points, weights summing to 1, exact degree."""

    points: np.ndarray  # (n, dim + 1)
    weights: np.ndarray  # (n,)
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    def map_to(self, verts: np.ndarray) -> np.ndarray:
        """Physical quadrature points for simplices given as (..., dim+1, 3)."""
        return np.einsum("qk,...kj->...qj", self.points, verts)


def _gauss01(n: int, alpha: int):
    # nodes/weights for int_0^1 f(u) (1-u)^alpha du
    if alpha == 0:
        x, w = leggauss(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    u = 0.5 * (x + 1.0)
    w = w / 2.0 ** (alpha + 1)
    return u, w


def _conical_tri(n: int) -> QuadRule:
    u, wu = _gauss01(n, 1)
    v, wv = _gauss01(n, 0)
    pts, wts = [], []
    for i in range(n):
        for j in range(n):
            x = u[i]
            y = v[j] * (1.0 - u[i])
            pts.append((1.0 - x - y, x, y))
            wts.append(wu[i] * wv[j])
    w = np.asarray(wts)
    return QuadRule(np.asarray(pts), w / w.sum(), 2 * n - 1)


def _conical_tet(n: int) -> QuadRule:
    u, wu = _gauss01(n, 2)
    v, wv = _gauss01(n, 1)
    t, wt = _gauss01(n, 0)
    pts, wts = [], []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                x = u[i]
                y = v[j] * (1.0 - u[i])
                z = t[k] * (1.0 - u[i]) * (1.0 - v[j])
                pts.append((1.0 - x - y - z, x, y, z))
                wts.append(wu[i] * wv[j] * wt[k])
    w = np.asarray(wts)
    return QuadRule(np.asarray(pts), w / w.sum(), 2 * n - 1)


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> QuadRule:
    """Symmetric triangle rule exact at least to the requested degree."""
    if degree <= 1:
        return QuadRule(np.array([[1, 1, 1]]) / 3.0, np.array([1.0]), 1)
    if degree == 2:
        pts = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 4.0
        return QuadRule(pts, np.full(3, 1.0 / 3.0), 2)
    if degree <= 4:
        return _conical_tri((degree + 2) // 2)
    raise ValueError(f"unsupported triangle rule degree {degree}")


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> QuadRule:
    """Symmetric tetrahedron rule exact at least to the requested degree."""
    if degree <= 1:
        return QuadRule(np.array([[1, 1, 1, 1]]) / 4.0, np.array([1.0]), 1)
    if degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        pts = np.full((4, 4), b)
        np.fill_diagonal(pts, a)
        return QuadRule(pts, np.full(4, 0.25), 2)
    if degree <= 4:
        return _conical_tet((degree + 2) // 2)
    raise ValueError(f"unsupported tetrahedron rule degree {degree}")


def _call_piecewise(f, pts, side):
    if isinstance(f, tuple):
        fm, fp = f
        return fm(pts) if side < 0 else fp(pts)
    return f(pts)


def integrate_cell(f, mesh, cid: int, degree: int = 2) -> float:
    """Integrate f over a cell using its sub-tetrahedra.

    ``f`` maps an (n, 3) point array to values; a ``(f_minus, f_plus)`` pair
    branches on the sub-tetrahedron material tag of interface cells.
    """
    rule = tet_rule(degree)
    cell = mesh.cells[cid]
    verts = mesh.vertices[cell.subtets]  # (k, 4, 3)
    vols = np.abs(_tet_vols(verts))
    pts = rule.map_to(verts)  # (k, q, 3)
    total = 0.0
    for s in (-1, 1):
        m = cell.subtet_tags == s
        if not np.any(m):
            continue
        vals = _call_piecewise(f, pts[m].reshape(-1, 3), s).reshape(m.sum(), -1)
        total += float(np.einsum("k,q,kq->", vols[m], rule.weights, vals))
    return total


def integrate_boundary(f, mesh, cid: int, degree: int = 2) -> float:
    """Integrate f over a cell's boundary using the face triangulations."""
    rule = tri_rule(degree)
    tris = mesh.cell_tris(cid)
    p = mesh.vertices[tris]  # (m, 3, 3)
    areas = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    pts = rule.map_to(p).reshape(-1, 3)
    vals = np.asarray(f(pts)).reshape(len(tris), -1)
    return float(np.einsum("k,q,kq->", areas, rule.weights, vals))


def _tet_vols(verts: np.ndarray) -> np.ndarray:
    a = verts[:, 1] - verts[:, 0]
    b = verts[:, 2] - verts[:, 0]
    c = verts[:, 3] - verts[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
