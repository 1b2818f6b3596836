"""Lowest-order 3D virtual element method on anisotropic polyhedral meshes."""

from .mesh import (
    Cell,
    Face,
    MeshFormatError,
    NonPlanarFaceError,
    PolyMesh,
    SelfIntersectingFaceError,
    ValidationReport,
    export_vtk,
    load_json,
    save_json,
    triangulate_face,
)
from .meshgen import (
    CutPlane,
    LevelSet,
    MeshGenError,
    cube_mesh,
    cut_by_levelset,
    cut_by_plane,
    notch_element,
    notch_mesh,
    plane_levelset,
    sphere_levelset,
    tet_mesh,
)
from .quadrature import QuadRule, integrate_boundary, integrate_cell, tet_rule, tri_rule

__version__ = "0.1.0"
