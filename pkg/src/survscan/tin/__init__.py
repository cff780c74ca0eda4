"""Delaunay TIN construction, interpolation and OBJ export."""

from .delaunay import (
    TinLocator,
    TriangulatedSurface,
    delaunay,
    export_obj,
    hilbert_order,
    interpolate_z,
    merge_xy_duplicates,
    read_obj,
    triangle_z,
)
from .predicates import incircle, incircle_perturbed, orient2d

__all__ = [
    "TinLocator",
    "TriangulatedSurface",
    "delaunay",
    "export_obj",
    "hilbert_order",
    "incircle",
    "incircle_perturbed",
    "interpolate_z",
    "merge_xy_duplicates",
    "orient2d",
    "read_obj",
    "triangle_z",
]
