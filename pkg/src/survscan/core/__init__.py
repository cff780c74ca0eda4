"""Data model, rigid transforms, spatial indexing and cloud I/O."""

from .cloud import (
    CLASS_CODES,
    GROUND,
    NOISE,
    NON_GROUND,
    TARGET,
    UNASSIGNED,
    Point3,
    PointCloud,
    concatenate,
    georef_frame,
    is_georeferenced,
    local_frame,
)
from .index import SpatialIndex, build_index, knn, mean_nn_spacing, radius_query
from .io import SSPC_BINARY, XYZ_ASCII, read_cloud, write_cloud
from .transform import RigidTransform, apply_transform, compose, invert

__all__ = [
    "CLASS_CODES",
    "GROUND",
    "NOISE",
    "NON_GROUND",
    "TARGET",
    "UNASSIGNED",
    "Point3",
    "PointCloud",
    "RigidTransform",
    "SSPC_BINARY",
    "SpatialIndex",
    "XYZ_ASCII",
    "apply_transform",
    "build_index",
    "compose",
    "concatenate",
    "georef_frame",
    "invert",
    "is_georeferenced",
    "knn",
    "local_frame",
    "mean_nn_spacing",
    "radius_query",
    "read_cloud",
    "write_cloud",
]
