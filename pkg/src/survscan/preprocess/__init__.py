"""Pre-modelling chain: duplicate removal, noise filtering, cropping,
ground classification, registration and georeferencing."""

from .filters import (
    DEFAULT_DEDUP_TOLERANCE,
    DEFAULT_GROUND_CELL,
    DEFAULT_GROUND_HEIGHT,
    DEFAULT_OUTLIER_ALPHA,
    DEFAULT_OUTLIER_K,
    Box,
    Polygon,
    classify_ground,
    crop,
    deduplicate,
    knn_mean_distances,
    outlier_mask,
    remove_outliers,
)
from .registration import (
    DEFAULT_ICP_DIST_FACTOR,
    DEFAULT_ICP_MAX_ITER,
    DEFAULT_ICP_TOL,
    CorrespondencePair,
    RegistrationResult,
    estimate_rigid,
    georeference,
    icp_refine,
    kabsch,
    read_correspondences,
    write_correspondences,
)

__all__ = [
    "DEFAULT_DEDUP_TOLERANCE",
    "DEFAULT_GROUND_CELL",
    "DEFAULT_GROUND_HEIGHT",
    "DEFAULT_ICP_DIST_FACTOR",
    "DEFAULT_ICP_MAX_ITER",
    "DEFAULT_ICP_TOL",
    "DEFAULT_OUTLIER_ALPHA",
    "DEFAULT_OUTLIER_K",
    "Box",
    "CorrespondencePair",
    "Polygon",
    "RegistrationResult",
    "classify_ground",
    "crop",
    "deduplicate",
    "estimate_rigid",
    "georeference",
    "icp_refine",
    "kabsch",
    "knn_mean_distances",
    "outlier_mask",
    "read_correspondences",
    "remove_outliers",
    "write_correspondences",
]
