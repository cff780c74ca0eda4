"""survscan: terrestrial laser-scan survey toolkit."""

__version__ = "0.1.0"

from .errors import (
    DegenerateGeometryError,
    FormatError,
    InsufficientPointsError,
    NoOverlapError,
    SurvscanError,
    TargetNotFoundError,
    ValidationError,
)
from .core import PointCloud, RigidTransform, read_cloud, write_cloud

__all__ = [
    "__version__",
    "DegenerateGeometryError",
    "FormatError",
    "InsufficientPointsError",
    "NoOverlapError",
    "PointCloud",
    "RigidTransform",
    "SurvscanError",
    "TargetNotFoundError",
    "ValidationError",
    "read_cloud",
    "write_cloud",
]
