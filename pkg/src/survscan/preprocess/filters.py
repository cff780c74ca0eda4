"""Cleaning and labelling of raw scans: duplicates, noise, cropping, ground."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.cloud import GROUND, NON_GROUND, PointCloud
from ..core.index import SpatialIndex
from ..errors import DegenerateGeometryError, InsufficientPointsError, ValidationError

DEFAULT_DEDUP_TOLERANCE = 0.001
DEFAULT_OUTLIER_K = 8
DEFAULT_OUTLIER_ALPHA = 3.0
DEFAULT_GROUND_CELL = 0.5
DEFAULT_GROUND_HEIGHT = 0.15


def _first_per_key(keys: np.ndarray) -> np.ndarray:
    """Sorted indices of the first row of each distinct integer key row."""
    if len(keys) == 0:
        return np.empty(0, dtype=np.intp)
    # lexsort is stable, so the first row of each run is the earliest one.
    order = np.lexsort(keys.T[::-1])
    sk = keys[order]
    new_run = np.ones(len(keys), dtype=bool)
    new_run[1:] = (sk[1:] != sk[:-1]).any(axis=1)
    return np.sort(order[new_run])


def deduplicate(cloud: PointCloud, tolerance: float = DEFAULT_DEDUP_TOLERANCE):
    """Keep the first point (in input order) of every occupied voxel.

    Voxels are ``tolerance``-sized cubes on a lattice anchored at the
    coordinate origin.

    Returns:
        (kept cloud, number of removed points)
    """
    if not tolerance > 0:
        raise ValidationError("dedup tolerance must be > 0")
    keys = np.floor(cloud.xyz / tolerance).astype(np.int64)
    kept = _first_per_key(keys)
    return cloud.subset(kept), len(cloud) - len(kept)


def knn_mean_distances(cloud: PointCloud, k: int, workers: int = 1) -> np.ndarray:
    """Per-point mean distance to the ``k`` nearest other points."""
    d = SpatialIndex(cloud.xyz).knn_distances(k, exclude_self=True, workers=workers)
    return d.mean(axis=1)


def outlier_mask(cloud: PointCloud, k: int = DEFAULT_OUTLIER_K,
                 alpha: float = DEFAULT_OUTLIER_ALPHA, workers: int = 1) -> np.ndarray:
    """Boolean mask of statistical outliers.

    A point is an outlier when its mean k-NN distance exceeds the mean of
    those values over the cloud by more than ``alpha`` population standard
    deviations.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not alpha > 0:
        raise ValidationError("alpha must be > 0")
    if len(cloud) <= k:
        raise InsufficientPointsError(
            f"insufficient points for k-neighborhood: {len(cloud)} points, k={k}"
        )
    dbar = knn_mean_distances(cloud, k, workers=workers)
    threshold = dbar.mean() + alpha * dbar.std()
    return dbar > threshold


def remove_outliers(cloud: PointCloud, k: int = DEFAULT_OUTLIER_K,
                    alpha: float = DEFAULT_OUTLIER_ALPHA, workers: int = 1):
    """Split ``cloud`` into (kept, removed) by the k-NN distance statistic."""
    mask = outlier_mask(cloud, k, alpha, workers)
    return cloud.subset(~mask), cloud.subset(mask)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, bounds inclusive."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValidationError("box corners must be 3-vectors")
        if (hi < lo).any():
            raise ValidationError("box upper corner is below its lower corner")

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        return ((xyz >= lo) & (xyz <= hi)).all(axis=1)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True
    return ((d1 == 0 and on_segment(q1, q2, p1)) or (d2 == 0 and on_segment(q1, q2, p2))
            or (d3 == 0 and on_segment(p1, p2, q1)) or (d4 == 0 and on_segment(p1, p2, q2)))


class Polygon:
    """Simple polygon in the xy plane; z is ignored when cropping."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValidationError("polygon vertices must be (x, y) pairs")
        if len(v) > 1 and (v[0] == v[-1]).all():
            v = v[:-1]
        if len(v) < 3:
            raise DegenerateGeometryError("polygon needs at least 3 vertices")
        self.vertices = v
        if self.area() == 0:
            raise DegenerateGeometryError("polygon has zero area")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise DegenerateGeometryError("polygon is self-intersecting")

    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Inside-or-on-boundary test for each row of ``xy``."""
        xy = np.asarray(xy, dtype=np.float64)[:, :2]
        px, py = xy[:, 0], xy[:, 1]
        inside = np.zeros(len(xy), dtype=bool)
        boundary = np.zeros(len(xy), dtype=bool)
        v = self.vertices
        for (ax, ay), (bx, by) in zip(v, np.roll(v, -1, axis=0)):
            # even-odd crossing of a ray towards +x
            straddles = (ay > py) != (by > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
            inside ^= straddles & (px < x_cross)
            cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            within = ((px >= min(ax, bx)) & (px <= max(ax, bx))
                      & (py >= min(ay, by)) & (py <= max(ay, by)))
            boundary |= (cross == 0) & within
        return inside | boundary


def crop(cloud: PointCloud, region) -> PointCloud:
    """Points inside or on the boundary of a :class:`Box` or :class:`Polygon`."""
    if isinstance(region, (Box, Polygon)):
        return cloud.subset(region.contains(cloud.xyz))
    raise ValidationError(f"unsupported crop region {type(region).__name__}")


def classify_ground(cloud: PointCloud, cell: float = DEFAULT_GROUND_CELL,
                    h_thresh: float = DEFAULT_GROUND_HEIGHT) -> PointCloud:
    """Label points ground (2) or non-ground (1) by height above cell minimum.

    The xy plane is split into ``cell``-sized squares anchored at the
    cloud's minimum x and y. A point is ground when its z is at most
    ``h_thresh`` above the lowest z in its square.
    """
    if not cell > 0:
        raise ValidationError("ground cell size must be > 0")
    if not h_thresh > 0:
        raise ValidationError("ground height threshold must be > 0")
    n = len(cloud)
    if n == 0:
        return cloud
    xy = cloud.xyz[:, :2]
    ij = np.floor((xy - xy.min(axis=0)) / cell).astype(np.int64)
    _, cell_id = np.unique(ij, axis=0, return_inverse=True)
    cell_id = cell_id.reshape(-1)
    zmin = np.full(cell_id.max() + 1, np.inf)
    np.minimum.at(zmin, cell_id, cloud.z)
    ground = cloud.z - zmin[cell_id] <= h_thresh
    labels = np.where(ground, GROUND, NON_GROUND).astype(np.uint8)
    return cloud.replace(classification=labels)
