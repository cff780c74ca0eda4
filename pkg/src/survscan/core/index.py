"""Nearest-neighbour queries over an immutable coordinate snapshot.

The heavy lifting is done by :class:`scipy.spatial.cKDTree`. On top of it
the index guarantees the same answer a linear scan gives: neighbours are
ranked by ``(distance, input index)``, and distances are recomputed here
with one fixed formula so every caller sees identical values.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InsufficientPointsError, ValidationError
from .cloud import PointCloud

# Slack applied to kd-tree radii before exact re-ranking; covers rounding
# differences between the tree's distance arithmetic and ours.
_RADIUS_SLACK = 1e-9


def point_distances(xyz: np.ndarray, q) -> np.ndarray:
    """Euclidean distances from ``q`` to each row of ``xyz``.

    This is the reference formula used by every neighbour routine.
    """
    diff = np.asarray(xyz, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class SpatialIndex:
    """k-d tree over a frozen copy of a cloud's coordinates."""

    def __init__(self, xyz, leafsize: int = 16):
        pts = np.array(xyz, dtype=np.float64, copy=True).reshape(-1, 3)
        pts.flags.writeable = False
        self.xyz = pts
        self._tree = cKDTree(pts, leafsize=leafsize) if len(pts) else None

    def __len__(self) -> int:
        return len(self.xyz)

    def knn(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``k`` nearest points to ``q``.

        Ties are broken by input order. If ``k`` exceeds the point count
        every point is returned.
        """
        if k < 1:
            raise ValidationError("k must be >= 1")
        n = len(self.xyz)
        if n == 0:
            return np.empty(0, dtype=np.intp), np.empty(0)
        q = np.asarray(q, dtype=np.float64).reshape(3)
        if k >= n:
            cand = np.arange(n)
        else:
            dk, _ = self._tree.query(q, k=k)
            reach = float(np.max(dk))
            cand = np.asarray(self._tree.query_ball_point(q, reach * (1 + _RADIUS_SLACK) + _RADIUS_SLACK), dtype=np.intp)
        d = point_distances(self.xyz[cand], q)
        order = np.lexsort((cand, d))[:k]
        return cand[order], d[order]

    def radius_query(self, q, r: float) -> tuple[np.ndarray, np.ndarray]:
        """All points with distance ``<= r`` from ``q``, sorted by (distance, index)."""
        if not r > 0:
            raise ValidationError("radius must be > 0")
        if len(self.xyz) == 0:
            return np.empty(0, dtype=np.intp), np.empty(0)
        q = np.asarray(q, dtype=np.float64).reshape(3)
        cand = np.asarray(self._tree.query_ball_point(q, r * (1 + _RADIUS_SLACK) + _RADIUS_SLACK), dtype=np.intp)
        d = point_distances(self.xyz[cand], q)
        keep = d <= r
        cand, d = cand[keep], d[keep]
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def knn_distances(self, k: int, exclude_self: bool = True, workers: int = 1) -> np.ndarray:
        """Sorted distances from every indexed point to its ``k`` nearest others.

        Returns an ``(N, k)`` array. Only distances are returned, so which of
        several equidistant neighbours was picked does not matter.
        """
        n = len(self.xyz)
        extra = 1 if exclude_self else 0
        if n < k + extra:
            raise InsufficientPointsError(
                f"insufficient points for k-neighborhood: {n} points, k={k}"
            )
        _, idx = self._tree.query(self.xyz, k=k + extra, workers=workers)
        idx = np.asarray(idx).reshape(n, k + extra)
        diff = self.xyz[idx] - self.xyz[:, None, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        d.sort(axis=1)
        return d[:, extra:] if exclude_self else d

    def nearest(self, queries, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Nearest indexed point for each query row: (indices, distances)."""
        qs = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        _, idx = self._tree.query(qs, k=1, workers=workers)
        idx = np.asarray(idx, dtype=np.intp)
        return idx, point_distances_rows(self.xyz[idx], qs)


def point_distances_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise distances between two equally shaped ``(N, 3)`` arrays."""
    diff = a - b
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(xyz)


def knn(index: SpatialIndex, q, k: int):
    return index.knn(q, k)


def radius_query(index: SpatialIndex, q, r: float):
    return index.radius_query(q, r)


def mean_nn_spacing(cloud: PointCloud | np.ndarray, workers: int = 1) -> float:
    """Mean distance from each point to its nearest other point, in meters."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(xyz) < 2:
        raise InsufficientPointsError("insufficient points: mean spacing needs at least 2")
    d = SpatialIndex(xyz).knn_distances(1, workers=workers)[:, 0]
    return float(np.mean(d))
