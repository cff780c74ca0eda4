"""Rigid registration: control-point fits, georeferencing and ICP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.cloud import PointCloud, georef_frame
from ..core.index import SpatialIndex, mean_nn_spacing, point_distances_rows
from ..core.transform import RigidTransform, apply_transform
from ..errors import (
    DegenerateGeometryError,
    FormatError,
    InsufficientPointsError,
    ValidationError,
)

# Minimum RMS spread of the centred source points across their principal
# line; below this the rotation about that line is unobservable.
COLLINEAR_TOL = 1e-6
DEFAULT_ICP_MAX_ITER = 50
DEFAULT_ICP_TOL = 1e-6
DEFAULT_ICP_DIST_FACTOR = 5.0


@dataclass(frozen=True)
class CorrespondencePair:
    """One target seen in the scanner frame (source) and reference frame (destination)."""

    id: str
    source: tuple
    destination: tuple


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    rms_residual: float
    ids: tuple
    residuals: np.ndarray
    iterations: int = 1
    converged: bool = True
    history: tuple = field(default=())

    @property
    def per_pair_residuals(self) -> dict:
        return dict(zip(self.ids, self.residuals.tolist()))


def _rms(values: np.ndarray) -> float:
    if len(values) == 0:
        return 0.0
    return math.sqrt(math.fsum(float(v) * float(v) for v in values) / len(values))


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` rows onto ``dst`` rows."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, _, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # Re-orthonormalise to remove SVD round-off before validation.
    uu, _, vv = np.linalg.svd(rot)
    rot = uu @ vv
    return RigidTransform(rot, c_dst - rot @ c_src)


def _check_spread(src: np.ndarray) -> None:
    centred = src - src.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[1] / math.sqrt(len(src)) <= COLLINEAR_TOL:
        raise DegenerateGeometryError(
            "degenerate configuration: control points are collinear"
        )


def estimate_rigid(pairs) -> RegistrationResult:
    """Closed-form rigid fit of destination ~ R @ source + t."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise InsufficientPointsError(f"need at least 3 correspondence pairs, got {len(pairs)}")
    ids = tuple(str(p.id) for p in pairs)
    if len(set(ids)) != len(ids):
        raise ValidationError("correspondence ids must be unique")
    src = np.array([p.source for p in pairs], dtype=np.float64)
    dst = np.array([p.destination for p in pairs], dtype=np.float64)
    if not (np.isfinite(src).all() and np.isfinite(dst).all()):
        raise ValidationError("correspondence coordinates must be finite")
    _check_spread(src)
    t = kabsch(src, dst)
    res = point_distances_rows(t.apply_points(src), dst)
    return RegistrationResult(t, _rms(res), ids, res)


def georeference(cloud: PointCloud, control, crs: str = "unspecified"):
    """Move a scanner-frame cloud into the reference frame of the control points.

    Returns:
        (georeferenced cloud, RegistrationResult)
    """
    result = estimate_rigid(control)
    out = apply_transform(cloud, result.transform, frame=georef_frame(crs))
    return out, result


def icp_refine(
    source: PointCloud,
    destination: PointCloud,
    initial: Optional[RigidTransform] = None,
    max_iter: int = DEFAULT_ICP_MAX_ITER,
    converge_tol: float = DEFAULT_ICP_TOL,
    max_distance: Optional[float] = None,
    workers: int = 1,
) -> RegistrationResult:
    """Point-to-point ICP from ``initial`` towards ``destination``.

    Each iteration pairs every transformed source point with its nearest
    destination point, drops pairs farther apart than ``max_distance``
    (default: 5x the destination's mean point spacing) and refits the
    transform in closed form. A step is kept only if it lowers the RMS
    pair distance, so the reported history never increases. Iteration
    stops when the improvement falls below ``converge_tol``, after
    ``max_iter`` iterations, or when fewer than 3 pairs survive the
    distance gate (``converged`` is then False).
    """
    if len(source) == 0 or len(destination) == 0:
        raise InsufficientPointsError("icp needs two non-empty clouds")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    current = initial or RigidTransform.identity()
    if max_distance is None:
        max_distance = DEFAULT_ICP_DIST_FACTOR * mean_nn_spacing(destination, workers=workers) \
            if len(destination) >= 2 else np.inf
    tree = SpatialIndex(destination.xyz)
    src = source.xyz

    def pair_up(t: RigidTransform):
        moved = t.apply_points(src)
        idx, d = tree.nearest(moved, workers=workers)
        keep = d <= max_distance
        return np.flatnonzero(keep), idx[keep], d[keep]

    src_idx, dst_idx, dist = pair_up(current)
    rms = _rms(dist) if len(dist) else _rms(tree.nearest(current.apply_points(src), workers)[1])
    history = [rms]
    iterations = 0
    converged = False
    while iterations < max_iter:
        if len(src_idx) < 3:
            break
        iterations += 1
        try:
            _check_spread(src[src_idx])
        except DegenerateGeometryError:
            break
        candidate = kabsch(src[src_idx], destination.xyz[dst_idx])
        c_src, c_dst, c_d = pair_up(candidate)
        if len(c_d) < 3:
            break
        c_rms = _rms(c_d)
        if c_rms > rms:
            converged = True
            break
        improvement = rms - c_rms
        current, rms = candidate, c_rms
        src_idx, dst_idx, dist = c_src, c_dst, c_d
        history.append(rms)
        if improvement < converge_tol:
            converged = True
            break
    ids = tuple(str(i) for i in src_idx)
    return RegistrationResult(
        current, rms, ids, dist, iterations=iterations, converged=converged, history=tuple(history)
    )


def read_correspondences(path) -> list:
    """Parse ``id sx sy sz dx dy dz`` lines (``#`` comments allowed)."""
    path = Path(path)
    pairs = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            tokens = text.split()
            if len(tokens) != 7:
                raise FormatError(f"expected 7 fields 'id sx sy sz dx dy dz', found {len(tokens)}", path, lineno)
            try:
                vals = [float(t) for t in tokens[1:]]
            except ValueError:
                raise FormatError("cannot parse coordinate", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite coordinate", path, lineno)
            if tokens[0] in seen:
                raise FormatError(f"duplicate id {tokens[0]!r}", path, lineno)
            seen.add(tokens[0])
            pairs.append(CorrespondencePair(tokens[0], tuple(vals[:3]), tuple(vals[3:])))
    return pairs


def write_correspondences(pairs, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fields = [p.id, *(repr(float(v)) for v in p.source), *(repr(float(v)) for v in p.destination)]
            fh.write(" ".join(fields) + "\n")
