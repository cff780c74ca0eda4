"""Spherical targets and the repeated-scan distance accuracy protocol.

Targets are measured in several scans; for every pair of targets the
centre-to-centre distance is computed per scan, then averaged (meters)
and its sample standard deviation reported (millimeters). The largest
standard deviation is compared against a tolerance for a pass/fail
verdict.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .core.cloud import Point3, PointCloud
from .core.index import SpatialIndex
from .errors import (
    DegenerateGeometryError,
    FormatError,
    InsufficientPointsError,
    TargetNotFoundError,
    ValidationError,
)

DEFAULT_TOLERANCE_MM = 4.0
MIN_TARGET_POINTS = 10
_PLANAR_TOL = 1e-9
_TRIM_ROUNDS = 5
_TRIM_SIGMAS = 3.0


@dataclass(frozen=True)
class SphereFit:
    center: Point3
    radius: float
    fit_rms: float
    point_count: int


@dataclass(frozen=True)
class TargetObservation:
    target_id: str
    scan_id: str
    center: Point3
    fit_rms: float = 0.0
    point_count: int = 0


def _algebraic_sphere(pts: np.ndarray):
    """Linear least-squares sphere: |p|^2 = 2 p.c + (r^2 - |c|^2)."""
    a = np.column_stack([2 * pts, np.ones(len(pts))])
    b = np.einsum("ij,ij->i", pts, pts)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:3]
    r2 = sol[3] + c @ c
    return c, math.sqrt(max(r2, 0.0))


def _circle_cap_center(pts: np.ndarray, radius: float) -> np.ndarray:
    """Centre for coplanar points on a sphere of known radius.

    The circle through the points fixes the centre up to a reflection in
    their plane; the solution farther from the frame origin (where the
    scanner sits) is returned, since the scanner sees the near side.
    """
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid)
    e1, e2, normal = vt
    uv = np.column_stack([(pts - centroid) @ e1, (pts - centroid) @ e2])
    a = np.column_stack([2 * uv, np.ones(len(uv))])
    b = np.einsum("ij,ij->i", uv, uv)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    rho2 = sol[2] + sol[:2] @ sol[:2]
    circle = centroid + sol[0] * e1 + sol[1] * e2
    h = math.sqrt(max(radius * radius - rho2, 0.0))
    cands = [circle + h * normal, circle - h * normal]
    return max(cands, key=lambda c: float(c @ c))


def fit_sphere(points, known_radius: Optional[float] = None) -> SphereFit:
    """Sphere through ``points`` by algebraic fit plus geometric refinement.

    The refinement minimises the sum of squared radial residuals
    ``|p - c| - r``; with ``known_radius`` only the centre is free.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if known_radius is not None and not known_radius > 0:
        raise ValidationError("sphere radius must be > 0")
    need = 4 if known_radius is None else 3
    if n < need:
        raise DegenerateGeometryError(f"degenerate sphere configuration: {n} points, need {need}")
    shift = pts.mean(axis=0)
    local = pts - shift
    s = np.linalg.svd(local, compute_uv=False)
    planar = s[2] <= _PLANAR_TOL * max(s[0], 1e-300)
    if s[1] <= _PLANAR_TOL * max(s[0], 1e-300):
        raise DegenerateGeometryError("degenerate sphere configuration: points are collinear")
    if planar and known_radius is None:
        raise DegenerateGeometryError("degenerate sphere configuration: points are coplanar")

    if planar:
        c0 = _circle_cap_center(pts, known_radius) - shift
    else:
        c0, _ = _algebraic_sphere(local)

    if known_radius is None:
        def resid(q):
            return np.linalg.norm(local - q[:3], axis=1) - q[3]

        def jac(q):
            diff = local - q[:3]
            dist = np.linalg.norm(diff, axis=1)[:, None]
            return np.column_stack([-diff / dist, -np.ones(n)])

        r0 = float(np.mean(np.linalg.norm(local - c0, axis=1)))
        sol = least_squares(resid, np.append(c0, r0), jac=jac, method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        center, radius = sol.x[:3], abs(float(sol.x[3]))
    else:
        radius = float(known_radius)

        def resid(q):
            return np.linalg.norm(local - q, axis=1) - radius

        def jac(q):
            diff = local - q
            return -diff / np.linalg.norm(diff, axis=1)[:, None]

        sol = least_squares(resid, c0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        center = sol.x
    res = np.linalg.norm(local - center, axis=1) - radius
    rms = math.sqrt(float(np.mean(res * res)))
    c = center + shift
    return SphereFit(Point3(float(c[0]), float(c[1]), float(c[2])), radius, rms, n)


def extract_target(
    cloud: PointCloud,
    approx_center,
    search_radius: float,
    sphere_radius: float,
    target_id: str = "",
    scan_id: str = "",
) -> TargetObservation:
    """Fit a known-radius sphere to points near ``approx_center``.

    Points farther than three robust standard deviations (1.4826 x MAD)
    from the fitted surface are dropped and the fit repeated, so stray
    ground or mount points inside the search ball do not drag the centre.
    """
    if not search_radius > sphere_radius:
        raise ValidationError("search radius must exceed the sphere radius")
    idx, _ = SpatialIndex(cloud.xyz).radius_query(np.asarray(approx_center, dtype=np.float64), search_radius)
    if len(idx) < MIN_TARGET_POINTS:
        raise TargetNotFoundError(
            f"target not found: {len(idx)} points within {search_radius} m of {tuple(approx_center)}"
        )
    pts = cloud.xyz[np.sort(idx)]
    fit = fit_sphere(pts, known_radius=sphere_radius)
    for _ in range(_TRIM_ROUNDS):
        c = fit.center.as_array()
        res = np.abs(np.linalg.norm(pts - c, axis=1) - sphere_radius)
        mad = float(np.median(np.abs(res - np.median(res))))
        limit = max(_TRIM_SIGMAS * 1.4826 * mad, np.finfo(float).eps * sphere_radius)
        keep = res <= max(limit, float(np.median(res)) + limit)
        if keep.all() or keep.sum() < MIN_TARGET_POINTS:
            break
        pts = pts[keep]
        fit = fit_sphere(pts, known_radius=sphere_radius)
    return TargetObservation(str(target_id), str(scan_id), fit.center, fit.fit_rms, fit.point_count)


def _natural_key(s: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", s)]


def sample_std(values) -> float:
    """n-1 standard deviation; exactly rounded sums, so input order is irrelevant."""
    vals = [float(v) for v in values]
    n = len(vals)
    if n < 2:
        raise InsufficientPointsError("sample standard deviation needs at least 2 values")
    mean = math.fsum(vals) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))


@dataclass(frozen=True, eq=False)
class AccuracyReport:
    """Pairwise target-distance statistics over repeated scans.

    ``mean_distance`` (m) and ``std_distance`` (mm) are square matrices
    indexed like ``target_ids``; only entries with ``i < j`` are defined,
    the rest are NaN.
    """

    target_ids: tuple
    scan_ids: tuple
    mean_distance: np.ndarray
    std_distance: np.ndarray
    max_std: float
    tolerance: float
    verdict: str
    metadata: dict = field(default_factory=dict)

    @property
    def scan_count(self) -> int:
        return len(self.scan_ids)

    def pairs(self):
        n = len(self.target_ids)
        for i, j in itertools.combinations(range(n), 2):
            yield self.target_ids[i], self.target_ids[j], self.mean_distance[i, j], self.std_distance[i, j]


def pairwise_distance_stats(per_scan: dict, tolerance_mm: float = DEFAULT_TOLERANCE_MM,
                            target_ids=None, metadata=None) -> AccuracyReport:
    """Report from per-scan pair distances.

    Args:
        per_scan: ``{scan_id: {(target_a, target_b): distance_m}}``; pair
            keys are unordered.
        tolerance_mm: largest acceptable standard deviation.
        target_ids: optional explicit target order (natural sort otherwise).
    """
    if not tolerance_mm > 0:
        raise ValidationError("tolerance must be > 0 mm")
    if len(per_scan) < 2:
        raise InsufficientPointsError(f"accuracy assessment needs at least 2 scans, got {len(per_scan)}")
    norm = {}
    ids = set()
    for scan, dists in per_scan.items():
        table = {}
        for (a, b), d in dists.items():
            a, b = str(a), str(b)
            if a == b:
                raise ValidationError(f"scan {scan!r}: distance from target {a!r} to itself")
            key = frozenset((a, b))
            if key in table:
                raise ValidationError(f"scan {scan!r}: pair ({a}, {b}) given twice")
            d = float(d)
            if not (math.isfinite(d) and d >= 0):
                raise ValidationError(f"scan {scan!r}: invalid distance {d} for ({a}, {b})")
            table[key] = d
            ids.update((a, b))
        norm[str(scan)] = table
    order = tuple(target_ids) if target_ids is not None else tuple(sorted(ids, key=_natural_key))
    if len(order) < 2:
        raise InsufficientPointsError("accuracy assessment needs at least 2 targets")
    scans = tuple(sorted(norm, key=_natural_key))
    n = len(order)
    mean = np.full((n, n), np.nan)
    std = np.full((n, n), np.nan)
    for i, j in itertools.combinations(range(n), 2):
        key = frozenset((order[i], order[j]))
        values = []
        for scan in scans:
            if key not in norm[scan]:
                raise ValidationError(
                    f"missing observation: scan {scan!r} has no distance for targets {order[i]!r}-{order[j]!r}"
                )
            values.append(norm[scan][key])
        mean[i, j] = math.fsum(values) / len(values)
        std[i, j] = sample_std(values) * 1000.0
    max_std = float(np.nanmax(std))
    meta = {
        "std_estimator": "sample (n-1)",
        "distance": "3D Euclidean",
        "table_rounding": "mean 0.001 m, std 0.1 mm",
    }
    meta.update(metadata or {})
    return AccuracyReport(
        target_ids=order,
        scan_ids=scans,
        mean_distance=mean,
        std_distance=std,
        max_std=max_std,
        tolerance=float(tolerance_mm),
        verdict="pass" if max_std <= tolerance_mm else "fail",
        metadata=meta,
    )


def scan_distances(observations) -> dict:
    """Per-scan centre-to-centre distances: ``{scan: {(a, b): d}}``."""
    by_scan = {}
    for ob in observations:
        scan = by_scan.setdefault(str(ob.scan_id), {})
        if str(ob.target_id) in scan:
            raise ValidationError(f"scan {ob.scan_id!r} observes target {ob.target_id!r} twice")
        scan[str(ob.target_id)] = np.asarray(ob.center, dtype=np.float64)
    all_ids = set().union(*(set(s) for s in by_scan.values())) if by_scan else set()
    out = {}
    for scan_id in sorted(by_scan, key=_natural_key):
        centers = by_scan[scan_id]
        for t in sorted(all_ids, key=_natural_key):
            if t not in centers:
                raise ValidationError(f"missing observation: scan {scan_id!r} lacks target {t!r}")
        ids = sorted(centers, key=_natural_key)
        out[scan_id] = {
            (a, b): float(np.linalg.norm(centers[a] - centers[b]))
            for a, b in itertools.combinations(ids, 2)
        }
    return out


def distance_stats(observations, tolerance_mm: float = DEFAULT_TOLERANCE_MM) -> AccuracyReport:
    """Accuracy report from target centres observed in two or more scans."""
    return pairwise_distance_stats(scan_distances(list(observations)), tolerance_mm)


def _matrix_to_json(m: np.ndarray, ndigits: Optional[int] = None):
    out = []
    for row in m.tolist():
        out.append([None if math.isnan(v) else (round(v, ndigits) if ndigits is not None else v) for v in row])
    return out


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[np.nan if v is None else float(v) for v in row] for row in rows], dtype=np.float64)


def report_to_dict(report: AccuracyReport) -> dict:
    return {
        "targets": list(report.target_ids),
        "scans": list(report.scan_ids),
        "scan_count": report.scan_count,
        "mean_m": _matrix_to_json(report.mean_distance),
        "std_mm": _matrix_to_json(report.std_distance),
        "mean_m_table": _matrix_to_json(report.mean_distance, 3),
        "std_mm_table": _matrix_to_json(report.std_distance, 1),
        "max_std_mm": report.max_std,
        "tolerance_mm": report.tolerance,
        "verdict": report.verdict,
        "metadata": dict(report.metadata),
    }


def accuracy_report_json(report: AccuracyReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_accuracy_report_json(path) -> AccuracyReport:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return AccuracyReport(
            target_ids=tuple(data["targets"]),
            scan_ids=tuple(data["scans"]),
            mean_distance=_matrix_from_json(data["mean_m"]),
            std_distance=_matrix_from_json(data["std_mm"]),
            max_std=float(data["max_std_mm"]),
            tolerance=float(data["tolerance_mm"]),
            verdict=data["verdict"],
            metadata=dict(data.get("metadata", {})),
        )
    except KeyError as exc:
        raise FormatError(f"accuracy report lacks key {exc.args[0]!r}", path) from None


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def read_observations(path) -> list:
    """Target centres from ``scan_id target_id x y z`` lines."""
    obs = []
    for lineno, tok in _data_lines(path):
        if len(tok) != 5:
            raise FormatError(f"expected 'scan_id target_id x y z', found {len(tok)} fields", path, lineno)
        try:
            x, y, z = (float(t) for t in tok[2:])
        except ValueError:
            raise FormatError("cannot parse coordinate", path, lineno) from None
        if not all(math.isfinite(v) for v in (x, y, z)):
            raise FormatError("non-finite coordinate", path, lineno)
        obs.append(TargetObservation(tok[1], tok[0], Point3(x, y, z)))
    return obs


def write_observations(observations, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ob in observations:
            x, y, z = (float(v) for v in ob.center)
            fh.write(f"{ob.scan_id} {ob.target_id} {x!r} {y!r} {z!r}\n")


def read_distance_observations(path) -> dict:
    """Directly measured distances from ``scan_id target_a target_b distance_m`` lines."""
    out = {}
    for lineno, tok in _data_lines(path):
        if len(tok) != 4:
            raise FormatError(
                f"expected 'scan_id target_a target_b distance_m', found {len(tok)} fields", path, lineno
            )
        try:
            d = float(tok[3])
        except ValueError:
            raise FormatError("cannot parse distance", path, lineno) from None
        scan = out.setdefault(tok[0], {})
        if (tok[1], tok[2]) in scan or (tok[2], tok[1]) in scan:
            raise FormatError(f"pair ({tok[1]}, {tok[2]}) repeated in scan {tok[0]!r}", path, lineno)
        scan[(tok[1], tok[2])] = d
    return out
