"""Two-epoch deformation maps: DSM differencing, statistics, heatmaps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core.cloud import PointCloud
from .errors import FormatError, InsufficientPointsError, NoOverlapError, ValidationError
from .raster import NODATA, RasterGrid, bin_points, grid_shape

DEFAULT_CELL = 0.05
DEFAULT_RANGE = 0.02
DEFAULT_TOLERANCE = 0.005
DEFAULT_RAMP = "blue-white-red"
NODATA_COLOR = (0, 0, 0)

# Diverging ramp anchors at t = -1, 0, +1.
RAMPS = {
    "blue-white-red": ((0, 0, 255), (255, 255, 255), (255, 0, 0)),
}


@dataclass(frozen=True, eq=False)
class ChangeMap:
    """Cellwise height change ``epoch_b - epoch_a`` on a shared grid."""

    grid: RasterGrid
    epoch_a_id: str = ""
    epoch_b_id: str = ""

    @property
    def valid(self) -> np.ndarray:
        return self.grid.valid

    def deltas(self) -> np.ndarray:
        """Valid Δz values in row-major order."""
        return self.grid.values[self.grid.valid]


@dataclass(frozen=True)
class ChangeSummary:
    mean: float
    rms: float
    max_abs: float
    tolerance: float
    fraction_within: float
    bands: tuple
    valid_cells: int

    def to_dict(self) -> dict:
        return {
            "mean_m": self.mean,
            "rms_m": self.rms,
            "max_abs_m": self.max_abs,
            "tolerance_m": self.tolerance,
            "fraction_within": self.fraction_within,
            "valid_cells": self.valid_cells,
            "bands": [
                {"lower_m": lo, "upper_m": hi, "count": n} for lo, hi, n in self.bands
            ],
        }


def vertical_distance(epoch_a: PointCloud, epoch_b: PointCloud, cell: float = DEFAULT_CELL) -> ChangeMap:
    """Difference of mean-height DSMs of two registered epochs.

    Both clouds are binned onto one grid anchored at the lower-left corner
    of the intersection of their xy bounding boxes. Cells missing data in
    either epoch are NODATA.
    """
    if not cell > 0:
        raise ValidationError("cell size must be > 0")
    if len(epoch_a) == 0 or len(epoch_b) == 0:
        raise InsufficientPointsError("both epochs need at least one point")
    if epoch_a.frame != epoch_b.frame:
        raise ValidationError(
            f"epochs are in different frames ({epoch_a.frame!r} vs {epoch_b.frame!r}); register them first"
        )
    lo = np.maximum(epoch_a.xyz[:, :2].min(axis=0), epoch_b.xyz[:, :2].min(axis=0))
    hi = np.minimum(epoch_a.xyz[:, :2].max(axis=0), epoch_b.xyz[:, :2].max(axis=0))
    if (hi < lo).any():
        raise NoOverlapError("no overlap between the epochs' xy extents")
    shape = grid_shape(lo, hi, cell)
    dsm_a = bin_points(epoch_a.xyz, lo, cell, shape, "mean")
    dsm_b = bin_points(epoch_b.xyz, lo, cell, shape, "mean")
    both = (dsm_a != NODATA) & (dsm_b != NODATA)
    delta = np.where(both, dsm_b - dsm_a, NODATA)
    grid = RasterGrid((lo[0], lo[1]), cell, delta)
    return ChangeMap(grid, epoch_a.source, epoch_b.source)


def fraction_within(change: ChangeMap, tolerance: float) -> float:
    d = change.deltas()
    if len(d) == 0:
        raise InsufficientPointsError("change map has no valid cells")
    return float(np.count_nonzero(np.abs(d) <= tolerance)) / len(d)


def summarize(change: ChangeMap, tolerance: float = DEFAULT_TOLERANCE, bands=()) -> ChangeSummary:
    """Statistics over valid cells.

    ``bands`` are strictly increasing thresholds ``t0 < t1 < ... < tm``;
    band ``i`` counts cells with ``t_i <= dz < t_(i+1)``.
    """
    d = change.deltas()
    if len(d) == 0:
        raise InsufficientPointsError("change map has no valid cells")
    if not tolerance >= 0:
        raise ValidationError("tolerance must be >= 0")
    thresholds = [float(t) for t in bands]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError("band thresholds must be strictly increasing")
    values = d.tolist()
    n = len(values)
    mean = math.fsum(values) / n
    rms = math.sqrt(math.fsum(v * v for v in values) / n)
    counts = []
    for lo, hi in zip(thresholds, thresholds[1:]):
        counts.append((lo, hi, int(np.count_nonzero((d >= lo) & (d < hi)))))
    return ChangeSummary(
        mean=mean,
        rms=rms,
        max_abs=float(np.abs(d).max()),
        tolerance=float(tolerance),
        fraction_within=float(np.count_nonzero(np.abs(d) <= tolerance)) / n,
        bands=tuple(counts),
        valid_cells=n,
    )


def write_summary_json(summary: ChangeSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def ramp_colors(dz, range_m: float, ramp: str = DEFAULT_RAMP) -> np.ndarray:
    """RGB bytes for height changes on a diverging ramp.

    With ``t = clip(dz, -r, r) / r`` and anchors ``lo, mid, hi``::

        channel = mid + t * (mid - lo)   for t < 0
        channel = mid + t * (hi - mid)   for t >= 0

    rounded half-up to an integer in 0..255.
    """
    if not range_m > 0:
        raise ValidationError("heatmap range must be > 0")
    if ramp not in RAMPS:
        raise ValidationError(f"unknown ramp {ramp!r}; choose from {sorted(RAMPS)}")
    lo, mid, hi = (np.array(c, dtype=np.float64) for c in RAMPS[ramp])
    t = np.clip(np.asarray(dz, dtype=np.float64), -range_m, range_m) / range_m
    t = t[..., None]
    rgb = np.where(t < 0, mid + t * (mid - lo), mid + t * (hi - mid))
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def heatmap_pixels(change: ChangeMap, range_m: float = DEFAULT_RANGE, ramp: str = DEFAULT_RAMP) -> np.ndarray:
    """``(nrows, ncols, 3)`` image, top row = northernmost grid row."""
    vals = change.grid.values
    rgb = ramp_colors(np.where(change.valid, vals, 0.0), range_m, ramp)
    rgb[~change.valid] = NODATA_COLOR
    return rgb[::-1]


def export_heatmap(change: ChangeMap, path, range_m: float = DEFAULT_RANGE, ramp: str = DEFAULT_RAMP) -> Path:
    """Write a binary PPM heatmap plus ``<path>.legend.txt``; returns the legend path."""
    pixels = heatmap_pixels(change, range_m, ramp)
    path = Path(path)
    write_ppm(pixels, path)
    legend = path.with_name(path.name + ".legend.txt")
    lo, mid, hi = RAMPS[ramp]
    with open(legend, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"range_m = {float(range_m)!r}\n")
        fh.write(f"ramp = {ramp}\n")
        fh.write(f"ramp_anchors = {' '.join(','.join(map(str, c)) for c in (lo, mid, hi))}\n")
        fh.write(f"nodata_color = {','.join(map(str, NODATA_COLOR))}\n")
    return legend


def write_ppm(pixels: np.ndarray, path) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6, maxval 255) PPM into an ``(h, w, 3)`` uint8 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header", path)
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError("only P6 images with maxval 255 are supported", path)
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos:]
    if len(body) != w * h * 3:
        raise FormatError(f"expected {w * h * 3} pixel bytes, found {len(body)}", path)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
