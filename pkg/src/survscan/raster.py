"""Digital surface models: rasterization, hole filling, stockpile volume.

Grid convention: ``values[r, c]`` covers
``x in [x0 + c*cell, x0 + (c+1)*cell)`` and ``y in [y0 + r*cell, y0 + (r+1)*cell)``,
so row 0 is the southern (lowest y) row. ESRI ASCII files store the
northern row first; :func:`write_asc` and :func:`read_asc` flip accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core.cloud import PointCloud
from .errors import FormatError, InsufficientPointsError, ValidationError

NODATA = -9999.0
AGGREGATORS = ("mean", "max", "min")
DEFAULT_CELL = 0.05
DEFAULT_AGGREGATOR = "mean"
DEFAULT_MAX_RING = 3
IDW_POWER = 2
MIN_IDW_NEIGHBOURS = 3


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Regular height grid with a NODATA sentinel.

    ``interpolated`` optionally flags cells whose value came from
    :func:`fill_holes` rather than from measured points.
    """

    origin: tuple
    cell: float
    values: np.ndarray
    interpolated: Optional[np.ndarray] = None
    nodata: float = NODATA

    def __post_init__(self):
        if not self.cell > 0:
            raise ValidationError("cell size must be > 0")
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValidationError(f"grid values must be a non-empty 2D array, got shape {vals.shape}")
        ok = np.isfinite(vals) | (vals == self.nodata)
        if not ok.all():
            raise ValidationError("grid values must be finite or the nodata sentinel")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell", float(self.cell))
        if self.interpolated is not None:
            mask = np.array(self.interpolated, dtype=bool, copy=True)
            if mask.shape != vals.shape:
                raise ValidationError("interpolated mask shape does not match the grid")
            mask.flags.writeable = False
            object.__setattr__(self, "interpolated", mask)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values != self.nodata

    @property
    def measured(self) -> np.ndarray:
        """Cells holding data that did not come from interpolation."""
        if self.interpolated is None:
            return self.valid
        return self.valid & ~self.interpolated

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.ncols) + 0.5) * self.cell
        ys = self.origin[1] + (np.arange(self.nrows) + 0.5) * self.cell
        return xs, ys

    def masked(self) -> np.ma.MaskedArray:
        return np.ma.masked_equal(self.values, self.nodata)


@dataclass(frozen=True)
class VolumeResult:
    volume: float
    area: float
    base_height: float
    filled_cells: int
    interpolated_cells: int
    cells_above_base: int


def grid_shape(lower, upper, cell: float) -> tuple[int, int]:
    """(nrows, ncols) of a grid anchored at ``lower`` that contains ``upper``."""
    ncols = int(math.floor((upper[0] - lower[0]) / cell)) + 1
    nrows = int(math.floor((upper[1] - lower[1]) / cell)) + 1
    return nrows, ncols


def bin_points(xyz: np.ndarray, origin, cell: float, shape, aggregator: str = DEFAULT_AGGREGATOR) -> np.ndarray:
    """Aggregate z into a fixed grid; points outside the grid are ignored."""
    if aggregator not in AGGREGATORS:
        raise ValidationError(f"aggregator must be one of {AGGREGATORS}, got {aggregator!r}")
    nrows, ncols = shape
    col = np.floor((xyz[:, 0] - origin[0]) / cell)
    row = np.floor((xyz[:, 1] - origin[1]) / cell)
    inside = (col >= 0) & (col < ncols) & (row >= 0) & (row < nrows)
    flat = (row[inside].astype(np.int64) * ncols + col[inside].astype(np.int64))
    z = xyz[inside, 2]
    size = nrows * ncols
    counts = np.bincount(flat, minlength=size)
    occupied = counts > 0
    out = np.full(size, NODATA)
    if aggregator == "mean":
        sums = np.bincount(flat, weights=z, minlength=size)
        out[occupied] = sums[occupied] / counts[occupied]
    elif aggregator == "max":
        acc = np.full(size, -np.inf)
        np.maximum.at(acc, flat, z)
        out[occupied] = acc[occupied]
    else:
        acc = np.full(size, np.inf)
        np.minimum.at(acc, flat, z)
        out[occupied] = acc[occupied]
    return out.reshape(nrows, ncols)


def rasterize_dsm(cloud: PointCloud, cell: float = DEFAULT_CELL,
                  aggregator: str = DEFAULT_AGGREGATOR) -> RasterGrid:
    """Bin a cloud's heights into a grid spanning its xy bounding box."""
    if len(cloud) == 0:
        raise InsufficientPointsError("cannot rasterize an empty cloud")
    if not cell > 0:
        raise ValidationError("cell size must be > 0")
    lo = cloud.xyz[:, :2].min(axis=0)
    hi = cloud.xyz[:, :2].max(axis=0)
    shape = grid_shape(lo, hi, cell)
    values = bin_points(cloud.xyz, lo, cell, shape, aggregator)
    return RasterGrid((lo[0], lo[1]), cell, values)


def _ring_offsets(r: int):
    """Offsets on the square ring at Chebyshev distance ``r``, row-major."""
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if max(abs(dr), abs(dc)) == r:
                yield dr, dc


def fill_holes(grid: RasterGrid, max_ring: int = DEFAULT_MAX_RING):
    """Inverse-distance-weighted filling of NODATA cells.

    For each empty cell, square rings of radius 1, 2, ... are searched for
    measured cells until at least three have been found or ``max_ring`` is
    reached. The cell receives the IDW (power 2, centre-to-centre distance)
    mean of everything found. Only measured cells serve as sources, so
    fills never feed other fills and a second call changes nothing.
    Cells with no measured neighbour within ``max_ring`` stay NODATA.

    Returns:
        (new grid, number of cells filled by this call)
    """
    if max_ring < 1:
        raise ValidationError("max_ring must be >= 1")
    vals = grid.values
    src = grid.measured
    target = ~grid.valid
    if not target.any():
        return grid, 0
    nrows, ncols = vals.shape
    pad = max_ring
    src_p = np.zeros((nrows + 2 * pad, ncols + 2 * pad), dtype=bool)
    src_p[pad:pad + nrows, pad:pad + ncols] = src
    val_p = np.zeros_like(src_p, dtype=np.float64)
    val_p[pad:pad + nrows, pad:pad + ncols] = np.where(src, vals, 0.0)

    acc_wv = np.zeros(vals.shape)
    acc_w = np.zeros(vals.shape)
    acc_n = np.zeros(vals.shape, dtype=np.int64)
    searching = target.copy()
    cell2 = grid.cell * grid.cell
    for r in range(1, max_ring + 1):
        if not searching.any():
            break
        for dr, dc in _ring_offsets(r):
            s = src_p[pad + dr:pad + dr + nrows, pad + dc:pad + dc + ncols]
            hit = searching & s
            if not hit.any():
                continue
            w = 1.0 / ((dr * dr + dc * dc) * cell2) ** (IDW_POWER / 2)
            v = val_p[pad + dr:pad + dr + nrows, pad + dc:pad + dc + ncols]
            acc_wv[hit] += w * v[hit]
            acc_w[hit] += w
            acc_n[hit] += 1
        searching &= acc_n < MIN_IDW_NEIGHBOURS

    fill = target & (acc_n > 0)
    out = vals.copy()
    out[fill] = acc_wv[fill] / acc_w[fill]
    interp = fill if grid.interpolated is None else (grid.interpolated | fill)
    return RasterGrid(grid.origin, grid.cell, out, interpolated=interp, nodata=grid.nodata), int(fill.sum())


def volume_area(grid: RasterGrid, base: Union[str, float] = "lowest") -> VolumeResult:
    """Stockpile volume and footprint above a base height.

    Every filled cell is a column of footprint ``cell**2`` and height
    ``value - base``; only positive heights contribute. ``base="lowest"``
    uses the minimum filled cell value. The sum is exactly rounded
    (``math.fsum``), so it does not depend on evaluation order.
    """
    valid = grid.valid
    if not valid.any():
        raise InsufficientPointsError("grid has no filled cells")
    vals = grid.values[valid]
    if isinstance(base, str):
        if base != "lowest":
            raise ValidationError(f"base must be 'lowest' or a height, got {base!r}")
        base_height = float(vals.min())
    else:
        base_height = float(base)
        if not math.isfinite(base_height):
            raise ValidationError("base height must be finite")
    heights = vals - base_height
    above = heights > 0
    cell2 = grid.cell * grid.cell
    volume = cell2 * math.fsum(heights[above].tolist())
    n_above = int(above.sum())
    n_interp = 0 if grid.interpolated is None else int((grid.interpolated & valid).sum())
    return VolumeResult(
        volume=volume,
        area=n_above * cell2,
        base_height=base_height,
        filled_cells=int(valid.sum()),
        interpolated_cells=n_interp,
        cells_above_base=n_above,
    )


ASC_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_asc(grid: RasterGrid, path) -> None:
    """Write an ESRI ASCII grid (northern row first)."""
    header = [
        f"ncols {grid.ncols}",
        f"nrows {grid.nrows}",
        f"xllcorner {_fmt(grid.origin[0])}",
        f"yllcorner {_fmt(grid.origin[1])}",
        f"cellsize {_fmt(grid.cell)}",
        f"NODATA_value {_fmt(grid.nodata)}",
    ]
    body = [" ".join(_fmt(v) for v in row) for row in grid.values[::-1].tolist()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(header + body) + "\n")


def read_asc(path) -> RasterGrid:
    """Read an ESRI ASCII grid written in the fixed six-key header layout."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = {}
    for i, key in enumerate(ASC_KEYS):
        if i >= len(lines):
            raise FormatError(f"missing header key {key!r}", path, i + 1)
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key.lower():
            raise FormatError(f"expected header key {key!r}, found {lines[i]!r}", path, i + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise FormatError(f"header key {key!r} has non-numeric value {parts[1]!r}", path, i + 1) from None
    for key in ("ncols", "nrows"):
        v = header[key]
        if v != int(v) or v < 1:
            raise FormatError(f"header key {key!r} must be a positive integer", path)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if not header["cellsize"] > 0:
        raise FormatError("header key 'cellsize' must be > 0", path)
    tokens = " ".join(lines[len(ASC_KEYS):]).split()
    if len(tokens) != nrows * ncols:
        raise FormatError(f"expected {nrows * ncols} values, found {len(tokens)}", path)
    try:
        vals = np.array(tokens, dtype=np.float64).reshape(nrows, ncols)[::-1]
    except ValueError:
        raise FormatError("grid body contains a non-numeric value", path) from None
    file_nodata = header["NODATA_value"]
    vals = np.where(vals == file_nodata, NODATA, vals)
    return RasterGrid((header["xllcorner"], header["yllcorner"]), header["cellsize"], vals)
