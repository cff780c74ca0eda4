"""Point-cloud data model.

Clouds are column-oriented: one ``(N, 3)`` float64 coordinate array plus
optional per-point attribute arrays. All arrays are copied on construction
and flagged read-only, so a cloud can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..errors import ValidationError

# Class codes follow the LAS convention.
UNASSIGNED = 0
NON_GROUND = 1
GROUND = 2
TARGET = 64
NOISE = 65
CLASS_CODES = (UNASSIGNED, NON_GROUND, GROUND, TARGET, NOISE)

LOCAL_PREFIX = "local:"
GEOREF_PREFIX = "georeferenced:"


def local_frame(scan_id: str) -> str:
    """Frame tag for coordinates in a scanner's own system."""
    return LOCAL_PREFIX + str(scan_id)


def georef_frame(crs_name: str) -> str:
    """Frame tag for coordinates in an earth-fixed system."""
    return GEOREF_PREFIX + str(crs_name)


def is_georeferenced(frame: str) -> bool:
    return frame.startswith(GEOREF_PREFIX)


class Point3(NamedTuple):
    """A single point; used for query locations and target centres."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with optional attributes.

    Attributes:
        xyz: ``(N, 3)`` float64 coordinates in meters.
        intensity: optional ``(N,)`` float64 in [0, 1].
        rgb: optional ``(N, 3)`` uint8 colours.
        classification: ``(N,)`` uint8 class codes (see ``CLASS_CODES``).
        frame: coordinate-frame tag, ``local:<scan>`` or
            ``georeferenced:<crs>``.
        epoch: acquisition time as Unix seconds (UTC), or None.
        source: free-form provenance string.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    rgb: Optional[np.ndarray] = None
    classification: Optional[np.ndarray] = None
    frame: str = "local:0"
    epoch: Optional[int] = None
    source: str = ""

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64, copy=True)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValidationError(f"xyz must have shape (N, 3), got {xyz.shape}")
        n = len(xyz)
        if not np.isfinite(xyz).all():
            bad = int(np.flatnonzero(~np.isfinite(xyz).all(axis=1))[0])
            raise ValidationError(f"non-finite coordinate at point {bad}")
        object.__setattr__(self, "xyz", _frozen(xyz))

        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=np.float64, copy=True).reshape(-1)
            if len(inten) != n:
                raise ValidationError("intensity length does not match point count")
            if not (np.isfinite(inten).all() and (inten >= 0).all() and (inten <= 1).all()):
                raise ValidationError("intensity values must lie in [0, 1]")
            object.__setattr__(self, "intensity", _frozen(inten))

        if self.rgb is not None:
            raw = np.asarray(self.rgb)
            if raw.size == 0:
                raw = raw.reshape(0, 3)
            if raw.shape != (n, 3):
                raise ValidationError(f"rgb must have shape ({n}, 3), got {raw.shape}")
            if raw.dtype != np.uint8 and ((raw < 0).any() or (raw > 255).any()):
                raise ValidationError("rgb components must be integers in 0..255")
            object.__setattr__(self, "rgb", _frozen(raw.astype(np.uint8, copy=True)))

        if self.classification is None:
            labels = np.zeros(n, dtype=np.uint8)
        else:
            labels = np.array(self.classification, copy=True).reshape(-1)
            if len(labels) != n:
                raise ValidationError("classification length does not match point count")
            if not np.isin(labels, CLASS_CODES).all():
                raise ValidationError(f"class labels must be one of {CLASS_CODES}")
            labels = labels.astype(np.uint8)
        object.__setattr__(self, "classification", _frozen(labels))

        if self.epoch is not None:
            object.__setattr__(self, "epoch", int(self.epoch))

    def __len__(self) -> int:
        return len(self.xyz)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, frame={self.frame!r}, source={self.source!r})"

    @property
    def x(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    def point(self, i: int) -> Point3:
        x, y, z = self.xyz[i]
        return Point3(float(x), float(y), float(z))

    def subset(self, selector) -> "PointCloud":
        """Points selected by a boolean mask or an index array, order kept."""
        sel = np.asarray(selector)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        return PointCloud(
            self.xyz[sel],
            intensity=None if self.intensity is None else self.intensity[sel],
            rgb=None if self.rgb is None else self.rgb[sel],
            classification=self.classification[sel],
            frame=self.frame,
            epoch=self.epoch,
            source=self.source,
        )

    def replace(self, **changes) -> "PointCloud":
        """Copy of this cloud with some fields swapped out."""
        kwargs = dict(
            xyz=self.xyz,
            intensity=self.intensity,
            rgb=self.rgb,
            classification=self.classification,
            frame=self.frame,
            epoch=self.epoch,
            source=self.source,
        )
        kwargs.update(changes)
        return PointCloud(**kwargs)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) corners; raises on an empty cloud."""
        if len(self) == 0:
            raise ValidationError("empty cloud has no bounds")
        return self.xyz.min(axis=0), self.xyz.max(axis=0)


def concatenate(clouds) -> PointCloud:
    """Stack clouds sharing one frame; attributes kept only if all carry them."""
    clouds = list(clouds)
    if not clouds:
        return PointCloud(np.empty((0, 3)))
    frames = {c.frame for c in clouds}
    if len(frames) != 1:
        raise ValidationError(f"cannot merge clouds from different frames: {sorted(frames)}")
    inten = None
    if all(c.intensity is not None for c in clouds):
        inten = np.concatenate([c.intensity for c in clouds])
    rgb = None
    if all(c.rgb is not None for c in clouds):
        rgb = np.concatenate([c.rgb for c in clouds])
    return PointCloud(
        np.concatenate([c.xyz for c in clouds]),
        intensity=inten,
        rgb=rgb,
        classification=np.concatenate([c.classification for c in clouds]),
        frame=clouds[0].frame,
        epoch=clouds[0].epoch,
        source="+".join(c.source for c in clouds if c.source),
    )
