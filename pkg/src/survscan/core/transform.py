"""Rigid (rotation + translation) transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .cloud import PointCloud

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Maps a point ``p`` to ``rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64, copy=True)
        trans = np.array(self.translation, dtype=np.float64, copy=True).reshape(-1)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValidationError("rotation must be 3x3 and translation a 3-vector")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise ValidationError("transform contains non-finite values")
        gram_err = np.abs(rot.T @ rot - np.eye(3)).max()
        if gram_err > ORTHONORMAL_TOL:
            raise ValidationError(f"rotation is not orthonormal (max |R^T R - I| = {gram_err:.3g})")
        if np.linalg.det(rot) <= 0:
            raise ValidationError("rotation has determinant -1 (reflection)")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, offset) -> "RigidTransform":
        return cls(np.eye(3), offset)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rodrigues rotation of ``angle`` radians about ``axis``."""
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        kx, ky, kz = axis
        k = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
        rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        return cls(rot, translation)

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply_points(self, xyz) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        pts = np.asarray(xyz, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def apply_transform(cloud: PointCloud, t: RigidTransform, frame: str | None = None) -> PointCloud:
    """Move every point of ``cloud`` by ``t``; attributes travel unchanged.

    ``frame`` replaces the cloud's frame tag when given.
    """
    return cloud.replace(
        xyz=t.apply_points(cloud.xyz),
        frame=cloud.frame if frame is None else frame,
    )
