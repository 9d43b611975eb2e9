"""Weak-perspective camera: global rotation, uniform scale, 2D translation.

Conventions (used consistently by the rasterizer and all projections):
  * after the global rotation the camera looks down +z; smaller view depth is
    nearer;
  * image frame has its origin at the top-left pixel center, x right, y down;
    projected coordinates are in pixel units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import Mesh, rot6d_to_matrix
from .errors import NotRigid


@dataclass
class CameraParams:
    """Weak-perspective parameters: rotation (6D), scale, 2D translation."""

    rot6d: object        # (6,)
    scale: object        # scalar > 0
    translation: object  # (2,)

    def validate(self) -> None:
        rot6d_to_matrix(ad.detach(self.rot6d))
        if not float(ad.detach(self.scale)) > 0.0:
            raise ValueError("camera scale must be positive")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; validated rigid on construction."""

    rotation: np.ndarray   # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or \
                np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or \
                abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise NotRigid("rotation part is not a proper rotation")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other (apply ``other`` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points):
        return points @ self.rotation.T + self.translation


def project(points, cam: CameraParams):
    """Rotate, drop z, scale, translate: (N, 3) points to (N, 2) pixels."""
    r = rot6d_to_matrix(cam.rot6d)
    rotated = points @ ad.transpose(r)
    return cam.scale * rotated[:, :2] + cam.translation


def view_depth(points, cam: CameraParams):
    """Third coordinate after the global rotation; smaller is nearer."""
    r = rot6d_to_matrix(cam.rot6d)
    return (points @ ad.transpose(r))[:, 2]


def apply_extrinsics(mesh: Mesh, rel: RigidTransform) -> Mesh:
    """Rigidly transform a mesh (used by extrinsics-aware view comparison)."""
    return Mesh(vertices=mesh.vertices @ rel.rotation.T + rel.translation,
                faces=mesh.faces)
