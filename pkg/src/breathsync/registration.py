"""Closed-form rigid pose estimation from point correspondences.

Cross-covariance SVD solution of min_R,t sum ||R a_i + t - b_i||^2 with
reflection correction, applied here to superimpose lung models at the
tracked location.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import LungMesh


class DegenerateConfigurationError(ValueError):
    """Too few or collinear correspondences: the pose is not unique."""


@dataclass(frozen=True)
class Pose:
    """Proper rigid motion: x -> rotation @ x + translation."""

    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=float))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=float))
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthogonal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det = +1)")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def estimate_rigid_pose(sources, targets) -> Pose:
    """Least-squares rotation and translation mapping sources onto targets.

    Requires at least 3 non-collinear source points.  The solution is exact
    for noise-free correspondences and optimal in the least-squares sense
    otherwise.
    """
    A = np.asarray(sources, dtype=float)
    B = np.asarray(targets, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError("sources and targets must both have shape (n, 3)")
    if A.shape[0] < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    ca = A.mean(axis=0)
    cb = B.mean(axis=0)
    Ac = A - ca
    # collinear sources leave a free rotation about the common axis
    s = np.linalg.svd(Ac, compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateConfigurationError("source points are collinear")
    H = Ac.T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cb - R @ ca
    return Pose(R, t)


def apply_pose(mesh: LungMesh, pose: Pose) -> LungMesh:
    """Rigidly transform a mesh; polar coordinates are recomputed."""
    return LungMesh.from_vertices(pose.apply(mesh.vertices()), mesh.triangles)
