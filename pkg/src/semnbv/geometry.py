"""Shared geometric primitives: poses, camera frustum model, voxel indexing.

World frame is right-handed with z up.  Yaw rotates about +z (yaw 0 looks
along +x), pitch tilts the optical axis upward.  All distances are metres,
all angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(angle, math.tau)
    if a <= -math.pi:
        a += math.tau
    return a


@dataclass(frozen=True)
class Pose:
    """Sensor pose: position in metres, yaw/pitch in radians.

    Yaw is normalized to (-pi, pi] on construction.  Planner-produced poses
    keep pitch at 0 (forward-mounted camera on a yaw-controlled platform);
    nonzero pitch is supported for metric evaluation.
    """

    position: np.ndarray
    yaw: float
    pitch: float = 0.0

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "pitch", float(self.pitch))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole depth camera: per-axis FOV, pixel grid, maximum ray length."""

    horizontal_fov: float
    vertical_fov: float
    width: int
    height: int
    max_range: float

    def __post_init__(self):
        if not (0.0 < self.horizontal_fov < math.pi):
            raise ValueError(f"horizontal_fov out of (0, pi): {self.horizontal_fov}")
        if not (0.0 < self.vertical_fov < math.pi):
            raise ValueError(f"vertical_fov out of (0, pi): {self.vertical_fov}")
        if self.max_range <= 0.0:
            raise ValueError(f"max_range must be positive: {self.max_range}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1 pixel")


class VoxelIndex(NamedTuple):
    """Signed integer grid coordinates of one voxel."""

    i: int
    j: int
    k: int


def voxel_of(point: np.ndarray, voxel_size: float) -> VoxelIndex:
    """Grid index of the voxel containing a world point."""
    idx = np.floor(np.asarray(point, dtype=np.float64) / voxel_size).astype(np.int64)
    return VoxelIndex(int(idx[0]), int(idx[1]), int(idx[2]))


def voxel_center(index, voxel_size: float) -> np.ndarray:
    """World position of a voxel center: (index + 0.5) * voxel_size."""
    return (np.asarray(index, dtype=np.float64) + 0.5) * voxel_size


def optical_axis(pose: Pose) -> np.ndarray:
    """Unit vector along the camera optical axis for a yaw/pitch pose."""
    cp = math.cos(pose.pitch)
    return np.array(
        [cp * math.cos(pose.yaw), cp * math.sin(pose.yaw), math.sin(pose.pitch)],
        dtype=np.float64,
    )


def camera_basis(pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (forward, right, up) camera frame for a roll-free pose."""
    forward = optical_axis(pose)
    right = np.array([math.sin(pose.yaw), -math.cos(pose.yaw), 0.0])
    up = np.cross(right, forward)
    return forward, right, up


def frustum_contains(camera: CameraModel, pose: Pose, point: np.ndarray) -> bool:
    """True iff the point is inside the camera's view pyramid.

    Membership requires Euclidean distance in (0, max_range] and the point
    within both per-axis FOV half-angles of the optical axis.
    """
    d = np.asarray(point, dtype=np.float64) - pose.position
    dist = math.sqrt(float(d @ d))
    if dist <= 0.0 or dist > camera.max_range:
        return False
    forward, right, up = camera_basis(pose)
    xf = float(d @ forward)
    if xf <= 0.0:
        return False
    tan_h = math.tan(0.5 * camera.horizontal_fov)
    tan_v = math.tan(0.5 * camera.vertical_fov)
    return abs(float(d @ right)) <= xf * tan_h and abs(float(d @ up)) <= xf * tan_v


def generate_rays(camera: CameraModel, pose: Pose, step: int = 1) -> np.ndarray:
    """Unit ray directions through a subsampled pixel grid, shape (n, 3).

    Pixels are sampled at column/row indices 0, step, 2*step, ... and rays
    pass through the sampled pixel's center; ordering is row-major (top row
    first, left to right).  step >= 1.
    """
    if step < 1:
        raise ValueError(f"step must be >= 1: {step}")
    us = np.arange(0, camera.width, step, dtype=np.float64)
    vs = np.arange(0, camera.height, step, dtype=np.float64)
    tan_h = math.tan(0.5 * camera.horizontal_fov)
    tan_v = math.tan(0.5 * camera.vertical_fov)
    # Tangent-plane offsets of each pixel center; v grows downward in the image.
    x_t = tan_h * (2.0 * (us + 0.5) / camera.width - 1.0)
    y_t = tan_v * (1.0 - 2.0 * (vs + 0.5) / camera.height)
    forward, right, up = camera_basis(pose)
    xx = np.tile(x_t, len(vs))
    yy = np.repeat(y_t, len(us))
    dirs = forward[None, :] + xx[:, None] * right[None, :] + yy[:, None] * up[None, :]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs
