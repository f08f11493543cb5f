"""Pinhole projection, bounding boxes, and the coarse/refined depth split.

Depth decomposition: a normalized coarse depth is computed from intrinsics
and the ratio of the robot's real area to its bounding-box area,
d_c = sqrt(fx fy A_real / A_bbox), then corrected multiplicatively,
d = lambda * d_c. Lifting adds the root depth to root-relative keypoints
along z only; the root entry of the lifted set is the camera-to-robot
translation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import Frame, KeypointSet


class BehindCameraError(ValueError):
    """A point with non-positive depth was projected."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @classmethod
    def centered(cls, fx, fy, width, height):
        """Principal point defaulted to the image center."""
        return cls(fx, fy, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class DepthEstimate:
    """Coarse depth, correction factor, and their product d = lambda * d_c."""

    d_c: float
    lam: float
    d: float

    def __post_init__(self):
        if not self.d_c > 0:
            raise ValueError("coarse depth must be positive")
        if self.d != self.lam * self.d_c:
            raise ValueError("inconsistent depth estimate: d != lam * d_c")


@dataclass(frozen=True)
class BoundingBox:
    umin: float
    vmin: float
    umax: float
    vmax: float

    def __post_init__(self):
        if self.umax < self.umin or self.vmax < self.vmin:
            raise ValueError("bounding box max < min")

    @property
    def area(self):
        return (self.umax - self.umin) * (self.vmax - self.vmin)


def _as_points(points):
    if isinstance(points, KeypointSet):
        if points.frame is Frame.ROOT_RELATIVE:
            raise ValueError("cannot project root-relative keypoints")
        return points.points
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


def project(points, intr, strict=True):
    """Project camera-frame points; returns (uv (N,2), in_frame (N,) bool).

    u = fx x/z + cx, v = fy y/z + cy. With strict=True any non-positive
    depth raises BehindCameraError; with strict=False those rows come back
    NaN with in_frame False (used by the fitter to reject bad steps).
    """
    pts = _as_points(points)
    z = pts[:, 2]
    bad = z <= 0.0
    if strict and np.any(bad):
        raise BehindCameraError("point behind camera (z <= 0)")
    with np.errstate(invalid="ignore", divide="ignore"):
        zsafe = np.where(bad, np.nan, z)
        u = intr.fx * pts[:, 0] / zsafe + intr.cx
        v = intr.fy * pts[:, 1] / zsafe + intr.cy
    uv = np.column_stack((u, v))
    in_frame = (
        ~bad & (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
    )
    return uv, in_frame


def project_jacobian(points, intr):
    """(uv, d(uv)/d(xyz)) with the Jacobian of shape (N, 2, 3)."""
    pts = _as_points(points)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(z <= 0.0):
        raise BehindCameraError("point behind camera (z <= 0)")
    uv = np.column_stack((intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy))
    jac = np.zeros((pts.shape[0], 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / (z * z)
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / (z * z)
    return uv, jac


def back_project(uv, depth, intr):
    """Pixel + depth -> camera-frame point."""
    u, v = float(uv[0]), float(uv[1])
    return np.array([
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    ])


def coarse_depth(intr, a_real, a_bbox):
    """d_c = sqrt(fx fy A_real / A_bbox), millimeters."""
    if a_real <= 0.0 or a_bbox <= 0.0:
        raise ValueError("areas must be positive")
    return math.sqrt(intr.fx * intr.fy * a_real / a_bbox)


def refine_depth(lam, d_c):
    """Apply the correction factor: DepthEstimate with d = lam * d_c."""
    if d_c <= 0.0:
        raise ValueError("coarse depth must be positive")
    d = lam * d_c
    if d <= 0.0:
        raise ValueError("non-positive depth after correction")
    return DepthEstimate(d_c=float(d_c), lam=float(lam), d=float(d))


def lift_keypoints(root_relative, depth, root_index):
    """Shift root-relative keypoints to absolute by the root depth.

    P'_i = P^r_i + (0, 0, d); the translation is the lifted root entry.
    Returns (KeypointSet(lifted_absolute), t).
    """
    if isinstance(root_relative, KeypointSet):
        if root_relative.frame is not Frame.ROOT_RELATIVE:
            raise ValueError(f"expected root-relative input, got {root_relative.frame}")
        pr = root_relative.points
    else:
        pr = np.asarray(root_relative, dtype=float)
    n = pr.shape[0]
    if not 0 <= root_index < n:
        raise IndexError(f"root index {root_index} out of range for {n} keypoints")
    lifted = pr + np.array([0.0, 0.0, float(depth)])
    return KeypointSet(lifted, Frame.LIFTED_ABSOLUTE), lifted[root_index].copy()


def keypoint_bbox(points2d, in_frame, intr, padding=20.0):
    """Axis-aligned box over in-frame points, padded then clipped to the image."""
    pts = np.asarray(points2d, dtype=float)
    in_frame = np.asarray(in_frame, dtype=bool)
    if not np.any(in_frame):
        raise ValueError("no in-frame points to bound")
    sel = pts[in_frame]
    umin = max(float(sel[:, 0].min()) - padding, 0.0)
    vmin = max(float(sel[:, 1].min()) - padding, 0.0)
    umax = min(float(sel[:, 0].max()) + padding, float(intr.width))
    vmax = min(float(sel[:, 1].max()) + padding, float(intr.height))
    return BoundingBox(umin, vmin, umax, vmax)
