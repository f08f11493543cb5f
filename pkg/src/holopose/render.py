"""Capsule-based robot silhouettes for mask-consistency evaluation.

Links are approximated by capsules declared in the robot description; a
pixel is set when the ray through its center passes within a capsule's
radius (analytic ray-capsule test, executed by the kernels backend).
Masks read/write as binary PGM (P5) files.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kinematics import CapsuleSpec, RigidPose, link_frames_internal, q_to_internal


@dataclass(frozen=True)
class CapsuleSet:
    """Link-frame capsules for one robot model."""

    capsules: tuple  # CapsuleSpec

    def __post_init__(self):
        if not self.capsules:
            raise ValueError("empty capsule set")
        for c in self.capsules:
            if not isinstance(c, CapsuleSpec):
                raise TypeError(f"expected CapsuleSpec, got {type(c)}")

    @classmethod
    def from_model(cls, model):
        return cls(tuple(model.capsules))

    def __len__(self):
        return len(self.capsules)


@dataclass(frozen=True)
class PosedCapsules:
    """Capsules transformed into the camera frame (mm)."""

    seg_a: np.ndarray  # (M, 3)
    seg_b: np.ndarray  # (M, 3)
    radius: np.ndarray  # (M,)


@dataclass(frozen=True)
class BinaryMask:
    pixels: np.ndarray  # (H, W) bool

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"expected (H, W) mask, got shape {px.shape}")
        object.__setattr__(self, "pixels", px.astype(bool))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def area(self):
        return int(self.pixels.sum())


def pose_capsules(model, capsule_set, q, pose):
    """Transform link-frame capsule endpoints through FK into the camera frame."""
    rw, pw = link_frames_internal(model, q_to_internal(model, q))
    index = model.compiled.link_index
    rot, t = pose.rotation, pose.translation
    m = len(capsule_set)
    seg_a = np.empty((m, 3))
    seg_b = np.empty((m, 3))
    radius = np.empty(m)
    for i, c in enumerate(capsule_set.capsules):
        l = index[c.link]
        seg_a[i] = rot @ (rw[l] @ np.asarray(c.p0) + pw[l]) + t
        seg_b[i] = rot @ (rw[l] @ np.asarray(c.p1) + pw[l]) + t
        radius[i] = c.radius
    return PosedCapsules(seg_a, seg_b, radius)


def rasterize_silhouette(posed, intr):
    """Deterministic binary silhouette of camera-frame capsules.

    A pixel is true when the ray through its center (sampled at pixel
    centers, x+0.5) passes within a capsule radius. If every capsule lies
    fully behind the camera an empty mask is returned with a warning.
    """
    if np.all((posed.seg_a[:, 2] <= 0.0) & (posed.seg_b[:, 2] <= 0.0)):
        warnings.warn("all capsules behind the camera; empty mask", RuntimeWarning)
        return BinaryMask(np.zeros((intr.height, intr.width), dtype=bool))
    mask = kernels.rasterize_capsules(
        np.ascontiguousarray(posed.seg_a, dtype=float),
        np.ascontiguousarray(posed.seg_b, dtype=float),
        np.ascontiguousarray(posed.radius, dtype=float),
        float(intr.fx), float(intr.fy), float(intr.cx), float(intr.cy),
        int(intr.width), int(intr.height),
    )
    return BinaryMask(mask.astype(bool))


def render_silhouette(model, q, pose, intr, capsule_set=None):
    """Convenience wrapper: pose the model's capsules and rasterize."""
    if capsule_set is None:
        capsule_set = CapsuleSet.from_model(model)
    return rasterize_silhouette(pose_capsules(model, capsule_set, q, pose), intr)


def mask_iou(mask_a, mask_b):
    """Intersection over union; defined as 1.0 when both masks are empty."""
    a, b = mask_a.pixels, mask_b.pixels
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def write_pgm(path, mask):
    """Binary PGM (P5), 255 for set pixels."""
    px = mask.pixels
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode("ascii"))
        fh.write((px.astype(np.uint8) * 255).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    try:
        width, height = (int(t) for t in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise ValueError(f"{path}: bad PGM header: {exc}") from None
    raster = parts[3]
    if maxval != 255 or len(raster) != width * height:
        raise ValueError(f"{path}: unsupported or truncated PGM")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return BinaryMask(px > 127)
