"""Voxelized 3D keypoint likelihoods and differentiable soft-argmax.

Volumes are (D, H, W) arrays of per-voxel likelihood; index axes (k, i, j)
map to metric axes (z, y, x) of a root-relative extent box. Normalization
is a softmax over all voxels of a volume; localization is the expectation
of voxel coordinates under the normalized volume, mapped linearly onto the
metric extent (index 0 at the extent minimum, index n-1 at the maximum,
a single-voxel axis at the midpoint).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .kinematics import Frame, KeypointSet

NORM_TOL = 1e-9


@dataclass(frozen=True)
class VoxelGridSpec:
    counts: tuple  # (D, H, W) voxel counts for the (z, y, x) axes
    lo: tuple  # metric extent minimum, (x, y, z) mm
    hi: tuple  # metric extent maximum, (x, y, z) mm

    def __post_init__(self):
        if len(self.counts) != 3 or any(int(c) < 1 for c in self.counts):
            raise ValueError("voxel counts must be three integers >= 1")
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if not np.all(hi > lo):
            raise ValueError("extent must have positive volume")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))

    @classmethod
    def centered(cls, center, half_extent, counts=(64, 64, 64)):
        center = np.asarray(center, dtype=float)
        h = float(half_extent)
        return cls(tuple(counts), tuple(center - h), tuple(center + h))


def default_grid_for(model, counts=(64, 64, 64)):
    """Cube over the robot: half-extent 1.25x the model's maximum reach."""
    from .kinematics import max_reach

    return VoxelGridSpec.centered((0.0, 0.0, 0.0), 1.25 * max_reach(model), counts)


@dataclass(frozen=True)
class Heatmap3D:
    """N normalized per-keypoint volumes, shape (N, D, H, W)."""

    volumes: np.ndarray

    def __post_init__(self):
        vol = np.asarray(self.volumes, dtype=float)
        if vol.ndim != 4:
            raise ValueError(f"expected (N, D, H, W) volumes, got shape {vol.shape}")
        sums = vol.reshape(vol.shape[0], -1).sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > NORM_TOL:
            raise ValueError("volumes are not normalized")
        object.__setattr__(self, "volumes", vol)

    def __len__(self):
        return self.volumes.shape[0]


def normalize(scores):
    """Softmax each volume over all of its voxels (temperature 1).

    Constant volumes (including all-zero) normalize to uniform weights;
    non-finite scores are rejected.
    """
    raw = np.asarray(scores, dtype=float)
    if raw.ndim == 3:
        raw = raw[None]
    if raw.ndim != 4:
        raise ValueError(f"expected (N, D, H, W) scores, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("scores contain non-finite values")
    flat = raw.reshape(raw.shape[0], -1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Heatmap3D((e / e.sum(axis=1, keepdims=True)).reshape(raw.shape))


def _check_normalized(vol):
    vol = np.asarray(vol, dtype=float)
    if vol.ndim != 3:
        raise ValueError(f"expected one (D, H, W) volume, got shape {vol.shape}")
    if abs(vol.sum() - 1.0) > NORM_TOL:
        raise ValueError("unnormalized input")
    return vol


def soft_argmax(volume):
    """Expected (k, i, j) voxel coordinate under one normalized volume."""
    vol = _check_normalized(volume)
    d, h, w = vol.shape
    k = np.sum(vol.sum(axis=(1, 2)) * np.arange(d))
    i = np.sum(vol.sum(axis=(0, 2)) * np.arange(h))
    j = np.sum(vol.sum(axis=(0, 1)) * np.arange(w))
    return np.array([k, i, j])


def soft_argmax_score_jacobian(scores):
    """d(soft_argmax)/d(raw scores) through the softmax, shape (3, D, H, W).

    With weights s = softmax(z) and coordinate c = sum_v idx_v s_v the
    derivative is dc_a/dz_w = s_w (idx_w,a - c_a).
    """
    raw = np.asarray(scores, dtype=float)
    s = normalize(raw[None]).volumes[0]
    d, h, w = s.shape
    idx = np.stack(np.meshgrid(
        np.arange(d), np.arange(h), np.arange(w), indexing="ij",
    )).astype(float)  # (3, D, H, W)
    c = soft_argmax(s)
    return s[None] * (idx - c[:, None, None, None])


def _axis_pitch(lo, hi, n):
    return (hi - lo) / (n - 1) if n > 1 else 0.0


def voxel_to_metric(coord, spec):
    """Map a (k, i, j) voxel coordinate to a root-relative (x, y, z) point."""
    coord = np.asarray(coord, dtype=float).reshape(3)
    counts = spec.counts
    for a in range(3):
        if not -1e-9 <= coord[a] <= counts[a] - 1 + 1e-9:
            raise ValueError(
                f"voxel coordinate {coord[a]} outside index box axis {a}"
            )
    out = np.empty(3)
    # coord axes (k, i, j) correspond to metric axes (z, y, x)
    for metric_axis, vol_axis in ((0, 2), (1, 1), (2, 0)):
        lo, hi = spec.lo[metric_axis], spec.hi[metric_axis]
        n = counts[vol_axis]
        if n == 1:
            out[metric_axis] = 0.5 * (lo + hi)
        else:
            out[metric_axis] = lo + coord[vol_axis] * _axis_pitch(lo, hi, n)
    return out


def metric_to_voxel(point, spec):
    """Inverse of voxel_to_metric (single-voxel axes map to index 0)."""
    point = np.asarray(point, dtype=float).reshape(3)
    out = np.empty(3)
    for metric_axis, vol_axis in ((0, 2), (1, 1), (2, 0)):
        lo, hi = spec.lo[metric_axis], spec.hi[metric_axis]
        n = spec.counts[vol_axis]
        if n == 1:
            out[vol_axis] = 0.0
        else:
            out[vol_axis] = (point[metric_axis] - lo) / _axis_pitch(lo, hi, n)
    return out


def keypoints_from_heatmaps(heatmap, spec):
    """soft_argmax + voxel_to_metric per volume -> root-relative keypoints."""
    pts = np.array([
        voxel_to_metric(soft_argmax(v), spec) for v in heatmap.volumes
    ])
    return KeypointSet(pts, Frame.ROOT_RELATIVE)


def gaussian_scores(spec, centers_mm, sigma_vox=1.5):
    """Raw log-Gaussian scores peaked at metric centers (test fixtures).

    Softmax of these scores is a discretized isotropic Gaussian in voxel
    space, so keypoints_from_heatmaps recovers the centers up to
    discretization error.
    """
    centers = np.atleast_2d(np.asarray(centers_mm, dtype=float))
    d, h, w = spec.counts
    idx = np.stack(np.meshgrid(
        np.arange(d), np.arange(h), np.arange(w), indexing="ij",
    )).astype(float)
    out = np.empty((centers.shape[0], d, h, w))
    for n, c in enumerate(centers):
        mu = metric_to_voxel(c, spec)
        diff2 = ((idx - mu[:, None, None, None]) ** 2).sum(axis=0)
        out[n] = -diff2 / (2.0 * sigma_vox * sigma_vox)
    return out


_MAGIC = b"HM3D"


def write_volumes(path, volumes):
    """Binary dump: magic, uint32 (N, D, H, W) little-endian, float64 values."""
    vol = np.ascontiguousarray(np.asarray(volumes, dtype="<f8"))
    if vol.ndim != 4:
        raise ValueError(f"expected (N, D, H, W) volumes, got shape {vol.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", *vol.shape))
        fh.write(vol.tobytes())


def read_volumes(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a heatmap volume file: bad magic {magic!r}")
        shape = struct.unpack("<4I", fh.read(16))
        data = fh.read()
    expected = int(np.prod(shape)) * 8
    if len(data) != expected:
        raise ValueError("truncated heatmap volume file")
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()
