"""Hot numeric kernels: kinematic chain evaluation and capsule rasterization.

Two execution backends share one source of truth:

* ``numba`` -- the kernel functions are compiled with ``@njit(cache=True)``.
* ``numpy`` -- the same functions run as plain Python/NumPy (chain kernels),
  plus a vectorized twin for the rasterizer (a Python pixel loop would be
  unusable).

Selection is via the ``HOLOPOSE_BACKEND`` environment variable ("numba" or
"numpy"), read once at import time. Default is numba when importable.
Both paths execute the same arithmetic in the same order, so results are
bit-identical; ``benchmarks/bench_backends.py`` compares their speed.

Conventions used by the chain kernels: links are indexed in topological
order with the base at 0; ``parent[l]`` is -1 for the base. ``kind[l]``
encodes the joint that produces link l (0 fixed, 1 revolute, 2 prismatic),
with ``axis[l]`` in the joint frame and ``qidx[l]`` the moving-joint slot
(-1 for fixed). Joint values ``q`` are radians (revolute) or millimeters
(prismatic). All positions are millimeters in the robot root frame.
"""

import os

import numpy as np

_flag = os.environ.get("HOLOPOSE_BACKEND", "").strip().lower()
if _flag not in ("", "numba", "numpy"):
    raise ValueError(
        f"HOLOPOSE_BACKEND must be 'numba' or 'numpy', got {_flag!r}"
    )

_use_numba = _flag != "numpy"
if _use_numba:
    try:
        from numba import njit as _njit
    except ImportError:
        if _flag == "numba":
            raise
        _use_numba = False

BACKEND = "numba" if _use_numba else "numpy"


def _compile(func):
    if _use_numba:
        return _njit(cache=True, nogil=True)(func)
    return func


@_compile
def _mat3_mul(a, b):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = a[i, 0] * b[0, j] + a[i, 1] * b[1, j] + a[i, 2] * b[2, j]
    return out


@_compile
def _mat3_vec(a, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = a[i, 0] * v[0] + a[i, 1] * v[1] + a[i, 2] * v[2]
    return out


@_compile
def _rodrigues(axis, angle):
    # R = I cos + [axis]x sin + (1-cos) axis axis^T, axis unit
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out = np.empty((3, 3))
    out[0, 0] = c + t * x * x
    out[0, 1] = t * x * y - s * z
    out[0, 2] = t * x * z + s * y
    out[1, 0] = t * x * y + s * z
    out[1, 1] = c + t * y * y
    out[1, 2] = t * y * z - s * x
    out[2, 0] = t * x * z - s * y
    out[2, 1] = t * y * z + s * x
    out[2, 2] = c + t * z * z
    return out


@_compile
def fk_frames(parent, rloc, ploc, kind, axis, qidx, q):
    """Walk the chain and return per-link frames in the root frame.

    Returns (Rw, pw, wax, worg): link rotations (L,3,3), link origins (L,3),
    world joint axes (L,3) and world joint anchor points (L,3). Axis/anchor
    entries of the base and of fixed joints are zeros/anchors but unused.
    """
    nl = parent.shape[0]
    rw = np.empty((nl, 3, 3))
    pw = np.empty((nl, 3))
    wax = np.zeros((nl, 3))
    worg = np.zeros((nl, 3))
    for l in range(nl):
        par = parent[l]
        if par < 0:
            for i in range(3):
                for j in range(3):
                    rw[l, i, j] = 1.0 if i == j else 0.0
                pw[l, i] = 0.0
            continue
        r0 = _mat3_mul(rw[par], rloc[l])
        p0 = _mat3_vec(rw[par], ploc[l])
        for i in range(3):
            p0[i] += pw[par, i]
        k = kind[l]
        if k == 1:
            rj = _rodrigues(axis[l], q[qidx[l]])
            rw[l] = _mat3_mul(r0, rj)
            pw[l] = p0
        elif k == 2:
            rw[l] = r0
            d = _mat3_vec(r0, axis[l])
            qv = q[qidx[l]]
            for i in range(3):
                pw[l, i] = p0[i] + qv * d[i]
        else:
            rw[l] = r0
            pw[l] = p0
        wax[l] = _mat3_vec(r0, axis[l])
        worg[l] = p0
    return rw, pw, wax, worg


@_compile
def fk_points(parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off):
    """Keypoint positions in the robot root frame, shape (N, 3)."""
    rw, pw, _, _ = fk_frames(parent, rloc, ploc, kind, axis, qidx, q)
    n = kp_link.shape[0]
    x = np.empty((n, 3))
    for i in range(n):
        l = kp_link[i]
        v = _mat3_vec(rw[l], kp_off[i])
        for a in range(3):
            x[i, a] = v[a] + pw[l, a]
    return x


@_compile
def fk_points_jac(parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off):
    """Keypoints plus the analytic joint Jacobian in the root frame.

    Returns (X (N,3), J (N,3,nq)) with J per radian / per millimeter.
    Revolute column: w x (x - o); prismatic column: w (world axis).
    """
    rw, pw, wax, worg = fk_frames(parent, rloc, ploc, kind, axis, qidx, q)
    n = kp_link.shape[0]
    nq = q.shape[0]
    x = np.empty((n, 3))
    jac = np.zeros((n, 3, nq))
    for i in range(n):
        l = kp_link[i]
        v = _mat3_vec(rw[l], kp_off[i])
        for a in range(3):
            x[i, a] = v[a] + pw[l, a]
        while l >= 0:
            j = qidx[l]
            if j >= 0:
                if kind[l] == 1:
                    rx = x[i, 0] - worg[l, 0]
                    ry = x[i, 1] - worg[l, 1]
                    rz = x[i, 2] - worg[l, 2]
                    jac[i, 0, j] = wax[l, 1] * rz - wax[l, 2] * ry
                    jac[i, 1, j] = wax[l, 2] * rx - wax[l, 0] * rz
                    jac[i, 2, j] = wax[l, 0] * ry - wax[l, 1] * rx
                else:
                    jac[i, 0, j] = wax[l, 0]
                    jac[i, 1, j] = wax[l, 1]
                    jac[i, 2, j] = wax[l, 2]
            l = parent[l]
    return x, jac


# Ray-capsule test: squared distance from the pixel ray {s*(dx,dy,1), s>=0}
# to the segment {A + u*(B-A), u in [0,1]}, compared against radius^2.
# The scalar (numba) and broadcast (numpy) forms below perform the same
# elementwise arithmetic in the same order, so masks match bit for bit.

def _rasterize_loop(seg_a, seg_b, radius, fx, fy, cx, cy, width, height):
    mask = np.zeros((height, width), dtype=np.uint8)
    m = seg_a.shape[0]
    for iy in range(height):
        dy = (iy + 0.5 - cy) / fy
        for ix in range(width):
            dx = (ix + 0.5 - cx) / fx
            a00 = dx * dx + dy * dy + 1.0
            for k in range(m):
                ax, ay, az = seg_a[k, 0], seg_a[k, 1], seg_a[k, 2]
                d1x = seg_b[k, 0] - ax
                d1y = seg_b[k, 1] - ay
                d1z = seg_b[k, 2] - az
                a11 = d1x * d1x + d1y * d1y + d1z * d1z
                a01 = dx * d1x + dy * d1y + d1z
                b0 = dx * ax + dy * ay + az
                b1 = d1x * ax + d1y * ay + d1z * az
                det = a00 * a11 - a01 * a01
                if det > 1e-12 * a00 * a11:
                    u = (a01 * b0 - a00 * b1) / det
                    if u < 0.0:
                        u = 0.0
                    elif u > 1.0:
                        u = 1.0
                else:
                    u = 0.0
                s = (b0 + u * a01) / a00
                if s < 0.0:
                    s = 0.0
                if a11 > 1e-12:
                    u = (s * a01 - b1) / a11
                    if u < 0.0:
                        u = 0.0
                    elif u > 1.0:
                        u = 1.0
                gx = s * dx - ax - u * d1x
                gy = s * dy - ay - u * d1y
                gz = s - az - u * d1z
                if gx * gx + gy * gy + gz * gz <= radius[k] * radius[k]:
                    mask[iy, ix] = 1
                    break
    return mask


def _rasterize_numpy(seg_a, seg_b, radius, fx, fy, cx, cy, width, height):
    mask = np.zeros((height, width), dtype=np.uint8)
    dx = ((np.arange(width) + 0.5 - cx) / fx)[None, :]
    dy = ((np.arange(height) + 0.5 - cy) / fy)[:, None]
    a00 = dx * dx + dy * dy + 1.0
    for k in range(seg_a.shape[0]):
        ax, ay, az = seg_a[k, 0], seg_a[k, 1], seg_a[k, 2]
        d1x = seg_b[k, 0] - ax
        d1y = seg_b[k, 1] - ay
        d1z = seg_b[k, 2] - az
        a11 = d1x * d1x + d1y * d1y + d1z * d1z
        a01 = dx * d1x + dy * d1y + d1z
        b0 = dx * ax + dy * ay + az
        b1 = d1x * ax + d1y * ay + d1z * az
        det = a00 * a11 - a01 * a01
        safe = det > 1e-12 * a00 * a11
        u = np.where(safe, (a01 * b0 - a00 * b1) / np.where(safe, det, 1.0), 0.0)
        np.clip(u, 0.0, 1.0, out=u)
        s = np.maximum((b0 + u * a01) / a00, 0.0)
        if a11 > 1e-12:
            u = np.clip((s * a01 - b1) / a11, 0.0, 1.0)
        gx = s * dx - ax - u * d1x
        gy = s * dy - ay - u * d1y
        gz = s - az - u * d1z
        mask |= (gx * gx + gy * gy + gz * gz <= radius[k] * radius[k])
    return mask


if _use_numba:
    rasterize_capsules = _njit(cache=True, nogil=True)(_rasterize_loop)
else:
    rasterize_capsules = _rasterize_numpy


def warmup():
    """Force JIT compilation of every kernel (no-op on the numpy backend)."""
    parent = np.array([-1, 0], dtype=np.int64)
    rloc = np.stack([np.eye(3), np.eye(3)])
    ploc = np.zeros((2, 3))
    kind = np.array([0, 1], dtype=np.int64)
    axis = np.zeros((2, 3))
    axis[1, 2] = 1.0
    qidx = np.array([-1, 0], dtype=np.int64)
    q = np.array([0.1])
    kp_link = np.array([1], dtype=np.int64)
    kp_off = np.array([[1.0, 0.0, 0.0]])
    fk_points(parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off)
    fk_points_jac(parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off)
    rasterize_capsules(
        np.array([[0.0, 0.0, 500.0]]), np.array([[0.0, 0.0, 600.0]]),
        np.array([50.0]), 100.0, 100.0, 8.0, 8.0, 16, 16,
    )
