"""Compute kernel outputs for fixed inputs; used for backend parity checks.

Usage: python _backend_probe.py OUT.npz   (HOLOPOSE_BACKEND set by caller)
"""

import sys

import numpy as np

from holopose import kernels


def build_inputs():
    rng = np.random.default_rng(1234)
    nl = 9
    parent = np.arange(-1, nl - 1, dtype=np.int64)
    parent[4] = 1  # small branch
    rloc = np.empty((nl, 3, 3))
    ploc = rng.uniform(-200, 200, (nl, 3))
    for i in range(nl):
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        t = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(t), np.sin(t)
        x, y, z = a
        rloc[i] = [
            [c + (1 - c) * x * x, (1 - c) * x * y - s * z, (1 - c) * x * z + s * y],
            [(1 - c) * x * y + s * z, c + (1 - c) * y * y, (1 - c) * y * z - s * x],
            [(1 - c) * x * z - s * y, (1 - c) * y * z + s * x, c + (1 - c) * z * z],
        ]
    kind = np.array([0, 1, 2, 1, 1, 0, 1, 2, 1], dtype=np.int64)
    axis = rng.normal(size=(nl, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    qidx = np.full(nl, -1, dtype=np.int64)
    slot = 0
    for i in range(nl):
        if kind[i] != 0:
            qidx[i] = slot
            slot += 1
    q = rng.uniform(-1.5, 1.5, slot)
    kp_link = np.array([0, 2, 4, 6, 8], dtype=np.int64)
    kp_off = rng.uniform(-100, 100, (5, 3))
    seg_a = rng.uniform(-300, 300, (6, 3)) + [0, 0, 1500]
    seg_b = rng.uniform(-300, 300, (6, 3)) + [0, 0, 1500]
    radius = rng.uniform(20, 80, 6)
    return (parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off,
            seg_a, seg_b, radius)


def main(out_path):
    (parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off,
     seg_a, seg_b, radius) = build_inputs()
    x = kernels.fk_points(parent, rloc, ploc, kind, axis, qidx, q, kp_link, kp_off)
    xj, jac = kernels.fk_points_jac(parent, rloc, ploc, kind, axis, qidx, q,
                                    kp_link, kp_off)
    mask = kernels.rasterize_capsules(seg_a, seg_b, radius,
                                      400.0, 400.0, 80.0, 60.0, 160, 120)
    np.savez(out_path, backend=kernels.BACKEND, x=x, xj=xj, jac=jac,
             mask=np.asarray(mask, dtype=np.uint8))


if __name__ == "__main__":
    main(sys.argv[1])
