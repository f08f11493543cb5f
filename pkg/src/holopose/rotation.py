"""6D continuous rotation representation, conversions, and angle errors.

A rotation is parameterized by the first two columns (a1, a2) of a rotation
matrix, orthonormalized by Gram-Schmidt. This chart is continuous over
SO(3), which is why the estimator optimizes in it. Angles at the public
API are degrees.
"""

import math
import warnings

import numpy as np

R6_EPS = 1e-9
ORTHO_TOL = 1e-9


class DegenerateRotationError(ValueError):
    """Raised for 6D inputs that Gram-Schmidt cannot orthonormalize."""


def _cross3(a, b):
    # np.cross has prohibitive call overhead for single 3-vectors
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def r6_to_matrix(r6):
    """Gram-Schmidt the 6D representation into an orthonormal matrix.

    b1 = normalize(a1); b2 = normalize(a2 - (b1.a2) b1); b3 = b1 x b2;
    the result has columns (b1, b2, b3).
    """
    r6 = np.asarray(r6, dtype=float)
    if r6.shape != (6,):
        raise ValueError(f"expected 6 components, got shape {r6.shape}")
    a1, a2 = r6[:3], r6[3:]
    n1 = math.sqrt(a1 @ a1)
    if n1 <= R6_EPS:
        raise DegenerateRotationError("first 6D vector is near zero")
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    n2 = math.sqrt(u @ u)
    if n2 <= R6_EPS:
        raise DegenerateRotationError("6D vectors are near parallel")
    b2 = u / n2
    out = np.empty((3, 3))
    out[:, 0] = b1
    out[:, 1] = b2
    out[:, 2] = _cross3(b1, b2)
    return out


def matrix_to_r6(rot):
    """First two columns of an orthonormal rotation matrix."""
    rot = np.asarray(rot, dtype=float)
    check_rotation(rot)
    return np.concatenate((rot[:, 0], rot[:, 1]))


def check_rotation(rot, tol=ORTHO_TOL):
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got shape {rot.shape}")
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > tol:
        raise ValueError("matrix is not orthonormal")
    if abs(np.linalg.det(rot) - 1.0) > tol:
        raise ValueError("matrix determinant is not +1")
    return rot


def geodesic_angle(rot_a, rot_b):
    """Rotation distance arccos((trace(Ra^T Rb) - 1) / 2) in degrees."""
    rot_a = np.asarray(rot_a, dtype=float)
    rot_b = np.asarray(rot_b, dtype=float)
    c = (np.trace(rot_a.T @ rot_b) - 1.0) / 2.0
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def euler_xyz(rot):
    """Extrinsic XYZ Euler angles (degrees) of R = Rz(tz) Ry(ty) Rx(tx).

    Near gimbal lock (|ty| ~ 90 deg) tx is pinned to 0 and the remaining
    freedom folded into tz; a warning is emitted by euler_angle_errors.
    """
    rot = np.asarray(rot, dtype=float)
    sy = -rot[2, 0]
    sy = np.clip(sy, -1.0, 1.0)
    ty = np.arcsin(sy)
    if abs(abs(sy) - 1.0) < 1e-12:
        tx = 0.0
        tz = np.arctan2(-rot[0, 1], rot[1, 1])
    else:
        tx = np.arctan2(rot[2, 1], rot[2, 2])
        tz = np.arctan2(rot[1, 0], rot[0, 0])
    return np.degrees(np.array([tx, ty, tz]))


def _wrap_abs_deg(delta):
    # absolute angular difference folded into [0, 180]
    return abs((delta + 180.0) % 360.0 - 180.0)


def euler_angle_errors(rot_pred, rot_gt):
    """Per-axis absolute extrinsic-XYZ Euler differences in [0, 180] degrees."""
    check_rotation(rot_pred)
    check_rotation(rot_gt)
    ep = euler_xyz(rot_pred)
    eg = euler_xyz(rot_gt)
    for e in (ep, eg):
        if abs(abs(e[1]) - 90.0) < 1e-6:
            warnings.warn("Euler decomposition near gimbal lock", RuntimeWarning)
    return np.array([_wrap_abs_deg(ep[i] - eg[i]) for i in range(3)])


def r6_to_matrix_jacobian(r6):
    """Rotation matrix plus its derivative w.r.t. the 6 parameters.

    Returns (R, dR) with dR of shape (3, 3, 6): dR[:, :, k] is the
    derivative of R w.r.t. r6[k]. Used to assemble analytic gradients of
    anything differentiable through the rotation.
    """
    r6 = np.asarray(r6, dtype=float)
    a1, a2 = r6[:3], r6[3:]
    n1 = math.sqrt(a1 @ a1)
    if n1 <= R6_EPS:
        raise DegenerateRotationError("first 6D vector is near zero")
    b1 = a1 / n1
    eye = np.eye(3)
    db1_da1 = (eye - np.outer(b1, b1)) / n1  # (3,3): db1_i/da1_j

    u = a2 - (b1 @ a2) * b1
    n2 = math.sqrt(u @ u)
    if n2 <= R6_EPS:
        raise DegenerateRotationError("6D vectors are near parallel")
    b2 = u / n2
    # u = a2 - (b1.a2) b1
    du_db1 = -(np.outer(b1, a2) + (b1 @ a2) * eye)
    du_da1 = du_db1 @ db1_da1
    du_da2 = eye - np.outer(b1, b1)
    db2_du = (eye - np.outer(b2, b2)) / n2
    db2_da1 = db2_du @ du_da1
    db2_da2 = db2_du @ du_da2

    def cross_mat(v):
        return np.array([
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ])

    # b3 = b1 x b2 => db3 = db1 x b2 + b1 x db2
    db3_da1 = -cross_mat(b2) @ db1_da1 + cross_mat(b1) @ db2_da1
    db3_da2 = cross_mat(b1) @ db2_da2

    rot = np.empty((3, 3))
    rot[:, 0] = b1
    rot[:, 1] = b2
    rot[:, 2] = _cross3(b1, b2)
    drot = np.zeros((3, 3, 6))
    drot[:, 0, :3] = db1_da1
    drot[:, 1, :3] = db2_da1
    drot[:, 2, :3] = db3_da1
    drot[:, 1, 3:] = db2_da2
    drot[:, 2, 3:] = db3_da2
    return rot, drot


def rotation_about(axis, angle_deg):
    """Rotation matrix about a unit axis by an angle in degrees."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    t = np.radians(angle_deg)
    c, s = np.cos(t), np.sin(t)
    x, y, z = axis
    return np.array([
        [c + (1 - c) * x * x, (1 - c) * x * y - s * z, (1 - c) * x * z + s * y],
        [(1 - c) * x * y + s * z, c + (1 - c) * y * y, (1 - c) * y * z - s * x],
        [(1 - c) * x * z - s * y, (1 - c) * y * z + s * x, c + (1 - c) * z * z],
    ])
