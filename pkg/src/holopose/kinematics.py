"""Robot description parsing, forward kinematics, and analytic Jacobians.

The description dialect is a URDF subset: links, joints of type
revolute/prismatic/fixed with origin (xyz in millimeters, rpy in radians),
unit axis, and limits (degrees for revolute, millimeters for prismatic),
plus two extensions inside <robot>: named <keypoint> frame attachments and
per-link <capsule> annotations for silhouette rendering. Meshes, visuals,
and inertials are ignored.

Public joint states are degrees (revolute) / millimeters (prismatic);
everything internal runs in radians / millimeters. Conversion happens only
at API boundaries.
"""

import enum
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .rotation import r6_to_matrix_jacobian, check_rotation

AXIS_TOL = 1e-9


class RobotDescriptionError(ValueError):
    """Raised for malformed or structurally invalid robot descriptions."""


class Frame(enum.Enum):
    """Which of the three keypoint frames a set of points lives in."""

    ROOT_RELATIVE = "root_relative"
    LIFTED_ABSOLUTE = "lifted_absolute"
    FK_ABSOLUTE = "fk_absolute"


@dataclass(frozen=True)
class KeypointSet:
    """N 3D points (mm) tagged with their coordinate frame."""

    points: np.ndarray
    frame: Frame

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidPose:
    """Camera-frame placement of the robot base: x_cam = R x_robot + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


class JointKind(enum.Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"
    FIXED = "fixed"


_KIND_CODE = {JointKind.FIXED: 0, JointKind.REVOLUTE: 1, JointKind.PRISMATIC: 2}


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: JointKind
    parent: str
    child: str
    origin_xyz: tuple  # mm
    origin_rpy: tuple  # radians
    axis: tuple  # unit vector, zeros for fixed
    limits: tuple | None  # (lower, upper) in degrees or mm; None for fixed
    q_index: int = -1

    def __post_init__(self):
        if self.kind is not JointKind.FIXED:
            n = math.sqrt(sum(c * c for c in self.axis))
            if abs(n - 1.0) > AXIS_TOL:
                raise RobotDescriptionError(
                    f"joint {self.name!r}: axis must have unit norm"
                )
            if self.limits is None:
                raise RobotDescriptionError(
                    f"joint {self.name!r}: moving joint requires limits"
                )
            if self.limits[0] > self.limits[1]:
                raise RobotDescriptionError(
                    f"joint {self.name!r}: limits.lower > limits.upper"
                )
        elif self.limits is not None:
            raise RobotDescriptionError(
                f"joint {self.name!r}: fixed joints carry no limits"
            )


@dataclass(frozen=True)
class KeypointSpec:
    name: str
    link: str
    offset: tuple  # mm, in the link frame


@dataclass(frozen=True)
class CapsuleSpec:
    """Per-link capsule annotation: two endpoints (link frame, mm) + radius."""

    link: str
    p0: tuple
    p1: tuple
    radius: float

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise RobotDescriptionError("capsule radius must be positive")
        for p in (self.p0, self.p1):
            if not all(math.isfinite(c) for c in p):
                raise RobotDescriptionError("capsule endpoints must be finite")


class _Compiled:
    """Flat-array view of a model, the layout the kernels consume."""

    def __init__(self, model):
        links = model.links
        index = {name: i for i, name in enumerate(links)}
        nl = len(links)
        self.link_index = index
        self.parent = np.full(nl, -1, dtype=np.int64)
        self.rloc = np.tile(np.eye(3), (nl, 1, 1))
        self.ploc = np.zeros((nl, 3))
        self.kind = np.zeros(nl, dtype=np.int64)
        self.axis = np.zeros((nl, 3))
        self.qidx = np.full(nl, -1, dtype=np.int64)
        for j in model.joints:
            l = index[j.child]
            self.parent[l] = index[j.parent]
            self.rloc[l] = rpy_matrix(*j.origin_rpy)
            self.ploc[l] = j.origin_xyz
            self.kind[l] = _KIND_CODE[j.kind]
            self.axis[l] = j.axis
            self.qidx[l] = j.q_index
        self.kp_link = np.array([index[k.link] for k in model.keypoints], dtype=np.int64)
        self.kp_off = np.array([k.offset for k in model.keypoints], dtype=float)
        moving = model.moving_joints
        self.q_revolute = np.array([j.kind is JointKind.REVOLUTE for j in moving])
        self.lo_pub = np.array([j.limits[0] for j in moving], dtype=float)
        self.hi_pub = np.array([j.limits[1] for j in moving], dtype=float)


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Kinematic tree plus keypoint attachments, rooted at a base link.

    joints are stored topologically ordered (parent link before child);
    q indexes follow the document order of the non-fixed joints, which for
    any parent-before-child document coincides with storage order.
    """

    name: str
    links: tuple  # link names, base first, topological order
    joints: tuple  # JointSpec, topological order
    keypoints: tuple  # KeypointSpec
    capsules: tuple = ()  # CapsuleSpec
    root_keypoint_index: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.keypoints:
            raise RobotDescriptionError("model declares no keypoints")
        x0 = fk_points_internal(self, np.zeros(self.dof))
        center = x0.mean(axis=0)
        root = int(np.argmin(np.linalg.norm(x0 - center, axis=1)))
        object.__setattr__(self, "root_keypoint_index", root)

    @property
    def dof(self):
        return sum(1 for j in self.joints if j.kind is not JointKind.FIXED)

    @property
    def moving_joints(self):
        ordered = [j for j in self.joints if j.kind is not JointKind.FIXED]
        ordered.sort(key=lambda j: j.q_index)
        return tuple(ordered)

    @property
    def num_keypoints(self):
        return len(self.keypoints)

    @cached_property
    def compiled(self):
        return _Compiled(self)

    def __eq__(self, other):
        if not isinstance(other, RobotModel):
            return NotImplemented
        return (
            self.name == other.name
            and self.links == other.links
            and self.joints == other.joints
            and self.keypoints == other.keypoints
            and self.capsules == other.capsules
        )


def rpy_matrix(roll, pitch, yaw):
    """URDF fixed-axis convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def _parse_vec(text, what, n=3):
    parts = (text or "").split()
    if len(parts) != n:
        raise RobotDescriptionError(f"{what}: expected {n} numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise RobotDescriptionError(f"{what}: {exc}") from None


def parse_robot_description(text):
    """Parse a URDF-subset document into a validated RobotModel."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise RobotDescriptionError(f"malformed XML: {exc}") from None
    if root.tag != "robot":
        raise RobotDescriptionError(f"expected <robot> root element, got <{root.tag}>")
    name = root.get("name", "robot")

    link_names = []
    for el in root.findall("link"):
        lname = el.get("name")
        if not lname:
            raise RobotDescriptionError("link without a name")
        if lname in link_names:
            raise RobotDescriptionError(f"duplicate link {lname!r}")
        link_names.append(lname)
    if not link_names:
        raise RobotDescriptionError("document declares no links")

    joints = []
    q_counter = 0
    seen_joint_names = set()
    for el in root.findall("joint"):
        jname = el.get("name")
        if not jname or jname in seen_joint_names:
            raise RobotDescriptionError(f"missing or duplicate joint name {jname!r}")
        seen_joint_names.add(jname)
        kind_text = el.get("type", "")
        try:
            kind = JointKind(kind_text)
        except ValueError:
            raise RobotDescriptionError(
                f"joint {jname!r}: unknown joint kind {kind_text!r}"
            ) from None
        parent_el, child_el = el.find("parent"), el.find("child")
        if parent_el is None or child_el is None:
            raise RobotDescriptionError(f"joint {jname!r}: missing parent/child")
        parent, child = parent_el.get("link"), child_el.get("link")
        for ref in (parent, child):
            if ref not in link_names:
                raise RobotDescriptionError(
                    f"joint {jname!r}: unknown link {ref!r}"
                )
        if parent == child:
            raise RobotDescriptionError(f"cyclic joint graph at joint {jname!r}")
        origin_el = el.find("origin")
        xyz = _parse_vec(origin_el.get("xyz", "0 0 0"), f"joint {jname!r} origin") \
            if origin_el is not None else (0.0, 0.0, 0.0)
        rpy = _parse_vec(origin_el.get("rpy", "0 0 0"), f"joint {jname!r} origin") \
            if origin_el is not None else (0.0, 0.0, 0.0)
        if kind is JointKind.FIXED:
            axis, limits, q_index = (0.0, 0.0, 0.0), None, -1
        else:
            axis_el = el.find("axis")
            if axis_el is None:
                raise RobotDescriptionError(f"joint {jname!r}: missing axis")
            axis = _parse_vec(axis_el.get("xyz"), f"joint {jname!r} axis")
            n = math.sqrt(sum(c * c for c in axis))
            if n <= AXIS_TOL:
                raise RobotDescriptionError(f"joint {jname!r}: zero axis")
            axis = tuple(c / n for c in axis)
            limit_el = el.find("limit")
            if limit_el is None or limit_el.get("lower") is None or limit_el.get("upper") is None:
                raise RobotDescriptionError(f"joint {jname!r}: missing limits")
            limits = (float(limit_el.get("lower")), float(limit_el.get("upper")))
            q_index = q_counter
            q_counter += 1
        joints.append(JointSpec(jname, kind, parent, child, xyz, rpy, axis, limits, q_index))

    joints, links = _topo_sort(link_names, joints)

    keypoints = []
    for el in root.findall("keypoint"):
        kname = el.get("name")
        klink = el.get("link")
        if klink not in link_names:
            raise RobotDescriptionError(
                f"keypoint {kname!r} references missing link {klink!r}"
            )
        offset = _parse_vec(el.get("xyz", "0 0 0"), f"keypoint {kname!r}")
        keypoints.append(KeypointSpec(kname or f"kp{len(keypoints)}", klink, offset))

    capsules = []
    for el in root.findall("capsule"):
        clink = el.get("link")
        if clink not in link_names:
            raise RobotDescriptionError(f"capsule references missing link {clink!r}")
        capsules.append(CapsuleSpec(
            clink,
            _parse_vec(el.get("from", "0 0 0"), "capsule endpoint"),
            _parse_vec(el.get("to", "0 0 0"), "capsule endpoint"),
            float(el.get("radius", "0")),
        ))

    return RobotModel(name, links, tuple(joints), tuple(keypoints), tuple(capsules))


def _topo_sort(link_names, joints):
    """Stable parent-before-child ordering; rejects cycles and forests."""
    produced = {}
    for j in joints:
        if j.child in produced:
            raise RobotDescriptionError(
                f"link {j.child!r} is the child of multiple joints"
            )
        produced[j.child] = j
    roots = [l for l in link_names if l not in produced]
    if len(roots) != 1:
        raise RobotDescriptionError(
            f"joint graph must have exactly one root link, found {roots or 'none'}"
        )
    available = {roots[0]}
    ordered_joints = []
    remaining = list(joints)
    while remaining:
        pick = next((j for j in remaining if j.parent in available), None)
        if pick is None:
            bad = ", ".join(j.name for j in remaining)
            raise RobotDescriptionError(f"cyclic joint graph involving: {bad}")
        remaining.remove(pick)
        available.add(pick.child)
        ordered_joints.append(pick)
    ordered_links = [roots[0]] + [j.child for j in ordered_joints]
    return ordered_joints, tuple(ordered_links)


def serialize_robot_description(model):
    """Emit the model back as URDF-subset XML (full float precision)."""
    lines = [f'<robot name="{model.name}">']
    for l in model.links:
        lines.append(f'  <link name="{l}"/>')
    for j in model.joints:
        lines.append(f'  <joint name="{j.name}" type="{j.kind.value}">')
        lines.append(f'    <parent link="{j.parent}"/>')
        lines.append(f'    <child link="{j.child}"/>')
        lines.append(
            f'    <origin xyz="{_fmt(j.origin_xyz)}" rpy="{_fmt(j.origin_rpy)}"/>'
        )
        if j.kind is not JointKind.FIXED:
            lines.append(f'    <axis xyz="{_fmt(j.axis)}"/>')
            lines.append(
                f'    <limit lower="{j.limits[0]!r}" upper="{j.limits[1]!r}"/>'
            )
        lines.append("  </joint>")
    for k in model.keypoints:
        lines.append(f'  <keypoint name="{k.name}" link="{k.link}" xyz="{_fmt(k.offset)}"/>')
    for c in model.capsules:
        lines.append(
            f'  <capsule link="{c.link}" from="{_fmt(c.p0)}" to="{_fmt(c.p1)}"'
            f' radius="{c.radius!r}"/>'
        )
    lines.append("</robot>")
    return "\n".join(lines) + "\n"


def _fmt(vec):
    return " ".join(repr(float(v)) for v in vec)


def canonical_dump(model):
    """Plain-text model summary, one line per joint/keypoint (golden files)."""
    out = [
        f"robot {model.name} links={len(model.links)} joints={len(model.joints)} "
        f"dof={model.dof} keypoints={model.num_keypoints} root_kp={model.root_keypoint_index}"
    ]
    for j in model.joints:
        lim = "-" if j.limits is None else f"{j.limits[0]:.6g},{j.limits[1]:.6g}"
        out.append(
            f"joint {j.name} kind={j.kind.value} parent={j.parent} child={j.child} "
            f"xyz={_fmt6(j.origin_xyz)} rpy={_fmt6(j.origin_rpy)} "
            f"axis={_fmt6(j.axis)} limits={lim} q={j.q_index}"
        )
    for k in model.keypoints:
        out.append(f"keypoint {k.name} link={k.link} xyz={_fmt6(k.offset)}")
    for c in model.capsules:
        out.append(
            f"capsule link={c.link} from={_fmt6(c.p0)} to={_fmt6(c.p1)} radius={c.radius:.6g}"
        )
    return "\n".join(out) + "\n"


def _fmt6(vec):
    return ",".join(f"{float(v):.6g}" for v in vec)


# --- joint state handling -------------------------------------------------

def validate_joint_state(model, q):
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.dof:
        raise ValueError(
            f"joint state length {q.shape[0]} does not match dof {model.dof}"
        )
    return q


def q_to_internal(model, q_pub):
    """Degrees/mm -> radians/mm."""
    q = validate_joint_state(model, q_pub).copy()
    rev = model.compiled.q_revolute
    q[rev] = np.radians(q[rev])
    return q


def q_to_public(model, q_int):
    q = np.asarray(q_int, dtype=float).copy()
    rev = model.compiled.q_revolute
    q[rev] = np.degrees(q[rev])
    return q


def clamp_to_limits(model, q):
    """Project a public-unit joint state into the per-joint limit intervals."""
    q = validate_joint_state(model, q)
    c = model.compiled
    return np.clip(q, c.lo_pub, c.hi_pub)


def limits_internal(model):
    c = model.compiled
    lo, hi = c.lo_pub.copy(), c.hi_pub.copy()
    lo[c.q_revolute] = np.radians(lo[c.q_revolute])
    hi[c.q_revolute] = np.radians(hi[c.q_revolute])
    return lo, hi


# --- forward kinematics ---------------------------------------------------

def fk_points_internal(model, q_int):
    """Keypoints in the robot root frame; q in radians/mm."""
    c = model.compiled
    return kernels.fk_points(
        c.parent, c.rloc, c.ploc, c.kind, c.axis, c.qidx,
        np.asarray(q_int, dtype=float), c.kp_link, c.kp_off,
    )


def fk_points_jac_internal(model, q_int):
    """(X, dX/dq) in the root frame; q and derivatives in radians/mm."""
    c = model.compiled
    return kernels.fk_points_jac(
        c.parent, c.rloc, c.ploc, c.kind, c.axis, c.qidx,
        np.asarray(q_int, dtype=float), c.kp_link, c.kp_off,
    )


def link_frames_internal(model, q_int):
    """Per-link (R, p) in the root frame, for capsule posing."""
    c = model.compiled
    rw, pw, _, _ = kernels.fk_frames(
        c.parent, c.rloc, c.ploc, c.kind, c.axis, c.qidx,
        np.asarray(q_int, dtype=float),
    )
    return rw, pw


def forward_kinematics(model, q, pose=None):
    """P = R X(q) + t with (R, t) the base-link pose (identity when omitted)."""
    x = fk_points_internal(model, q_to_internal(model, q))
    if pose is None:
        pose = RigidPose.identity()
    pts = x @ pose.rotation.T + pose.translation
    return KeypointSet(pts, Frame.FK_ABSOLUTE)


def fk_anchored(model, q, rotation, t_root):
    """FK anchored at the root keypoint: P_i = R (X_i - X_root) + t.

    This is the composition the estimation pipeline uses: the translation
    parameter is the camera-frame position of the root keypoint, so
    P_root == t by construction and the root depth is t[2].
    """
    rotation = np.asarray(rotation, dtype=float)
    t_root = np.asarray(t_root, dtype=float).reshape(3)
    x = fk_points_internal(model, q_to_internal(model, q))
    xc = x - x[model.root_keypoint_index]
    return KeypointSet(xc @ rotation.T + t_root, Frame.FK_ABSOLUTE)


def base_pose_from_root(model, q, rotation, t_root):
    """RigidPose of the base link that places the root keypoint at t_root."""
    rotation = np.asarray(rotation, dtype=float)
    t_root = np.asarray(t_root, dtype=float).reshape(3)
    x = fk_points_internal(model, q_to_internal(model, q))
    return RigidPose(rotation, t_root - rotation @ x[model.root_keypoint_index])


def _pose_jacobian_parts(x, jq, rot, drot):
    """d(R x + t)/d(q, r6, t) as an (N, 3, J+9) block."""
    n, _, nq = jq.shape
    out = np.zeros((n, 3, nq + 9))
    out[:, :, :nq] = rot @ jq
    # out[n,a,k] = sum_b drot[a,b,k] x[n,b]
    out[:, :, nq:nq + 6] = np.tensordot(x, drot, axes=([1], [1]))
    idx = np.arange(3)
    out[:, idx, nq + 6 + idx] = 1.0
    return out


def _pose_jacobian(x, jq, rot, drot):
    """Stack d(R x + t)/d(q, r6, t) into a (3N, J+9) matrix."""
    parts = _pose_jacobian_parts(x, jq, rot, drot)
    n = x.shape[0]
    return parts.reshape(3 * n, -1)


def fk_jacobian(model, q, r6, translation=None):
    """Analytic Jacobian of base-posed keypoints, shape (3N, J+9).

    Rows are keypoint coordinates (x, y, z per keypoint); columns are the
    J joint states (per radian for revolute, per mm for prismatic), the six
    rotation parameters, and the three translation components. The
    translation argument does not influence any derivative and may be None.
    """
    x, jq = fk_points_jac_internal(model, q_to_internal(model, q))
    rot, drot = r6_to_matrix_jacobian(np.asarray(r6, dtype=float))
    return _pose_jacobian(x, jq, rot, drot)


def fk_anchored_jacobian(model, q, r6, t_root):
    """Anchored FK positions plus their (3N, J+9) Jacobian.

    Same column layout as fk_jacobian, but for the root-anchored map
    P_i = R (X_i - X_root) + t. Joint columns are per radian / per mm.
    """
    return fk_anchored_jacobian_internal(
        model, q_to_internal(model, q), r6, t_root
    )


def fk_anchored_jacobian_internal(model, q_int, r6, t_root):
    """fk_anchored_jacobian with q already in radians/mm (fitter hot path)."""
    points, parts = fk_anchored_jacobian_parts(model, q_int, r6, t_root)
    return points, parts.reshape(3 * points.shape[0], -1)


def fk_anchored_jacobian_parts(model, q_int, r6, t_root):
    """Anchored points plus the per-keypoint (N, 3, J+9) Jacobian block."""
    x, jq = fk_points_jac_internal(model, q_int)
    rot, drot = r6_to_matrix_jacobian(np.asarray(r6, dtype=float))
    r = model.root_keypoint_index
    xc = x - x[r]
    jqc = jq - jq[r]
    points = xc @ rot.T + np.asarray(t_root, dtype=float).reshape(3)
    return points, _pose_jacobian_parts(xc, jqc, rot, drot)


# --- geometry summaries ---------------------------------------------------

def max_reach(model):
    """Upper bound (mm) on any keypoint's distance from the base origin."""
    total = float(np.sum(np.linalg.norm(model.compiled.ploc, axis=1)))
    for j in model.moving_joints:
        if j.kind is JointKind.PRISMATIC:
            total += max(abs(j.limits[0]), abs(j.limits[1]))
    off = model.compiled.kp_off
    total += float(np.max(np.linalg.norm(off, axis=1))) if len(off) else 0.0
    return max(total, 10.0)


def zero_state_area_xy(model):
    """Fixed per-robot real-area constant (mm^2) used by the depth seed.

    Computed from the zero-state keypoint extent in the root-frame x-y
    plane; degenerate extents fall back to a fraction of the reach so the
    coarse depth stays finite for toy chains.
    """
    x0 = fk_points_internal(model, np.zeros(model.dof))
    reach = max_reach(model)
    ex = float(x0[:, 0].max() - x0[:, 0].min())
    ey = float(x0[:, 1].max() - x0[:, 1].min())
    ex = max(ex, 0.2 * reach)
    ey = max(ey, 0.2 * reach)
    return ex * ey
