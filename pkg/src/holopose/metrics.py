"""ADD / AUC evaluation metrics and truncation-stratified reporting.

ADD is the mean Euclidean distance (mm) between predicted and ground-truth
3D keypoints. AUC integrates the empirical accuracy curve over thresholds
up to 100 mm, in closed form: each value v contributes
max(0, 1 - min(v, T)/T), averaged and scaled to percent. Outliers are not
clipped before averaging.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .kinematics import Frame, KeypointSet

ADD_AUC_MAX_MM = 100.0


@dataclass(frozen=True)
class EvalRecord:
    """Per-scene evaluation entries consumed by the aggregators."""

    scene_id: int
    add: float  # mm
    joint_errors: np.ndarray  # absolute errors, public units
    joint_revolute: np.ndarray  # bool per joint
    rot_errors: np.ndarray  # per-axis Euler errors, degrees
    depth_error: float  # mm
    inframe_count: int

    def __post_init__(self):
        if self.add < 0:
            raise ValueError("ADD must be non-negative")
        if self.inframe_count < 0:
            raise ValueError("in-frame count must be non-negative")
        object.__setattr__(self, "joint_errors", np.asarray(self.joint_errors, dtype=float))
        object.__setattr__(self, "joint_revolute", np.asarray(self.joint_revolute, dtype=bool))
        object.__setattr__(self, "rot_errors", np.asarray(self.rot_errors, dtype=float))


def add_distance(kp_pred, kp_gt):
    """Mean per-keypoint Euclidean distance in millimeters."""
    a = kp_pred.points if isinstance(kp_pred, KeypointSet) else np.asarray(kp_pred, dtype=float)
    b = kp_gt.points if isinstance(kp_gt, KeypointSet) else np.asarray(kp_gt, dtype=float)
    for kp in (kp_pred, kp_gt):
        if isinstance(kp, KeypointSet) and kp.frame is not Frame.FK_ABSOLUTE:
            raise ValueError(f"ADD expects fk_absolute keypoints, got {kp.frame}")
    if a.shape != b.shape:
        raise ValueError(f"keypoint count mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def auc(add_values, max_threshold=ADD_AUC_MAX_MM):
    """Exact integral of the accuracy-vs-threshold curve, in percent.

    Equals (100 / (n T)) * sum_i max(0, T - min(v_i, T)); bit-for-bit
    reproducible from the definition, no threshold grid involved.
    """
    v = np.asarray(add_values, dtype=float)
    if v.size == 0:
        raise ValueError("empty ADD sequence")
    if np.any(v < 0):
        raise ValueError("ADD values must be non-negative")
    t = float(max_threshold)
    return float(np.mean(np.maximum(0.0, t - np.minimum(v, t))) / t * 100.0)


def mean_add(add_values):
    v = np.asarray(add_values, dtype=float)
    if v.size == 0:
        raise ValueError("empty ADD sequence")
    return float(v.mean())


def mean_joint_error(joint_errors, revolute_mask):
    """Per-kind means: (degrees over revolute, mm over prismatic).

    Either entry is NaN when the robot has no joints of that kind.
    joint_errors may be one vector or a stack of per-scene vectors.
    """
    e = np.atleast_2d(np.asarray(joint_errors, dtype=float))
    if e.size == 0:
        raise ValueError("empty joint error input")
    rev = np.asarray(revolute_mask, dtype=bool)
    deg = float(e[:, rev].mean()) if rev.any() else float("nan")
    mm = float(e[:, ~rev].mean()) if (~rev).any() else float("nan")
    return deg, mm


def mean_rotation_error(rot_errors):
    """Mean of the per-axis Euler angle errors, degrees."""
    e = np.asarray(rot_errors, dtype=float)
    if e.size == 0:
        raise ValueError("empty rotation error input")
    return float(e.mean())


def mean_depth_error(depth_errors):
    e = np.asarray(depth_errors, dtype=float)
    if e.size == 0:
        raise ValueError("empty depth error input")
    return float(np.abs(e).mean())


@dataclass(frozen=True)
class Stratum:
    inframe_kps: int
    images: int
    auc: float
    mean_add: float


def stratify_by_inframe(records, max_threshold=ADD_AUC_MAX_MM):
    """Group records by in-frame keypoint count; per-group AUC and mean ADD.

    Returns strata sorted by descending count (the severity tables read
    from least to most truncated); empty groups are simply absent.
    """
    groups = {}
    for r in records:
        groups.setdefault(r.inframe_count, []).append(r.add)
    out = []
    for count in sorted(groups, reverse=True):
        adds = groups[count]
        out.append(Stratum(count, len(adds), auc(adds, max_threshold), mean_add(adds)))
    return out


def write_strata_csv(path, strata):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["inframe_kps", "images", "auc", "mean_add"])
        for s in strata:
            writer.writerow([s.inframe_kps, s.images, f"{s.auc:.6g}", f"{s.mean_add:.6g}"])


def summarize(records, max_threshold=ADD_AUC_MAX_MM):
    """Aggregate EvalRecords into the flat key=value report mapping."""
    if not records:
        raise ValueError("no evaluation records")
    adds = [r.add for r in records]
    joint = np.stack([r.joint_errors for r in records])
    rev = records[0].joint_revolute
    mje_deg, mje_mm = mean_joint_error(joint, rev)
    report = {
        "images": len(records),
        "auc": auc(adds, max_threshold),
        "mean_add_mm": mean_add(adds),
        "mean_joint_error_deg": mje_deg,
        "mean_joint_error_mm": mje_mm,
        "mean_rotation_error_deg": mean_rotation_error(
            np.stack([r.rot_errors for r in records])),
        "mean_depth_error_mm": mean_depth_error([r.depth_error for r in records]),
    }
    return report


def format_report(report):
    lines = []
    for k, v in report.items():
        if isinstance(v, float):
            lines.append(f"{k} = {v:.6g}")
        else:
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def write_report(path, report):
    with open(path, "w") as fh:
        fh.write(format_report(report))
