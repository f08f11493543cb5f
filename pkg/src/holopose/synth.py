"""Deterministic synthetic scene generation and the dataset file format.

Each scene is fully determined by (seed, index) through a counter-based
Philox generator (numpy's philox4x64-10, keyed with [seed, index]), so
datasets are portable golden fixtures: no platform-dependent randomness.

Joint states are uniform within limits; the camera sits on a spherical
shell around the zero-pose root keypoint, looks at it, then receives a
pitch/yaw jitter that is re-drawn until the requested truncation outcome
holds (all keypoints in frame, or between min_inframe and N-1 of them).

On-disk format: UTF-8 newline-delimited JSON. The first line is a header
(schema "holopose.dataset/1") embedding the robot description so loads
can re-run forward kinematics; each following line is one scene (schema
"holopose.scene/1"). Floats serialize at full precision; loads cross-check
the stored frames against the keypoint relations and the 6D rotation
against the stored matrix.
"""

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, project
from .kinematics import (
    RobotModel,
    fk_anchored,
    fk_points_internal,
    limits_internal,
    parse_robot_description,
    q_to_internal,
    q_to_public,
    serialize_robot_description,
)
from .rotation import matrix_to_r6, r6_to_matrix

DATASET_SCHEMA = "holopose.dataset/1"
SCENE_SCHEMA = "holopose.scene/1"
RESULT_SCHEMA = "holopose.result/1"
_MASK_SALT = 0x6D61736B  # xored into the seed for the mask-corruption stream

FRAME_TOL = 1e-6


class GenerationError(RuntimeError):
    """Scene sampling could not satisfy its constraints."""


class DatasetError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    scenes: int = 100
    distance_mm: tuple = (1500.0, 3000.0)
    elevation_deg: tuple = (-15.0, 60.0)
    azimuth_deg: tuple = (0.0, 360.0)
    sigma_px: float = 0.0
    sigma_mm: float = 0.0
    truncation_prob: float = 0.0
    min_inframe: int = 4
    mask_corruption: float = 0.0
    fx: float = 615.0
    fy: float = 615.0
    width: int = 640
    height: int = 480
    cx: float | None = None
    cy: float | None = None
    max_retries: int = 200

    def __post_init__(self):
        for name in ("distance_mm", "elevation_deg", "azimuth_deg"):
            lo, hi = getattr(self, name)
            if not hi >= lo:
                raise ValueError(f"{name}: degenerate range ({lo}, {hi})")
        if self.distance_mm[0] <= 0:
            raise ValueError("camera distance must be positive")
        if self.sigma_px < 0 or self.sigma_mm < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.truncation_prob <= 1.0:
            raise ValueError("truncation probability must be in [0, 1]")
        if not 0.0 <= self.mask_corruption <= 1.0:
            raise ValueError("mask corruption rate must be in [0, 1]")

    def intrinsics(self):
        cx = self.width / 2.0 if self.cx is None else self.cx
        cy = self.height / 2.0 if self.cy is None else self.cy
        return CameraIntrinsics(self.fx, self.fy, cx, cy, self.width, self.height)


@dataclass(frozen=True)
class SceneRecord:
    """One synthetic observation with ground truth in all three frames."""

    scene_id: int
    robot: str
    seed: int
    index: int
    q: np.ndarray  # public units
    rotation: np.ndarray  # (3,3) base rotation
    rot6: np.ndarray  # (6,) matching 6D representation
    t: np.ndarray  # (3,) root keypoint position (camera frame, mm)
    d: float  # root depth = t[2]
    intrinsics: CameraIntrinsics
    kp_fk: np.ndarray  # (N,3) P
    kp_lifted: np.ndarray  # (N,3) P'
    kp_root_rel: np.ndarray  # (N,3) P^r
    kp2d: np.ndarray  # (N,2) exact projections
    inframe: np.ndarray  # (N,) bool
    obs2d: np.ndarray | None = None
    obs3d: np.ndarray | None = None
    sigma_px: float = 0.0
    sigma_mm: float = 0.0
    mask_file: str | None = None

    @property
    def inframe_count(self):
        return int(np.asarray(self.inframe).sum())

    def observations(self):
        """(2D points, root-relative 3D points) - noisy when present."""
        obs2d = self.kp2d if self.obs2d is None else self.obs2d
        obs3d = self.kp_root_rel if self.obs3d is None else self.obs3d
        return obs2d, obs3d


def scene_rng(seed, index):
    """The documented per-scene generator: philox4x64-10 keyed [seed, index]."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def mask_rng(seed, index):
    return scene_rng(seed ^ _MASK_SALT, index)


def _uniform(rng, lo, hi):
    return lo + rng.random() * (hi - lo)


def _look_at_rotation(forward, up_hint):
    ez = forward / np.linalg.norm(forward)
    up = np.asarray(up_hint, dtype=float)
    if abs(ez @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    ex = np.cross(ez, up)
    ex /= np.linalg.norm(ex)
    ey = np.cross(ez, ex)
    return np.vstack((ex, ey, ez))  # rows: camera axes in robot coordinates


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _draw_view(model, config, rng, x, scene_id):
    """Sample one camera pose for fixed joint state; returns the record."""
    intr = config.intrinsics()
    root = model.root_keypoint_index
    target = x[root]
    want_trunc = rng.random() < config.truncation_prob
    n = model.num_keypoints

    half_fov = min(math.atan(intr.width / (2.0 * intr.fx)),
                   math.atan(intr.height / (2.0 * intr.fy)))
    for _ in range(config.max_retries):
        dist = _uniform(rng, *config.distance_mm)
        elev = math.radians(_uniform(rng, *config.elevation_deg))
        azim = math.radians(_uniform(rng, *config.azimuth_deg))
        offset = dist * np.array([
            math.cos(elev) * math.cos(azim),
            math.cos(elev) * math.sin(azim),
            math.sin(elev),
        ])
        center = target + offset
        r0 = _look_at_rotation(target - center, (0.0, 0.0, 1.0))
        ang = math.atan(float(np.max(np.linalg.norm(x - target, axis=1)) + 1.0) / dist)
        jmax = half_fov + ang
        pitch = _uniform(rng, -jmax, jmax)
        yaw = _uniform(rng, -jmax, jmax)
        rot = _rot_x(pitch) @ _rot_y(yaw) @ r0
        t_base = -rot @ center
        p = x @ rot.T + t_base
        if np.any(p[:, 2] <= 1.0):
            continue
        uv, inframe = project(p, intr, strict=False)
        nin = int(inframe.sum())
        ok = (config.min_inframe <= nin <= n - 1) if want_trunc else (nin == n)
        if not ok:
            continue
        t = p[root].copy()
        return SceneRecord(
            scene_id=scene_id,
            robot=model.name,
            seed=config.seed,
            index=scene_id,
            q=np.zeros(0),  # filled by caller
            rotation=rot,
            rot6=matrix_to_r6(rot),
            t=t,
            d=float(t[2]),
            intrinsics=intr,
            kp_fk=p,
            kp_lifted=p.copy(),
            kp_root_rel=p - np.array([0.0, 0.0, t[2]]),
            kp2d=uv,
            inframe=inframe,
        )
    raise GenerationError(
        f"scene {scene_id}: no acceptable camera placement in "
        f"{config.max_retries} retries"
    )


def _apply_noise(record, rng, sigma_px, sigma_mm):
    if sigma_px == 0.0 and sigma_mm == 0.0:
        return record
    n = record.kp2d.shape[0]
    obs2d = record.kp2d + rng.normal(0.0, 1.0, (n, 2)) * sigma_px
    obs3d = record.kp_root_rel + rng.normal(0.0, 1.0, (n, 3)) * sigma_mm
    return dataclasses.replace(
        record, obs2d=obs2d, obs3d=obs3d, sigma_px=sigma_px, sigma_mm=sigma_mm
    )


def sample_scene(model, config, index):
    """Generate one scene, fully determined by (config.seed, index)."""
    rng = scene_rng(config.seed, index)
    lo, hi = limits_internal(model)
    q_int = lo + rng.random(model.dof) * (hi - lo)
    q_pub = q_to_public(model, q_int)
    x = fk_points_internal(model, q_int)
    record = _draw_view(model, config, rng, x, index)
    record = dataclasses.replace(record, q=q_pub)
    return _apply_noise(record, rng, config.sigma_px, config.sigma_mm)


def sample_two_view(model, config, index):
    """One joint state seen from two cameras, plus the a->b relative pose.

    Returns (record_a, record_b, relative) where relative = (R_ab, t_ab)
    maps camera-a coordinates into camera b: x_b = R_ab x_a + t_ab.
    """
    rng = scene_rng(config.seed, index)
    lo, hi = limits_internal(model)
    q_int = lo + rng.random(model.dof) * (hi - lo)
    q_pub = q_to_public(model, q_int)
    x = fk_points_internal(model, q_int)
    rec_a = _draw_view(model, config, rng, x, 2 * index)
    rec_b = _draw_view(model, config, rng, x, 2 * index + 1)
    rec_a = _apply_noise(dataclasses.replace(rec_a, q=q_pub), rng,
                         config.sigma_px, config.sigma_mm)
    rec_b = _apply_noise(dataclasses.replace(rec_b, q=q_pub), rng,
                         config.sigma_px, config.sigma_mm)
    root = model.root_keypoint_index
    ra, rb = rec_a.rotation, rec_b.rotation
    # base translations reconstructed from the anchored ground truth
    ta_base = rec_a.t - ra @ x[root]
    tb_base = rec_b.t - rb @ x[root]
    r_ab = rb @ ra.T
    t_ab = tb_base - r_ab @ ta_base
    return rec_a, rec_b, (r_ab, t_ab)


def add_observation_noise(record, sigma_px, sigma_mm, rng):
    """Gaussian perturbation of the observation fields; ground truth untouched."""
    if sigma_px < 0 or sigma_mm < 0:
        raise ValueError("noise sigmas must be non-negative")
    return _apply_noise(record, rng, sigma_px, sigma_mm)


def generate_dataset(model, config):
    return [sample_scene(model, config, i) for i in range(config.scenes)]


# --- serialization ----------------------------------------------------------

def _intr_to_json(intr):
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def _intr_from_json(obj):
    return CameraIntrinsics(obj["fx"], obj["fy"], obj["cx"], obj["cy"],
                            obj["width"], obj["height"])


def record_to_json(record):
    obj = {
        "schema": SCENE_SCHEMA,
        "scene_id": record.scene_id,
        "robot": record.robot,
        "seed": record.seed,
        "index": record.index,
        "q": record.q.tolist(),
        "rotation": record.rotation.tolist(),
        "rot6": record.rot6.tolist(),
        "t": record.t.tolist(),
        "d": record.d,
        "intrinsics": _intr_to_json(record.intrinsics),
        "kp_fk": record.kp_fk.tolist(),
        "kp_lifted": record.kp_lifted.tolist(),
        "kp_root_rel": record.kp_root_rel.tolist(),
        "kp2d": record.kp2d.tolist(),
        "inframe": [bool(b) for b in record.inframe],
        "sigma_px": record.sigma_px,
        "sigma_mm": record.sigma_mm,
    }
    if record.obs2d is not None:
        obj["obs2d"] = record.obs2d.tolist()
    if record.obs3d is not None:
        obj["obs3d"] = record.obs3d.tolist()
    if record.mask_file is not None:
        obj["mask_file"] = record.mask_file
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def record_from_json(obj):
    return SceneRecord(
        scene_id=int(obj["scene_id"]),
        robot=obj["robot"],
        seed=int(obj["seed"]),
        index=int(obj["index"]),
        q=np.array(obj["q"], dtype=float),
        rotation=np.array(obj["rotation"], dtype=float),
        rot6=np.array(obj["rot6"], dtype=float),
        t=np.array(obj["t"], dtype=float),
        d=float(obj["d"]),
        intrinsics=_intr_from_json(obj["intrinsics"]),
        kp_fk=np.array(obj["kp_fk"], dtype=float),
        kp_lifted=np.array(obj["kp_lifted"], dtype=float),
        kp_root_rel=np.array(obj["kp_root_rel"], dtype=float),
        kp2d=np.array(obj["kp2d"], dtype=float),
        inframe=np.array(obj["inframe"], dtype=bool),
        obs2d=np.array(obj["obs2d"], dtype=float) if "obs2d" in obj else None,
        obs3d=np.array(obj["obs3d"], dtype=float) if "obs3d" in obj else None,
        sigma_px=float(obj.get("sigma_px", 0.0)),
        sigma_mm=float(obj.get("sigma_mm", 0.0)),
        mask_file=obj.get("mask_file"),
    )


def validate_record(model, record, tol=FRAME_TOL):
    """Cross-check the stored frames against the keypoint relations."""
    if record.robot != model.name:
        raise DatasetError(
            f"scene {record.scene_id}: robot {record.robot!r} != model {model.name!r}"
        )
    if abs(record.d - record.t[2]) > tol:
        raise DatasetError(f"scene {record.scene_id}: d != t_z")
    lift = record.kp_root_rel + np.array([0.0, 0.0, record.d])
    if np.max(np.abs(lift - record.kp_lifted)) > tol:
        raise DatasetError(f"scene {record.scene_id}: frame inconsistency (lift)")
    root = model.root_keypoint_index
    if np.max(np.abs(record.kp_lifted[root] - record.t)) > tol:
        raise DatasetError(f"scene {record.scene_id}: frame inconsistency (root)")
    fk = fk_anchored(model, record.q, record.rotation, record.t)
    if np.max(np.abs(fk.points - record.kp_fk)) > tol:
        raise DatasetError(f"scene {record.scene_id}: frame inconsistency (fk)")
    if np.max(np.abs(r6_to_matrix(record.rot6) - record.rotation)) > 1e-9:
        raise DatasetError(f"scene {record.scene_id}: 6D/matrix rotation drift")
    uv, inframe = project(record.kp_fk, record.intrinsics, strict=True)
    if np.max(np.abs(uv - record.kp2d)) > tol:
        raise DatasetError(f"scene {record.scene_id}: stored 2D points drift")
    if not np.array_equal(inframe, record.inframe):
        raise DatasetError(f"scene {record.scene_id}: in-frame flags drift")


def write_dataset(path, model, records, config=None):
    """Newline-delimited JSON: header with the embedded robot, then scenes."""
    header = {
        "schema": DATASET_SCHEMA,
        "robot": model.name,
        "robot_xml": serialize_robot_description(model),
        "scenes": len(records),
    }
    if config is not None:
        header["config"] = dataclasses.asdict(config)
    lines = [json.dumps(header, separators=(",", ":"), sort_keys=True)]
    lines += [record_to_json(r) for r in records]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Dataset:
    model: RobotModel
    records: tuple
    header: dict


def read_dataset(path, validate=True):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: line 1: {exc}") from None
    if header.get("schema") != DATASET_SCHEMA:
        raise DatasetError(f"{path}: unexpected header schema {header.get('schema')!r}")
    model = parse_robot_description(header["robot_xml"])
    records = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {ln}: {exc}") from None
        if obj.get("schema") != SCENE_SCHEMA:
            raise DatasetError(f"{path}: line {ln}: unexpected schema")
        try:
            record = record_from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: line {ln}: {exc}") from None
        if validate:
            validate_record(model, record)
        records.append(record)
    if header.get("scenes") is not None and header["scenes"] != len(records):
        raise DatasetError(
            f"{path}: header declares {header['scenes']} scenes, found {len(records)}"
        )
    return Dataset(model, tuple(records), header)
