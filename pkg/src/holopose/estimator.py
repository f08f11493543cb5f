"""Desk-scale holistic estimator: damped least squares over (q, R, t).

The problem statement matches holistic pose estimation: recover the
camera-to-robot rotation, the root-keypoint translation, and the joint
states from keypoint observations of a single view. Residuals stack the
weighted 2D reprojection errors of visible keypoints with (optionally) the
root-relative 3D errors and a keypoint-consistency block; rotation is
optimized in the 6D parameterization (no chart boundaries), joint states
in radians/mm with projection onto limits after each accepted step.

Levenberg-Marquardt with multiplicative damping on the Gauss-Newton
normal equations, dense factorization (parameter count <= ~25), and a
deterministic multi-start over a fixed rotation grid; the best residual
wins, ties broken by the lowest start index. A known-joints mode fixes q
and optimizes pose only; two-view results fuse by averaging joint states
and pose-aligned translations (rotations are not fused).
"""

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .camera import back_project, coarse_depth, keypoint_bbox, project_jacobian
from .kinematics import (
    clamp_to_limits,
    fk_anchored_jacobian_parts,
    fk_points_internal,
    limits_internal,
    q_to_internal,
    q_to_public,
    validate_joint_state,
    zero_state_area_xy,
)
from .rotation import matrix_to_r6, r6_to_matrix
from .synth import scene_rng

_DAMPING_MAX = 1e12
_START_SALT = 0x73746172  # distinct Philox stream for extra-start rotations


class FitError(ValueError):
    """Invalid fit problem or configuration."""


@dataclass(frozen=True)
class FitProblem:
    model: object
    intrinsics: object
    obs2d: np.ndarray  # (N, 2) pixels
    visible: np.ndarray  # (N,) bool
    obs3d: np.ndarray | None = None  # (N, 3) root-relative mm
    known_q: np.ndarray | None = None  # public units, fixes q when present
    w2d: float = 1.0
    w3d: float = 1.0
    wc: float = 0.0

    def __post_init__(self):
        obs2d = np.asarray(self.obs2d, dtype=float)
        visible = np.asarray(self.visible, dtype=bool)
        n = self.model.num_keypoints
        if obs2d.shape != (n, 2):
            raise FitError(f"obs2d shape {obs2d.shape} != ({n}, 2)")
        if visible.shape != (n,):
            raise FitError(f"visibility shape {visible.shape} != ({n},)")
        object.__setattr__(self, "obs2d", obs2d)
        object.__setattr__(self, "visible", visible)
        if self.obs3d is not None:
            obs3d = np.asarray(self.obs3d, dtype=float)
            if obs3d.shape != (n, 3):
                raise FitError(f"obs3d shape {obs3d.shape} != ({n}, 3)")
            object.__setattr__(self, "obs3d", obs3d)
        if self.known_q is not None:
            object.__setattr__(
                self, "known_q", validate_joint_state(self.model, self.known_q)
            )
        if min(self.w2d, self.w3d, self.wc) < 0:
            raise FitError("residual weights must be non-negative")
        nvis = int(visible.sum())
        minimum = 3 if self.known_q is not None else 4
        if nvis < minimum:
            raise FitError(
                f"{nvis} visible keypoints; need at least {minimum} in this mode"
            )
        if self.known_q is None and nvis < 6:
            warnings.warn(
                f"only {nvis} visible keypoints; the fit may be poorly constrained",
                RuntimeWarning,
            )


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 200
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    step_tol: float = 1e-8
    rel_residual_tol: float = 1e-10
    starts: int = 8
    seed: int = 0
    # recovery phases: joint-limit walls block the short way around revolute
    # circles, leaving multi-start-with-midpoint-q in mirror-image local
    # minima on a sizable fraction of scenes. When the best residual stays
    # above certify_residual, single-joint mirror candidates (plus a
    # circle-fit re-seed of the joints downstream of the flip) and then
    # seeded random-q restarts are tried, each refined by a short LM run.
    polish_rounds: int = 3
    escape_starts: int = 16
    certify_residual: float = 1e-6
    refine_iterations: int = 60

    def __post_init__(self):
        if self.max_iterations < 1 or self.starts < 1:
            raise FitError("iteration and start counts must be positive")
        if self.damping_init <= 0 or self.step_tol <= 0 or self.rel_residual_tol <= 0:
            raise FitError("tolerances must be positive")
        if not self.damping_up > 1.0:
            raise FitError("damping up factor must exceed 1")
        if not 0.0 < self.damping_down < 1.0:
            raise FitError("damping down factor must be in (0, 1)")
        if self.polish_rounds < 0 or self.escape_starts < 0:
            raise FitError("recovery phase counts must be non-negative")


@dataclass(frozen=True)
class StartDiagnostic:
    start_index: int
    residual: float
    iterations: int
    status: str


@dataclass(frozen=True)
class FitResult:
    q: np.ndarray  # public units, within limits
    rotation: np.ndarray
    rot6: np.ndarray
    t: np.ndarray
    d: float  # == t[2]
    residual: float
    iterations: int
    status: str
    starts: tuple = ()
    robot: str = ""
    scene_id: int = -1


def _cube_rotations():
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if np.linalg.det(m) > 0:
                mats.append(m)
    mats.sort(key=lambda m: (-np.trace(m), tuple(m.ravel())))
    return tuple(mats)


_ROTATION_GRID = _cube_rotations()


def start_rotation(start_index, seed=0):
    """Deterministic start rotation: 24 cube-group entries (identity first),
    then seeded uniform random rotations for larger multi-start counts."""
    if start_index < len(_ROTATION_GRID):
        return _ROTATION_GRID[start_index].copy()
    rng = scene_rng(seed ^ _START_SALT, start_index)
    # Shoemake-style uniform quaternion
    u1, u2, u3 = rng.random(3)
    qw = np.sqrt(1 - u1) * np.sin(2 * np.pi * u2)
    qx = np.sqrt(1 - u1) * np.cos(2 * np.pi * u2)
    qy = np.sqrt(u1) * np.sin(2 * np.pi * u3)
    qz = np.sqrt(u1) * np.cos(2 * np.pi * u3)
    w, x, y, z = qw, qx, qy, qz
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def initialize(problem, start_index, config=None):
    """Deterministic start point (q0 public, R0, t0) for one start index.

    q0 is the limits midpoint (or the known joint state); the translation
    seeds its depth from the coarse bounding-box depth with a unit
    correction factor and back-projects the visible 2D centroid.
    """
    config = config or FitConfig()
    vis = problem.visible
    if not np.any(vis):
        raise FitError("no visible keypoints to initialize from")
    model = problem.model
    if problem.known_q is not None:
        q0 = problem.known_q.copy()
    else:
        c = model.compiled
        q0 = 0.5 * (c.lo_pub + c.hi_pub)
    bbox = keypoint_bbox(problem.obs2d, vis, problem.intrinsics)
    d0 = coarse_depth(problem.intrinsics, zero_state_area_xy(model), bbox.area)
    centroid = problem.obs2d[vis].mean(axis=0)
    t0 = back_project(centroid, d0, problem.intrinsics)
    return q0, start_rotation(start_index, config.seed), t0


class _Objective:
    """Precomputed observation blocks and the residual/Jacobian assembly."""

    def __init__(self, problem):
        self.model = problem.model
        self.intr = problem.intrinsics
        self.vis = np.asarray(problem.visible, dtype=bool)
        self.obs2d = problem.obs2d[self.vis]
        self.obs3d = None
        self.obs3d_full = problem.obs3d
        if problem.obs3d is not None and (problem.w3d > 0 or problem.wc > 0):
            self.obs3d = problem.obs3d[self.vis]
        self.w2d = problem.w2d
        self.w3d = problem.w3d
        self.wc = problem.wc
        self.known = problem.known_q is not None
        self.q_fixed = (
            q_to_internal(problem.model, problem.known_q) if self.known else None
        )
        self.nq = 0 if self.known else problem.model.dof
        self.lo, self.hi = limits_internal(problem.model)
        self.root = problem.model.root_keypoint_index
        self._witnesses = None

    def witnesses(self):
        """Visible keypoint indices downstream of each moving joint."""
        if self._witnesses is None:
            c = self.model.compiled
            out = [[] for _ in range(self.model.dof)]
            for i in range(self.model.num_keypoints):
                if not self.vis[i]:
                    continue
                l = c.kp_link[i]
                while l >= 0:
                    j = c.qidx[l]
                    if j >= 0:
                        out[j].append(i)
                    l = c.parent[l]
            self._witnesses = out
        return self._witnesses

    def circle_fit_joints(self, rot, q_start, only_after=-1, sweeps=1):
        """Closed-form per-joint alignment of witness keypoints.

        Given a rotation hypothesis, sweep the moving joints in order and
        set each one to the angle (or slide) that best aligns its visible
        downstream keypoints with the observed root-relative positions
        (rotated back into the robot frame and re-anchored at the current
        root estimate). Used to seed joints downstream of a mirror flip.
        """
        if self.obs3d_full is None:
            return q_start
        c = self.model.compiled
        q = q_start.copy()
        anchor = (self.obs3d_full - self.obs3d_full[self.root]) @ rot
        witnesses = self.witnesses()
        for _ in range(sweeps):
            xr = fk_points_internal(self.model, q)[self.root]
            targets = anchor + xr
            for j in range(self.model.dof):
                if j <= only_after or not witnesses[j]:
                    continue
                rw, pw, wax, worg = kernels.fk_frames(
                    c.parent, c.rloc, c.ploc, c.kind, c.axis, c.qidx, q)
                link = int(np.nonzero(c.qidx == j)[0][0])
                w, o = wax[link], worg[link]
                num = den = slide = 0.0
                for i in witnesses[j]:
                    l = c.kp_link[i]
                    p = rw[l] @ c.kp_off[i] + pw[l]
                    if c.kind[link] == 1:
                        u = p - o
                        u = u - (u @ w) * w
                        v = targets[i] - o
                        v = v - (v @ w) * w
                        num += np.cross(u, v) @ w
                        den += u @ v
                    else:
                        slide += (targets[i] - p) @ w
                if c.kind[link] == 1:
                    if num == 0.0 and den == 0.0:
                        continue
                    delta = np.arctan2(num, den)
                else:
                    delta = slide / len(witnesses[j])
                q[j] = np.clip(q[j] + delta, self.lo[j], self.hi[j])
        return q

    def split(self, theta):
        if self.known:
            return self.q_fixed, theta[:6], theta[6:9]
        return theta[:self.nq], theta[self.nq:self.nq + 6], theta[self.nq + 6:]

    def pack(self, q_int, r6, t):
        if self.known:
            return np.concatenate((r6, t))
        return np.concatenate((q_int, r6, t))

    def clamp(self, theta):
        if not self.known:
            theta = theta.copy()
            theta[:self.nq] = np.clip(theta[:self.nq], self.lo, self.hi)
        return theta

    def _points(self, q_int, r6, t):
        x = fk_points_internal(self.model, q_int)
        rot = r6_to_matrix(r6)
        return (x - x[self.root]) @ rot.T + t

    def residual(self, theta):
        """Stacked weighted residual, or None when a visible point is behind
        the camera (the step is then rejected)."""
        q_int, r6, t = self.split(theta)
        p = self._points(q_int, r6, t)
        pv = p[self.vis]
        z = pv[:, 2]
        if np.any(z <= 1.0):
            return None
        uv = np.empty_like(self.obs2d)
        uv[:, 0] = self.intr.fx * pv[:, 0] / z + self.intr.cx
        uv[:, 1] = self.intr.fy * pv[:, 1] / z + self.intr.cy
        blocks = [self.w2d * (uv - self.obs2d).ravel()]
        if self.obs3d is not None:
            diff = (pv - self.obs3d).ravel()
            diff[2::3] -= t[2]  # observations are root-relative in z
            if self.w3d > 0:
                blocks.append(self.w3d * diff)
            if self.wc > 0:
                blocks.append(self.wc * diff)
        return np.concatenate(blocks)

    def residual_jacobian(self, theta):
        q_int, r6, t = self.split(theta)
        points, jac = fk_anchored_jacobian_parts(self.model, q_int, r6, t)
        if self.known:
            jac = jac[:, :, self.model.dof:]
        pv = points[self.vis]
        jv = jac[self.vis]
        if np.any(pv[:, 2] <= 1.0):
            return None, None
        uv, pjac = project_jacobian(pv, self.intr)
        j2d = np.matmul(pjac, jv)
        blocks_r = [self.w2d * (uv - self.obs2d).ravel()]
        blocks_j = [self.w2d * j2d.reshape(-1, j2d.shape[-1])]
        if self.obs3d is not None:
            diff = (pv - self.obs3d).ravel()
            diff[2::3] -= t[2]
            j3d = jv.copy()
            j3d[:, 2, -1] -= 1.0  # d(P_z - t_z)/dt_z = 0
            j3d = j3d.reshape(-1, j3d.shape[-1])
            if self.w3d > 0:
                blocks_r.append(self.w3d * diff)
                blocks_j.append(self.w3d * j3d)
            if self.wc > 0:
                blocks_r.append(self.wc * diff)
                blocks_j.append(self.wc * j3d)
        return np.concatenate(blocks_r), np.vstack(blocks_j)


def _run_start(objective, config, q0_int, r60, t0, start_index, max_iterations=None):
    max_iterations = max_iterations or config.max_iterations
    theta = objective.clamp(objective.pack(q0_int, r60, t0))
    r = objective.residual(theta)
    if r is None:
        return None, StartDiagnostic(start_index, float("inf"), 0, "invalid_start")
    cost = float(r @ r)
    lam = config.damping_init
    status = "max_iterations"
    iterations = 0
    for it in range(1, max_iterations + 1):
        iterations = it
        r, jac = objective.residual_jacobian(theta)
        if r is None:
            status = "stalled"
            iterations = it - 1
            break
        g = jac.T @ r
        h = jac.T @ jac
        dscale = np.diag(h).copy()
        dscale = np.maximum(dscale, 1e-12 * max(float(dscale.max()), 1.0))
        accepted = False
        while lam <= _DAMPING_MAX:
            try:
                delta = np.linalg.solve(h + lam * np.diag(dscale), -g)
            except np.linalg.LinAlgError:
                lam *= config.damping_up
                continue
            cand = objective.clamp(theta + delta)
            r_new = objective.residual(cand)
            if r_new is not None:
                cost_new = float(r_new @ r_new)
                if cost_new < cost:
                    accepted = True
                    break
            lam *= config.damping_up
        if not accepted:
            # no strictly-descending step exists at the numerical optimum
            status = "converged" if cost <= config.certify_residual**2 else "stalled"
            break
        step = math.sqrt(float((cand - theta) @ (cand - theta)))
        rel = (cost - cost_new) / max(cost, 1e-300)
        # re-orthonormalize the 6D block; the rotation it encodes is unchanged
        q_int, r6, t = objective.split(cand)
        rot = r6_to_matrix(r6)
        theta = objective.pack(q_int, np.concatenate((rot[:, 0], rot[:, 1])), t)
        cost = cost_new
        lam = max(lam * config.damping_down, 1e-12)
        if step < config.step_tol or rel < config.rel_residual_tol:
            status = "converged"
            break
    resid = float(np.sqrt(cost))
    return theta, StartDiagnostic(start_index, resid, iterations, status)


_POLISH_BASE = 1000  # diagnostic start indices for mirror-flip candidates
_ESCAPE_BASE = 2000  # and for seeded random-q escape restarts


def fit(problem, config=None):
    """Multi-start Levenberg-Marquardt solve of the holistic problem.

    Three deterministic phases: the configured multi-start over the fixed
    rotation grid; then, while the best residual exceeds
    config.certify_residual, single-joint mirror candidates (limit-wall
    minima are mirror images through an interval, and the flip is combined
    with a circle-fit re-seed of the downstream joints); finally seeded
    random-q restarts. Diagnostics list every attempt (recovery phases use
    start indices offset by 1000/2000). When every start fails to produce
    a valid state the best attempt is still returned with status
    "diverged".
    """
    config = config or FitConfig()
    objective = _Objective(problem)
    best = None
    diagnostics = []

    def consider(theta, diag):
        nonlocal best
        diagnostics.append(diag)
        if theta is not None and (best is None or diag.residual < best[1].residual):
            best = (theta, diag)

    for s in range(config.starts):
        q0, r0, t0 = initialize(problem, s, config)
        q0_int = q_to_internal(problem.model, q0)
        consider(*_run_start(objective, config, q0_int, matrix_to_r6(r0), t0, s))

    if best is None:
        q0, r0, t0 = initialize(problem, 0, config)
        return FitResult(
            q=clamp_to_limits(problem.model, q0), rotation=r0,
            rot6=matrix_to_r6(r0), t=t0, d=float(t0[2]), residual=float("inf"),
            iterations=0, status="diverged", starts=tuple(diagnostics),
            robot=problem.model.name,
        )

    def uncertified():
        return best[1].residual > config.certify_residual

    if not objective.known and uncertified():
        nq = problem.model.dof
        for rnd in range(config.polish_rounds):
            improved = False
            for k in range(nq):
                q_int, r6, t = objective.split(best[0])
                q_cand = q_int.copy()
                q_cand[k] = objective.lo[k] + objective.hi[k] - q_cand[k]
                q_cand = objective.circle_fit_joints(
                    r6_to_matrix(r6), q_cand, only_after=k)
                theta, diag = _run_start(
                    objective, config, q_cand, r6, t,
                    _POLISH_BASE + rnd * nq + k)
                before = best[1].residual
                consider(theta, diag)
                improved = improved or best[1].residual < before
            if not improved or not uncertified():
                break

    if not objective.known and uncertified() and config.escape_starts > 0:
        for s in range(config.escape_starts):
            rng = scene_rng(config.seed ^ _START_SALT, _ESCAPE_BASE + s)
            q_rand = objective.lo + rng.random(problem.model.dof) * (
                objective.hi - objective.lo)
            _, r6, t = objective.split(best[0])
            q_rand = objective.circle_fit_joints(r6_to_matrix(r6), q_rand)
            theta, diag = _run_start(
                objective, config, q_rand, r6, t, _ESCAPE_BASE + s,
                max_iterations=config.refine_iterations)
            consider(theta, diag)
            if not uncertified():
                break
        # recovery candidates may stop at the short-run iteration cap;
        # converge the winner fully
        if best[1].start_index >= _ESCAPE_BASE:
            q_int, r6, t = objective.split(best[0])
            consider(*_run_start(objective, config, q_int, r6, t,
                                 best[1].start_index))

    theta, diag = best
    q_int, r6, t = objective.split(theta)
    rot = r6_to_matrix(r6)
    if objective.known:
        q_pub = problem.known_q.copy()  # echoed bit-exactly
    else:
        q_pub = clamp_to_limits(problem.model, q_to_public(problem.model, q_int))
    return FitResult(
        q=q_pub, rotation=rot, rot6=matrix_to_r6(rot), t=t.copy(),
        d=float(t[2]), residual=diag.residual, iterations=diag.iterations,
        status=diag.status, starts=tuple(diagnostics), robot=problem.model.name,
    )


def fit_known_joints(problem, config=None):
    """Pose-only fit with the joint state fixed to the provided ground truth."""
    if problem.known_q is None:
        raise FitError("fit_known_joints requires problem.known_q")
    return fit(problem, config)


RESULTS_SCHEMA = "holopose.results/1"
RESULT_SCHEMA = "holopose.result/1"


def result_to_json(result):
    import json

    obj = {
        "schema": RESULT_SCHEMA,
        "scene_id": result.scene_id,
        "robot": result.robot,
        "q": result.q.tolist(),
        "rotation": result.rotation.tolist(),
        "rot6": result.rot6.tolist(),
        "t": result.t.tolist(),
        "d": result.d,
        "residual": result.residual,
        "iterations": result.iterations,
        "status": result.status,
        "starts": [
            {"start": s.start_index, "residual": s.residual,
             "iterations": s.iterations, "status": s.status}
            for s in result.starts
        ],
    }
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def result_from_json(obj):
    rot = np.array(obj["rotation"], dtype=float)
    rot6 = np.array(obj["rot6"], dtype=float)
    if np.max(np.abs(r6_to_matrix(rot6) - rot)) > 1e-9:
        raise ValueError(
            f"result {obj.get('scene_id')}: 6D/matrix rotation drift"
        )
    return FitResult(
        q=np.array(obj["q"], dtype=float),
        rotation=rot,
        rot6=rot6,
        t=np.array(obj["t"], dtype=float),
        d=float(obj["d"]),
        residual=float(obj["residual"]),
        iterations=int(obj["iterations"]),
        status=obj["status"],
        starts=tuple(
            StartDiagnostic(s["start"], s["residual"], s["iterations"], s["status"])
            for s in obj.get("starts", ())
        ),
        robot=obj.get("robot", ""),
        scene_id=int(obj.get("scene_id", -1)),
    )


def write_results(path, results, robot_name=""):
    """Newline-delimited results file with a schema header line."""
    import json

    header = json.dumps(
        {"schema": RESULTS_SCHEMA, "robot": robot_name, "results": len(results)},
        separators=(",", ":"), sort_keys=True,
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join([header] + [result_to_json(r) for r in results]) + "\n")


def read_results(path):
    import json

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty results file")
    header = json.loads(lines[0])
    if header.get("schema") != RESULTS_SCHEMA:
        raise ValueError(f"{path}: unexpected results schema {header.get('schema')!r}")
    out = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(result_from_json(obj))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}: line {ln}: {exc}") from None
    return header, out


def fuse_two_view(result_a, result_b, relative_pose):
    """Fuse two single-view results into view b's frame.

    Joint states are averaged; the translation of view a is mapped through
    the relative camera pose (x_b = R_ab x_a + t_ab) and averaged with view
    b's; the rotation is taken from view b unfused.
    """
    if result_a.robot != result_b.robot or result_a.q.shape != result_b.q.shape:
        raise FitError("cannot fuse results from different robot models")
    if hasattr(relative_pose, "rotation"):
        r_ab, t_ab = relative_pose.rotation, relative_pose.translation
    else:
        r_ab, t_ab = relative_pose
    r_ab = np.asarray(r_ab, dtype=float)
    t_ab = np.asarray(t_ab, dtype=float).reshape(3)
    q_f = 0.5 * (result_a.q + result_b.q)
    t_f = 0.5 * ((r_ab @ result_a.t + t_ab) + result_b.t)
    return FitResult(
        q=q_f, rotation=result_b.rotation.copy(), rot6=result_b.rot6.copy(),
        t=t_f, d=float(t_f[2]), residual=result_b.residual,
        iterations=result_b.iterations, status="fused",
        robot=result_b.robot, scene_id=result_b.scene_id,
    )
