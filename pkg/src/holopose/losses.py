"""The supervision suite: per-term losses, totals, and analytic gradients.

Ground-truth terms: L1 on root depth; L2 on joint states (public units,
degrees and millimeters mixed as defined), rotation matrix entries
(Frobenius), translation, and keypoints (flattened 3D norm plus flattened
2D reprojection norm, for both the FK-based and the lifted keypoint sets).
The ground-truth total is joint + rot + trans + lambda * (kpts + kpts'),
with depth supervised separately. Self-supervision couples keypoint
consistency with mask consistency (1 - IoU).

For the fitter, every differentiable term exposes an analytic gradient
w.r.t. the internal parameter vector [q (radians/mm), r6, t, d]; L1/L2
kinks return the zero subgradient.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import project, project_jacobian
from .kinematics import (
    Frame,
    KeypointSet,
    fk_anchored_jacobian_internal,
    q_to_internal,
    q_to_public,
)
from .rotation import check_rotation, r6_to_matrix, r6_to_matrix_jacobian

_TINY = 1e-300


@dataclass(frozen=True)
class LossWeights:
    lambda_kpts: float = 10.0
    lambda_mc: float = 1.0

    def __post_init__(self):
        if self.lambda_kpts < 0 or self.lambda_mc < 0:
            raise ValueError("loss weights must be non-negative")


def _pts(x, expected_frame=None):
    if isinstance(x, KeypointSet):
        if expected_frame is not None and x.frame is not expected_frame:
            raise ValueError(f"expected {expected_frame}, got {x.frame}")
        return x.points
    return np.asarray(x, dtype=float)


def _flat_norm(a, b, what):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def depth_loss(d, d_hat):
    """L1 depth error in mm."""
    return abs(float(d) - float(d_hat))


def joint_loss(q, q_hat):
    """L2 norm over the joint state difference, public units as-is."""
    return _flat_norm(q, q_hat, "joint state")


def rot_loss(rot, rot_hat):
    """Frobenius norm of the rotation matrix difference."""
    check_rotation(rot)
    check_rotation(rot_hat)
    return _flat_norm(rot, rot_hat, "rotation")


def trans_loss(t, t_hat):
    return _flat_norm(t, t_hat, "translation")


def kpts_loss(p3d, p3d_hat, p2d, p2d_hat):
    """Flattened 3D L2 (mm) plus flattened 2D L2 (px) over FK keypoints."""
    return (
        _flat_norm(_pts(p3d, Frame.FK_ABSOLUTE), _pts(p3d_hat, Frame.FK_ABSOLUTE), "keypoints")
        + _flat_norm(p2d, p2d_hat, "projections")
    )


def kpts_loss_prime(p3d, p3d_hat, p2d, p2d_hat):
    """Same as kpts_loss but over the lifted keypoint sets."""
    return (
        _flat_norm(
            _pts(p3d, Frame.LIFTED_ABSOLUTE), _pts(p3d_hat, Frame.LIFTED_ABSOLUTE),
            "lifted keypoints",
        )
        + _flat_norm(p2d, p2d_hat, "lifted projections")
    )


def keypoint_consistency(p_fk, p_lifted):
    """L2 gap between the FK-based and lifted keypoint sets (mm)."""
    return _flat_norm(
        _pts(p_fk, Frame.FK_ABSOLUTE), _pts(p_lifted, Frame.LIFTED_ABSOLUTE),
        "consistency",
    )


def mask_consistency(mask_render, mask_seg):
    """1 - IoU over two binary masks; 0 with a warning when both are empty."""
    a = mask_render.pixels if hasattr(mask_render, "pixels") else np.asarray(mask_render, dtype=bool)
    b = mask_seg.pixels if hasattr(mask_seg, "pixels") else np.asarray(mask_seg, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        warnings.warn("mask consistency of two empty masks", RuntimeWarning)
        return 0.0
    return 1.0 - float(np.logical_and(a, b).sum() / union)


def gt_total(joint, rot, trans, kpts, kpts_prime, weights=None):
    """joint + rot + trans + lambda * (kpts + kpts'); depth stays separate."""
    w = weights or LossWeights()
    return joint + rot + trans + w.lambda_kpts * (kpts + kpts_prime)


def self_total(kc, mc, weights=None):
    w = weights or LossWeights()
    return kc + w.lambda_mc * mc


@dataclass(frozen=True)
class LossReport:
    """Named per-term scalars; totals are exact affine combinations."""

    depth: float
    joint: float
    rot: float
    trans: float
    kpts: float
    kpts_prime: float
    kc: float
    mc: float
    weights: LossWeights

    @property
    def gt_total(self):
        return gt_total(self.joint, self.rot, self.trans, self.kpts,
                        self.kpts_prime, self.weights)

    @property
    def self_total(self):
        return self_total(self.kc, self.mc, self.weights)

    def to_text(self):
        rows = [
            ("depth", self.depth), ("joint", self.joint), ("rot", self.rot),
            ("trans", self.trans), ("kpts", self.kpts),
            ("kpts_prime", self.kpts_prime), ("kc", self.kc), ("mc", self.mc),
            ("lambda_kpts", self.weights.lambda_kpts),
            ("lambda_mc", self.weights.lambda_mc),
            ("gt_total", self.gt_total), ("self_total", self.self_total),
        ]
        return "".join(f"{k} = {v:.6g}\n" for k, v in rows)


# --- analytic gradients for the fitter -------------------------------------

GRADIENT_TERMS = (
    "depth", "joint", "rot", "trans", "kpts", "kpts_prime", "kc", "gt_total",
)


@dataclass(frozen=True)
class LossParams:
    """Internal parameter point: q in radians/mm, 6D rotation, t and d in mm."""

    q_int: np.ndarray
    r6: np.ndarray
    t: np.ndarray
    d: float

    @classmethod
    def from_public(cls, model, q_pub, r6, t, d):
        return cls(q_to_internal(model, q_pub), np.asarray(r6, dtype=float),
                   np.asarray(t, dtype=float).reshape(3), float(d))

    def size(self):
        return self.q_int.shape[0] + 10


@dataclass(frozen=True)
class LossTargets:
    """Ground-truth values every supervised term compares against."""

    depth: float
    q: np.ndarray  # public units
    rotation: np.ndarray
    translation: np.ndarray
    kp_fk: np.ndarray  # (N, 3) P
    kp2d_fk: np.ndarray  # (N, 2) p
    kp_lifted: np.ndarray  # (N, 3) P'
    kp2d_lifted: np.ndarray  # (N, 2) p'


class SupervisedLosses:
    """Differentiable prediction pipeline behind the loss suite.

    Predictions from a LossParams point: d_hat = d; q_hat = q (public
    units); R_hat = GS(r6); t_hat = t; P_hat = root-anchored FK; P'_hat
    lifts the fixed root-relative input pr by d. Gradients are w.r.t. the
    stacked internal vector [q, r6, t, d] of length J+10.
    """

    def __init__(self, model, intrinsics, targets, pr_input, weights=None):
        self.model = model
        self.intr = intrinsics
        self.targets = targets
        self.pr = np.asarray(_pts(pr_input, Frame.ROOT_RELATIVE), dtype=float)
        self.weights = weights or LossWeights()

    # -- values

    def value(self, term, params):
        if term == "gt_total":
            return gt_total(*(self.value(t, params) for t in
                              ("joint", "rot", "trans", "kpts", "kpts_prime")),
                            self.weights)
        return getattr(self, f"_{term}")(params)[0]

    def gradient(self, term, params):
        if term not in GRADIENT_TERMS:
            raise ValueError(f"no gradient for term {term!r}")
        if term == "gt_total":
            g = np.zeros(params.size())
            for name, w in (("joint", 1.0), ("rot", 1.0), ("trans", 1.0),
                            ("kpts", self.weights.lambda_kpts),
                            ("kpts_prime", self.weights.lambda_kpts)):
                g += w * self.gradient(name, params)
            return g
        return getattr(self, f"_{term}")(params)[1]

    def report(self, params, mc=0.0):
        return LossReport(
            depth=self.value("depth", params),
            joint=self.value("joint", params),
            rot=self.value("rot", params),
            trans=self.value("trans", params),
            kpts=self.value("kpts", params),
            kpts_prime=self.value("kpts_prime", params),
            kc=self.value("kc", params),
            mc=mc,
            weights=self.weights,
        )

    # -- per-term (value, gradient) pairs

    def _layout(self, params):
        nq = params.q_int.shape[0]
        return nq, nq + 6, nq + 9  # q end, r6 end, t end; d is last

    def _depth(self, params):
        g = np.zeros(params.size())
        diff = params.d - self.targets.depth
        g[-1] = np.sign(diff)
        return abs(diff), g

    def _joint(self, params):
        nq, _, _ = self._layout(params)
        v = q_to_public(self.model, params.q_int) - self.targets.q
        norm = np.linalg.norm(v)
        g = np.zeros(params.size())
        if norm > _TINY:
            scale = np.where(self.model.compiled.q_revolute, 180.0 / np.pi, 1.0)
            g[:nq] = v / norm * scale
        return float(norm), g

    def _rot(self, params):
        nq, _, _ = self._layout(params)
        rot, drot = r6_to_matrix_jacobian(params.r6)
        v = (rot - self.targets.rotation).ravel()
        norm = np.linalg.norm(v)
        g = np.zeros(params.size())
        if norm > _TINY:
            g[nq:nq + 6] = (v / norm) @ drot.reshape(9, 6)
        return float(norm), g

    def _trans(self, params):
        nq, _, _ = self._layout(params)
        v = params.t - self.targets.translation
        norm = np.linalg.norm(v)
        g = np.zeros(params.size())
        if norm > _TINY:
            g[nq + 6:nq + 9] = v / norm
        return float(norm), g

    def _fk_pipeline(self, params):
        # P_hat (N,3) and its (3N, J+9) jacobian over [q, r6, t]
        return fk_anchored_jacobian_internal(
            self.model, params.q_int, params.r6, params.t
        )

    def _norm_pair(self, v, jac_flat, params, cols=slice(None)):
        norm = np.linalg.norm(v)
        g = np.zeros(params.size())
        if norm > _TINY:
            g[cols] = (v / norm) @ jac_flat
        return float(norm), g

    def _kpts(self, params):
        nq, _, tend = self._layout(params)
        points, jac = self._fk_pipeline(params)
        uv, pjac = project_jacobian(points, self.intr)
        n = points.shape[0]
        v3, g3 = self._norm_pair(
            (points - self.targets.kp_fk).ravel(), jac, params, slice(0, tend))
        # chain 2D rows through the projection jacobian
        jac2 = np.einsum("nab,nbk->nak", pjac, jac.reshape(n, 3, -1)).reshape(2 * n, -1)
        v2, g2 = self._norm_pair(
            (uv - self.targets.kp2d_fk).ravel(), jac2, params, slice(0, tend))
        return v3 + v2, g3 + g2

    def _lifted(self, params):
        lifted = self.pr + np.array([0.0, 0.0, params.d])
        uv, pjac = project_jacobian(lifted, self.intr)
        return lifted, uv, pjac

    def _kpts_prime(self, params):
        lifted, uv, pjac = self._lifted(params)
        v3 = (lifted - self.targets.kp_lifted).ravel()
        n3 = np.linalg.norm(v3)
        v2 = (uv - self.targets.kp2d_lifted).ravel()
        n2 = np.linalg.norm(v2)
        g = np.zeros(params.size())
        if n3 > _TINY:
            g[-1] += float(v3.reshape(-1, 3)[:, 2].sum()) / n3
        if n2 > _TINY:
            # d(uv)/dd = projection jacobian z-column
            g[-1] += float((v2.reshape(-1, 2) * pjac[:, :, 2]).sum()) / n2
        return float(n3) + float(n2), g

    def _kc(self, params):
        nq, _, tend = self._layout(params)
        points, jac = self._fk_pipeline(params)
        lifted = self.pr + np.array([0.0, 0.0, params.d])
        v = (points - lifted).ravel()
        norm = np.linalg.norm(v)
        g = np.zeros(params.size())
        if norm > _TINY:
            g[:tend] = (v / norm) @ jac
            g[-1] = -float(v.reshape(-1, 3)[:, 2].sum()) / norm
        return float(norm), g


def loss_gradients(term, model, intrinsics, targets, pr_input, params,
                   weights=None):
    """Analytic gradient of one loss term w.r.t. [q, r6, t, d].

    q components are per radian (revolute) / per mm (prismatic); L1/L2
    kinks (zero residual) return the zero subgradient.
    """
    return SupervisedLosses(model, intrinsics, targets, pr_input,
                            weights).gradient(term, params)


def targets_from_ground_truth(model, intrinsics, q_pub, rotation, t_root, depth):
    """Build LossTargets by running the ground-truth state through the pipeline."""
    from .kinematics import fk_anchored

    p_fk = fk_anchored(model, q_pub, rotation, t_root)
    uv_fk, _ = project(p_fk, intrinsics, strict=True)
    lifted = p_fk.points  # GT lifted set coincides with FK when consistent
    uv_l = uv_fk
    return LossTargets(
        depth=float(depth),
        q=np.asarray(q_pub, dtype=float),
        rotation=np.asarray(rotation, dtype=float),
        translation=np.asarray(t_root, dtype=float).reshape(3),
        kp_fk=p_fk.points,
        kp2d_fk=uv_fk,
        kp_lifted=lifted,
        kp2d_lifted=uv_l,
    )
