"""Holistic robot pose estimation toolkit.

Forward kinematics with analytic Jacobians, the depth decomposition and
keypoint lifting relations, voxel heatmap soft-argmax, the full loss
suite, ADD/AUC metrics, capsule silhouette rendering, a deterministic
synthetic scene generator, and a multi-start Levenberg-Marquardt estimator
that recovers (q, R, t) from keypoint observations.
"""

from .camera import (
    BoundingBox,
    CameraIntrinsics,
    DepthEstimate,
    coarse_depth,
    keypoint_bbox,
    lift_keypoints,
    project,
    refine_depth,
)
from .estimator import (
    FitConfig,
    FitProblem,
    FitResult,
    fit,
    fit_known_joints,
    fuse_two_view,
    initialize,
)
from .heatmap import (
    Heatmap3D,
    VoxelGridSpec,
    keypoints_from_heatmaps,
    normalize,
    soft_argmax,
    voxel_to_metric,
)
from .kernels import BACKEND
from .kinematics import (
    Frame,
    JointKind,
    JointSpec,
    KeypointSet,
    RigidPose,
    RobotModel,
    canonical_dump,
    clamp_to_limits,
    fk_anchored,
    fk_jacobian,
    forward_kinematics,
    parse_robot_description,
    serialize_robot_description,
)
from .losses import (
    LossReport,
    LossWeights,
    depth_loss,
    gt_total,
    joint_loss,
    keypoint_consistency,
    kpts_loss,
    kpts_loss_prime,
    loss_gradients,
    mask_consistency,
    rot_loss,
    self_total,
    trans_loss,
)
from .metrics import add_distance, auc, mean_add, stratify_by_inframe
from .render import BinaryMask, CapsuleSet, mask_iou, pose_capsules, rasterize_silhouette
from .rotation import euler_angle_errors, geodesic_angle, matrix_to_r6, r6_to_matrix
from .synth import GenConfig, SceneRecord, read_dataset, sample_scene, write_dataset

__version__ = "0.1.0"
