import numpy as np
import pytest

from holopose.camera import (
    BehindCameraError,
    BoundingBox,
    CameraIntrinsics,
    back_project,
    coarse_depth,
    keypoint_bbox,
    lift_keypoints,
    project,
    project_jacobian,
    refine_depth,
)
from holopose.kinematics import Frame, KeypointSet


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


class TestProject:
    def test_principal_ray(self, intr):
        uv, inframe = project(np.array([[0.0, 0.0, 1000.0]]), intr)
        np.testing.assert_allclose(uv[0], [320.0, 240.0])
        assert inframe[0]

    def test_hand_arithmetic(self, intr):
        uv, _ = project(np.array([[100.0, 0.0, 1000.0]]), intr)
        assert uv[0, 0] == pytest.approx(370.0)

    def test_behind_camera_raises(self, intr):
        with pytest.raises(BehindCameraError):
            project(np.array([[0.0, 0.0, -5.0]]), intr)

    def test_non_strict_flags_instead(self, intr):
        uv, inframe = project(
            np.array([[0.0, 0.0, -5.0], [0.0, 0.0, 2000.0]]), intr, strict=False)
        assert not inframe[0] and inframe[1]
        assert np.isnan(uv[0]).all()

    def test_out_of_frame_flag(self, intr):
        _, inframe = project(np.array([[10000.0, 0.0, 1000.0]]), intr)
        assert not inframe[0]

    def test_jacobian_matches_fd(self, intr):
        rng = np.random.default_rng(0)
        pts = np.column_stack([
            rng.uniform(-500, 500, 20), rng.uniform(-400, 400, 20),
            rng.uniform(500, 3000, 20)])
        uv, jac = project_jacobian(pts, intr)
        step = 1e-4
        for a in range(3):
            hi, lo = pts.copy(), pts.copy()
            hi[:, a] += step
            lo[:, a] -= step
            fd = (project(hi, intr)[0] - project(lo, intr)[0]) / (2 * step)
            np.testing.assert_allclose(jac[:, :, a], fd, atol=1e-5)

    def test_back_project_inverts(self, intr):
        p = np.array([123.0, -45.0, 1500.0])
        uv, _ = project(p[None], intr)
        np.testing.assert_allclose(back_project(uv[0], p[2], intr), p, atol=1e-9)


class TestCoarseDepth:
    def test_hand_evaluation(self, intr):
        assert coarse_depth(intr, 640000.0, 160000.0) == pytest.approx(1000.0)

    def test_doubling_bbox_divides_by_sqrt2(self, intr):
        d1 = coarse_depth(intr, 640000.0, 160000.0)
        d2 = coarse_depth(intr, 640000.0, 320000.0)
        assert d2 == pytest.approx(d1 / np.sqrt(2.0))

    def test_unit_case(self):
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 10, 10)
        assert coarse_depth(k, 5.0, 5.0) == pytest.approx(1.0)

    def test_intrinsics_scale_invariance(self, intr):
        s = 2.7
        scaled = CameraIntrinsics(intr.fx * s, intr.fy * s, intr.cx, intr.cy,
                                  intr.width, intr.height)
        d1 = coarse_depth(intr, 123456.0, 7890.0)
        d2 = coarse_depth(scaled, 123456.0, 7890.0 * s * s)
        assert abs(d1 - d2) < 1e-9

    def test_rejects_bad_areas(self, intr):
        with pytest.raises(ValueError):
            coarse_depth(intr, 0.0, 10.0)
        with pytest.raises(ValueError):
            coarse_depth(intr, 10.0, -1.0)


class TestRefineDepth:
    def test_identity_correction(self):
        est = refine_depth(1.0, 777.0)
        assert est.d == 777.0 and est.d_c == 777.0 and est.lam == 1.0

    def test_arithmetic(self):
        assert refine_depth(1.1, 1000.0).d == pytest.approx(1100.0)

    def test_zero_lambda_rejected(self):
        with pytest.raises(ValueError, match="non-positive"):
            refine_depth(0.0, 1000.0)


class TestLift:
    def test_zero_offsets(self):
        pr = KeypointSet(np.zeros((4, 3)), Frame.ROOT_RELATIVE)
        lifted, t = lift_keypoints(pr, 1000.0, 0)
        assert lifted.frame is Frame.LIFTED_ABSOLUTE
        np.testing.assert_array_equal(lifted.points, np.tile([0, 0, 1000.0], (4, 1)))
        np.testing.assert_array_equal(t, [0, 0, 1000.0])

    def test_direct_substitution(self):
        pr = np.array([[10.0, 20.0, 0.0], [1.0, 2.0, 3.0]])
        _, t = lift_keypoints(pr, 500.0, 0)
        np.testing.assert_array_equal(t, [10.0, 20.0, 500.0])

    def test_zero_depth(self):
        pr = np.array([[1.0, 2.0, 3.0]])
        lifted, _ = lift_keypoints(pr, 0.0, 0)
        np.testing.assert_array_equal(lifted.points, pr)

    def test_preserves_xy_shifts_z(self):
        rng = np.random.default_rng(1)
        pr = rng.normal(0, 100, (6, 3))
        lifted, _ = lift_keypoints(pr, 432.1, 3)
        np.testing.assert_array_equal(lifted.points[:, :2], pr[:, :2])
        np.testing.assert_allclose(lifted.points[:, 2] - pr[:, 2], 432.1)

    def test_bad_root_index(self):
        with pytest.raises(IndexError):
            lift_keypoints(np.zeros((3, 3)), 100.0, 5)

    def test_wrong_frame_rejected(self):
        kp = KeypointSet(np.zeros((2, 3)), Frame.FK_ABSOLUTE)
        with pytest.raises(ValueError, match="root-relative"):
            lift_keypoints(kp, 10.0, 0)


class TestBBox:
    def test_single_point_padding(self, intr):
        box = keypoint_bbox(np.array([[320.0, 240.0]]), [True], intr, padding=10.0)
        assert box.area == pytest.approx(400.0)

    def test_two_points_no_padding(self, intr):
        box = keypoint_bbox(np.array([[0.0, 0.0], [100.0, 100.0]]), [True, True],
                            intr, padding=0.0)
        assert box.area == pytest.approx(10000.0)

    def test_clipping(self, intr):
        box = keypoint_bbox(np.array([[630.0, 470.0]]), [True], intr, padding=50.0)
        assert box.umax == 640.0 and box.vmax == 480.0
        assert box.area == pytest.approx((640 - 580) * (480 - 420))

    def test_requires_inframe_point(self, intr):
        with pytest.raises(ValueError):
            keypoint_bbox(np.array([[1.0, 1.0]]), [False], intr)

    def test_invalid_box_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(10.0, 0.0, 0.0, 5.0)
