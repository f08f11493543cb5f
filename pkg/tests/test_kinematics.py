import numpy as np
import pytest

from holopose.kinematics import (
    Frame,
    JointKind,
    RigidPose,
    RobotDescriptionError,
    canonical_dump,
    clamp_to_limits,
    fk_anchored,
    fk_jacobian,
    fk_points_internal,
    forward_kinematics,
    parse_robot_description,
    q_to_internal,
    q_to_public,
    serialize_robot_description,
    zero_state_area_xy,
)
from holopose.rotation import r6_to_matrix, matrix_to_r6

from helpers import load_builtin, oracle_fk, random_chain, random_q, random_rotation

SINGLE_LINK = """
<robot name="dot">
  <link name="base"/>
  <keypoint name="kp" link="base" xyz="0 0 0"/>
</robot>
"""

ONE_REVOLUTE = """
<robot name="arm1">
  <link name="base"/>
  <link name="tip"/>
  <joint name="j" type="revolute">
    <parent link="base"/>
    <child link="tip"/>
    <axis xyz="0 0 1"/>
    <limit lower="-180" upper="180"/>
  </joint>
  <keypoint name="kp" link="tip" xyz="1000 0 0"/>
</robot>
"""

ONE_PRISMATIC = """
<robot name="slider">
  <link name="base"/>
  <link name="tip"/>
  <joint name="j" type="prismatic">
    <parent link="base"/>
    <child link="tip"/>
    <axis xyz="0 0 1"/>
    <limit lower="0" upper="100"/>
  </joint>
  <keypoint name="kp" link="tip" xyz="0 0 0"/>
</robot>
"""


class TestParsing:
    def test_single_link_document(self):
        model = parse_robot_description(SINGLE_LINK)
        assert model.dof == 0
        assert model.num_keypoints == 1
        assert model.root_keypoint_index == 0

    def test_two_link_chain_order(self):
        model = parse_robot_description(ONE_REVOLUTE)
        assert model.dof == 1
        assert model.links == ("base", "tip")
        assert model.joints[0].q_index == 0

    def test_self_parenting_joint_is_cyclic(self):
        bad = ONE_REVOLUTE.replace('<child link="tip"/>', '<child link="base"/>')
        with pytest.raises(RobotDescriptionError, match="cyclic"):
            parse_robot_description(bad)

    def test_two_joint_cycle(self):
        bad = """
        <robot name="loop">
          <link name="a"/><link name="b"/>
          <joint name="j1" type="fixed">
            <parent link="a"/><child link="b"/>
          </joint>
          <joint name="j2" type="fixed">
            <parent link="b"/><child link="a"/>
          </joint>
          <keypoint name="kp" link="a" xyz="0 0 0"/>
        </robot>
        """
        with pytest.raises(RobotDescriptionError):
            parse_robot_description(bad)

    def test_unknown_joint_kind(self):
        bad = ONE_REVOLUTE.replace('type="revolute"', 'type="helical"')
        with pytest.raises(RobotDescriptionError, match="unknown joint kind"):
            parse_robot_description(bad)

    def test_keypoint_missing_link(self):
        bad = ONE_REVOLUTE.replace('link="tip" xyz="1000 0 0"', 'link="nope" xyz="0 0 0"')
        with pytest.raises(RobotDescriptionError, match="missing link"):
            parse_robot_description(bad)

    def test_malformed_xml(self):
        with pytest.raises(RobotDescriptionError, match="malformed XML"):
            parse_robot_description("<robot name='x'><link name='a'>")

    def test_moving_joint_requires_limits(self):
        bad = ONE_REVOLUTE.replace('<limit lower="-180" upper="180"/>', "")
        with pytest.raises(RobotDescriptionError, match="limits"):
            parse_robot_description(bad)

    def test_builtin_morphologies(self):
        panda = load_builtin("panda")
        assert panda.dof == 8 and panda.num_keypoints == 7
        kinds = [j.kind for j in panda.moving_joints]
        assert kinds.count(JointKind.REVOLUTE) == 7
        assert kinds.count(JointKind.PRISMATIC) == 1
        kuka = load_builtin("kuka")
        assert kuka.dof == 7 and kuka.num_keypoints == 8
        baxter = load_builtin("baxter")
        assert baxter.dof == 15 and baxter.num_keypoints == 17


class TestForwardKinematics:
    def test_revolute_quarter_turn(self):
        model = parse_robot_description(ONE_REVOLUTE)
        kp = forward_kinematics(model, [90.0])
        assert kp.frame is Frame.FK_ABSOLUTE
        np.testing.assert_allclose(kp.points[0], [0.0, 1000.0, 0.0], atol=1e-9)

    def test_prismatic_slide(self):
        model = parse_robot_description(ONE_PRISMATIC)
        kp = forward_kinematics(model, [5.0])
        np.testing.assert_allclose(kp.points[0], [0.0, 0.0, 5.0], atol=1e-12)

    def test_dimension_mismatch(self):
        model = parse_robot_description(ONE_REVOLUTE)
        with pytest.raises(ValueError, match="dof"):
            forward_kinematics(model, [1.0, 2.0])

    def test_three_joint_chain_matches_oracle(self):
        rng = np.random.default_rng(3)
        model = random_chain(rng, 3, fixed_prob=0.0)
        q = random_q(rng, model)
        rot = random_rotation(rng)
        t = rng.uniform(-500, 500, 3)
        got = forward_kinematics(model, q, RigidPose(rot, t))
        want = oracle_fk(model, q, rot, t)
        np.testing.assert_allclose(got.points, want, atol=1e-9)

    def test_random_trees_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            model = random_chain(rng, int(rng.integers(1, 12)))
            q = random_q(rng, model)
            rot = random_rotation(rng)
            t = rng.uniform(-500, 500, 3)
            got = forward_kinematics(model, q, RigidPose(rot, t))
            np.testing.assert_allclose(got.points, oracle_fk(model, q, rot, t), atol=1e-9)

    def test_rigid_equivariance(self):
        rng = np.random.default_rng(11)
        model = random_chain(rng, 7)
        q = random_q(rng, model)
        r1, r2 = random_rotation(rng), random_rotation(rng)
        t1, t2 = rng.uniform(-300, 300, 3), rng.uniform(-300, 300, 3)
        inner = forward_kinematics(model, q, RigidPose(r1, t1))
        outer = forward_kinematics(model, q, RigidPose(r2 @ r1, r2 @ t1 + t2))
        np.testing.assert_allclose(
            outer.points, inner.points @ r2.T + t2, atol=1e-9)

    def test_base_keypoint_ignores_joints(self):
        model = load_builtin("kuka")
        base_rows = [i for i, kp in enumerate(model.keypoints) if kp.link == model.links[0]]
        assert base_rows
        rng = np.random.default_rng(5)
        ref = forward_kinematics(model, np.zeros(model.dof)).points[base_rows]
        for _ in range(5):
            pts = forward_kinematics(model, random_q(rng, model)).points[base_rows]
            np.testing.assert_allclose(pts, ref, atol=1e-12)

    def test_anchored_fk_places_root_at_t(self):
        model = load_builtin("panda")
        rng = np.random.default_rng(2)
        q = random_q(rng, model)
        rot = random_rotation(rng)
        t = np.array([50.0, -20.0, 1800.0])
        kp = fk_anchored(model, q, rot, t)
        np.testing.assert_allclose(kp.points[model.root_keypoint_index], t, atol=1e-9)


class TestJacobian:
    def test_translation_block_is_identity(self):
        model = load_builtin("panda")
        rng = np.random.default_rng(0)
        q = random_q(rng, model)
        jac = fk_jacobian(model, q, matrix_to_r6(random_rotation(rng)))
        n = model.num_keypoints
        np.testing.assert_array_equal(
            jac[:, model.dof + 6:], np.tile(np.eye(3), (n, 1)))

    def test_revolute_column_is_axis_cross_r(self):
        model = parse_robot_description(ONE_REVOLUTE)
        jac = fk_jacobian(model, [0.0], matrix_to_r6(np.eye(3)))
        want = np.cross([0.0, 0.0, 1.0], [1000.0, 0.0, 0.0])
        np.testing.assert_allclose(jac[:, 0], want, atol=1e-12)

    @staticmethod
    def _fd_jacobian(model, q_pub, r6, step=1e-6):
        nq = model.dof
        theta0 = np.concatenate([q_to_internal(model, q_pub), r6, np.zeros(3)])

        def value(theta):
            qp = q_to_public(model, theta[:nq])
            rot = r6_to_matrix(theta[nq:nq + 6])
            x = fk_points_internal(model, q_to_internal(model, qp))
            return (x @ rot.T + theta[nq + 6:]).ravel()

        cols = []
        for k in range(theta0.size):
            hi = theta0.copy(); hi[k] += step
            lo = theta0.copy(); lo[k] -= step
            cols.append((value(hi) - value(lo)) / (2 * step))
        return np.column_stack(cols)

    def test_matches_central_differences_on_7dof(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            model = random_chain(rng, 7)
            q = random_q(rng, model)
            r6 = matrix_to_r6(random_rotation(rng)) + rng.normal(0, 0.05, 6)
            analytic = fk_jacobian(model, q, r6)
            fd = self._fd_jacobian(model, q, r6)
            scale = max(1.0, np.abs(fd).max())
            assert np.abs(analytic - fd).max() / scale < 1e-5


class TestLimits:
    def test_inside_limits_unchanged(self):
        model = load_builtin("panda")
        c = model.compiled
        q = 0.5 * (c.lo_pub + c.hi_pub)
        np.testing.assert_array_equal(clamp_to_limits(model, q), q)

    def test_projection_to_upper(self):
        model = parse_robot_description(ONE_PRISMATIC)
        assert clamp_to_limits(model, [150.0])[0] == 100.0

    def test_wraparound_value_clamps(self):
        model = parse_robot_description(ONE_REVOLUTE)
        assert clamp_to_limits(model, [200.0])[0] == 180.0


class TestSerialization:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(8):
            model = random_chain(rng, int(rng.integers(1, 10)))
            again = parse_robot_description(serialize_robot_description(model))
            assert again == model
            assert again.root_keypoint_index == model.root_keypoint_index

    def test_builtin_round_trip(self):
        model = load_builtin("panda")
        again = parse_robot_description(serialize_robot_description(model))
        assert again == model

    def test_canonical_dump_lines(self):
        model = load_builtin("panda")
        dump = canonical_dump(model)
        lines = dump.strip().splitlines()
        assert lines[0].startswith("robot panda_desk ")
        assert sum(1 for l in lines if l.startswith("joint ")) == len(model.joints)
        assert sum(1 for l in lines if l.startswith("keypoint ")) == 7
        # stable golden output: 6-significant-digit floats, no raw repr
        assert "1.5708" in dump and "1.5707963267948966" not in dump


def test_zero_state_area_positive():
    for name in ("panda", "kuka", "baxter"):
        assert zero_state_area_xy(load_builtin(name)) > 0
