"""Shared fixtures: random kinematic chains and an independent FK oracle."""

from importlib import resources

import numpy as np
from scipy.spatial.transform import Rotation

from holopose.kinematics import JointKind, parse_robot_description


def load_builtin(name):
    xml = resources.files("holopose.robots").joinpath(f"{name}.urdf").read_text()
    return parse_robot_description(xml)


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_chain_xml(rng, n_moving, prismatic_prob=0.25, fixed_prob=0.15,
                     branch_prob=0.2):
    """Random tree-shaped robot description with n_moving actuated joints."""
    links = ["link0"]
    joints = []
    moving = 0
    while moving < n_moving:
        make_fixed = rng.random() < fixed_prob
        parent = links[int(rng.integers(len(links)))] if rng.random() < branch_prob \
            else links[-1]
        child = f"link{len(links)}"
        xyz = [float(v) for v in rng.uniform(-300.0, 300.0, 3)]
        rpy = [float(v) for v in rng.uniform(-np.pi, np.pi, 3)]
        if make_fixed:
            kind = "fixed"
            body = ""
        else:
            moving += 1
            if rng.random() < prismatic_prob:
                kind = "prismatic"
                lim = (0.0, float(rng.uniform(50.0, 250.0)))
            else:
                kind = "revolute"
                hi = float(rng.uniform(60.0, 175.0))
                lim = (-hi, hi)
            axis = [float(v) for v in random_unit(rng)]
            body = (
                f'<axis xyz="{axis[0]!r} {axis[1]!r} {axis[2]!r}"/>'
                f'<limit lower="{lim[0]!r}" upper="{lim[1]!r}"/>'
            )
        joints.append(
            f'<joint name="j{len(joints)}" type="{kind}">'
            f'<parent link="{parent}"/><child link="{child}"/>'
            f'<origin xyz="{xyz[0]!r} {xyz[1]!r} {xyz[2]!r}"'
            f' rpy="{rpy[0]!r} {rpy[1]!r} {rpy[2]!r}"/>'
            f"{body}</joint>"
        )
        links.append(child)
    keypoints = []
    for i, link in enumerate(links):
        if i == 0 or rng.random() < 0.7:
            off = [float(v) for v in rng.uniform(-150.0, 150.0, 3)]
            keypoints.append(
                f'<keypoint name="kp{len(keypoints)}" link="{link}"'
                f' xyz="{off[0]!r} {off[1]!r} {off[2]!r}"/>'
            )
    parts = [f'<link name="{l}"/>' for l in links] + joints + keypoints
    return '<robot name="rand">' + "".join(parts) + "</robot>"


def random_chain(rng, n_moving, **kwargs):
    return parse_robot_description(random_chain_xml(rng, n_moving, **kwargs))


def random_q(rng, model):
    c = model.compiled
    return c.lo_pub + rng.random(model.dof) * (c.hi_pub - c.lo_pub)


def oracle_fk(model, q_pub, pose_rot=None, pose_t=None):
    """Independent FK: homogeneous 4x4 composition built on scipy rotations."""
    frames = {model.links[0]: np.eye(4)}
    qmap = {}
    for j in model.moving_joints:
        qmap[j.name] = q_pub[j.q_index]
    for j in model.joints:
        t_origin = np.eye(4)
        t_origin[:3, :3] = Rotation.from_euler("xyz", j.origin_rpy).as_matrix()
        t_origin[:3, 3] = j.origin_xyz
        t_joint = np.eye(4)
        if j.kind is JointKind.REVOLUTE:
            angle = np.radians(qmap[j.name])
            t_joint[:3, :3] = Rotation.from_rotvec(angle * np.asarray(j.axis)).as_matrix()
        elif j.kind is JointKind.PRISMATIC:
            t_joint[:3, 3] = qmap[j.name] * np.asarray(j.axis)
        frames[j.child] = frames[j.parent] @ t_origin @ t_joint
    pts = []
    for kp in model.keypoints:
        p = frames[kp.link] @ np.append(np.asarray(kp.offset, dtype=float), 1.0)
        pts.append(p[:3])
    pts = np.array(pts)
    if pose_rot is not None:
        pts = pts @ np.asarray(pose_rot).T + np.asarray(pose_t)
    return pts


def random_rotation(rng):
    return Rotation.from_quat(_random_quat(rng)).as_matrix()


def _random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# A 7-DoF chain designed so keypoints determine the state uniquely: two
# rigid base keypoints (one well off the first axis) and one off-axis
# witness keypoint per moving link. Articulation-only keypoint placements
# admit exact mirror solutions (wrist flips), which no estimator can
# disambiguate from keypoints alone.
CHAIN7 = """
<robot name="chain7">
  <link name="link0"/><link name="link1"/><link name="link2"/><link name="link3"/>
  <link name="link4"/><link name="link5"/><link name="link6"/><link name="link7"/>
  <joint name="j1" type="revolute">
    <parent link="link0"/><child link="link1"/>
    <origin xyz="0 0 300" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-170" upper="170"/>
  </joint>
  <joint name="j2" type="revolute">
    <parent link="link1"/><child link="link2"/>
    <origin xyz="0 0 120" rpy="-1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-115" upper="115"/>
  </joint>
  <joint name="j3" type="revolute">
    <parent link="link2"/><child link="link3"/>
    <origin xyz="0 -250 0" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-165" upper="165"/>
  </joint>
  <joint name="j4" type="revolute">
    <parent link="link3"/><child link="link4"/>
    <origin xyz="80 0 250" rpy="0 1.5707963267948966 0"/><axis xyz="0 0 1"/>
    <limit lower="-110" upper="110"/>
  </joint>
  <joint name="j5" type="prismatic">
    <parent link="link4"/><child link="link5"/>
    <origin xyz="0 0 200" rpy="0 0 0"/><axis xyz="0 0 1"/>
    <limit lower="0" upper="150"/>
  </joint>
  <joint name="j6" type="revolute">
    <parent link="link5"/><child link="link6"/>
    <origin xyz="0 -150 100" rpy="1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-160" upper="160"/>
  </joint>
  <joint name="j7" type="revolute">
    <parent link="link6"/><child link="link7"/>
    <origin xyz="0 0 180" rpy="-1.5707963267948966 0 0"/><axis xyz="0 0 1"/>
    <limit lower="-170" upper="170"/>
  </joint>
  <keypoint name="kp_base_a" link="link0" xyz="150 0 100"/>
  <keypoint name="kp_base_b" link="link0" xyz="-60 130 40"/>
  <keypoint name="kp1" link="link1" xyz="120 0 50"/>
  <keypoint name="kp2" link="link2" xyz="140 0 40"/>
  <keypoint name="kp3" link="link3" xyz="130 0 -30"/>
  <keypoint name="kp4" link="link4" xyz="110 60 0"/>
  <keypoint name="kp5" link="link5" xyz="100 -40 20"/>
  <keypoint name="kp6" link="link6" xyz="90 50 -20"/>
  <keypoint name="kp7" link="link7" xyz="120 -80 40"/>
</robot>
"""


def observable_chain7():
    return parse_robot_description(CHAIN7)
