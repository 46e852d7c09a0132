import numpy as np
import pytest
from hypothesis import given, strategies as st

from reflexgrasp.gripper import GripperGeometry, desired_contact_frames, fingertip_frames
from reflexgrasp.se3 import RigidTransform, dome_angles
from reflexgrasp.teleop import closing_angle_for, grasp_point
from reflexgrasp.world import (
    GRAVITY,
    ContactState,
    FingerContact,
    MassSchedule,
    World,
    WorldObject,
    bottle_fill_schedule,
    contact_loads,
    resolve_contacts,
    settle_grasp,
)

GEOM = GripperGeometry()
R = 0.03
IDENT = RigidTransform.identity()


def sphere(offset=(0.0, 0.0, 0.0), **kw):
    return WorldObject(RigidTransform(np.eye(3), grasp_point(GEOM, R) + np.asarray(offset)), R, **kw)


def settled_angles(offset):
    obj = sphere(offset)
    st_ = settle_grasp(IDENT, GEOM.q_min, True, obj, GEOM)
    obj.pose = RigidTransform(np.eye(3), obj.centre + st_.object_shift)
    cs = resolve_contacts(IDENT, st_.q_g, obj, GEOM)
    assert cs.both
    frames = fingertip_frames(GEOM, st_.q_g)
    return [np.array(dome_angles(T.rotation.T @ (c.point - T.translation)))
            for c, T in zip((cs.fixed, cs.actuated), frames)]


def test_centred_sphere_touches_at_antipodal_points():
    q = closing_angle_for(GEOM, R)
    cs = resolve_contacts(IDENT, q, sphere(), GEOM)
    assert cs.both
    assert cs.fixed.depth == pytest.approx(0, abs=1e-12) and cs.actuated.depth == pytest.approx(0, abs=1e-12)
    # the contact normals are the ideal antipodal ones
    for c, T_tip, T_des in zip((cs.fixed, cs.actuated), fingertip_frames(GEOM, q), desired_contact_frames(GEOM, q)):
        measured = T_tip.rotation.T @ (c.point - T_tip.translation)
        assert np.arccos(np.clip(measured / np.linalg.norm(measured) @ T_des.rotation[:, 2], -1, 1)) < 1e-6
    # contact normals are collinear and opposed
    assert cs.fixed.normal @ cs.actuated.normal == pytest.approx(-1.0, abs=1e-12)


def test_offset_along_closing_plane_gives_opposite_theta():
    base_f, base_a = settled_angles((0, 0, 0))
    f, a = settled_angles((0, 0, 0.005))
    d_f, d_a = f[0] - base_f[0], a[0] - base_a[0]
    assert np.sign(d_f) == -np.sign(d_a) and abs(d_f) > 0.05
    assert abs(d_f) == pytest.approx(abs(d_a), rel=0.05)
    assert f[1] == pytest.approx(0, abs=1e-12) and a[1] == pytest.approx(0, abs=1e-12)


def test_offset_along_shared_x_gives_equal_phi():
    base_f, base_a = settled_angles((0, 0, 0))
    f, a = settled_angles((0.005, 0, 0))
    assert f[1] > 0.05 and a[1] > 0.05
    assert f[1] == pytest.approx(a[1], rel=0.05)
    g, b = settled_angles((-0.005, 0, 0))
    assert g[1] == pytest.approx(-f[1], abs=1e-12) and b[1] == pytest.approx(-a[1], abs=1e-12)


def test_far_object_no_contact():
    obj = WorldObject(RigidTransform.from_translation([1.0, 1.0, 1.0]), R)
    cs = resolve_contacts(IDENT, GEOM.q_min, obj, GEOM)
    assert cs.fixed is None and cs.actuated is None and not cs.both


def antipodal_pair(normal_force, mu=0.5, mass=1.0):
    f = FingerContact(np.array([0.0, -R, 0.0]), np.array([0.0, -1.0, 0.0]), 0.0)
    a = FingerContact(np.array([0.0, R, 0.0]), np.array([0.0, 1.0, 0.0]), 0.0)
    return contact_loads(ContactState(f, a), normal_force, np.array([0.0, 0.0, -mass * GRAVITY]), mu)


def test_slip_at_8N():
    cs = antipodal_pair(8.0)
    for c in (cs.fixed, cs.actuated):
        assert c.normal_force == pytest.approx(8.0)
        assert np.linalg.norm(c.tangential) == pytest.approx(4.905)
        assert c.slip
        # friction cannot exceed the cone
        assert np.linalg.norm(c.transmitted) == pytest.approx(0.5 * 8.0)


def test_no_slip_at_12N():
    cs = antipodal_pair(12.0)
    assert not cs.slip
    for c in (cs.fixed, cs.actuated):
        assert np.linalg.norm(c.tangential) == pytest.approx(4.905)


@given(st.floats(0.1, 60.0), st.floats(0.05, 1.5), st.floats(0.0, 3.0))
def test_slip_threshold_matches_cone(squeeze, mu, mass):
    cs = antipodal_pair(squeeze, mu, mass)
    expected = mass * GRAVITY / 2 > mu * squeeze
    assert cs.fixed.slip == expected and cs.actuated.slip == expected
    # transmitted forces on the object never exceed the cone
    total = cs.fixed.force_on_object + cs.actuated.force_on_object
    assert total[1] == pytest.approx(0.0, abs=1e-9)


def test_contact_normals_are_unit_and_outward():
    obj = sphere((0.002, 0.0, 0.001))
    st_ = settle_grasp(IDENT, GEOM.q_min, True, obj, GEOM)
    obj.pose = RigidTransform(np.eye(3), obj.centre + st_.object_shift)
    cs = resolve_contacts(IDENT, st_.q_g, obj, GEOM)
    for c in (cs.fixed, cs.actuated):
        assert np.linalg.norm(c.normal) == pytest.approx(1.0)
        assert np.linalg.norm(c.point - obj.centre) == pytest.approx(R, abs=2e-6)


def test_anchored_object_never_moves():
    obj = sphere(anchored=True)
    pose = obj.pose
    w = World(obj, GEOM, table_height=None)
    for q in np.linspace(GEOM.q_max, GEOM.q_min, 50):
        w.step(0.002, IDENT, q, 20.0)
        w.shift_object([0.1, 0.0, 0.0])
    assert w.obj.pose.allclose(pose)
    assert not w.dropped


def test_settle_anchored_moves_gripper_instead():
    obj = sphere((0.0, 0.01, 0.0), anchored=True)
    st_ = settle_grasp(IDENT, GEOM.q_min, True, obj, GEOM)
    assert np.allclose(st_.object_shift, 0.0)
    assert np.linalg.norm(st_.gripper_shift) > 0
    assert st_.blocked


def test_unsupported_object_falls():
    obj = WorldObject(RigidTransform.from_translation([0.5, 0.0, 0.0]), R, mass=0.3)
    w = World(obj, GEOM, table_height=-0.2)
    w.step(0.002, RigidTransform.from_translation([5.0, 0, 0]), GEOM.q_max, 0.0)
    assert w.obj.centre[2] == pytest.approx(-0.2 + R)
    assert w.supported and not w.dropped


def test_bottle_fill_schedule():
    assert bottle_fill_schedule(0.0) == pytest.approx(0.2)
    assert bottle_fill_schedule(20.0) == pytest.approx(1.2)
    assert bottle_fill_schedule(10.0) == pytest.approx(0.7)
    assert bottle_fill_schedule(100.0) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        bottle_fill_schedule(-1.0)
    delayed = MassSchedule(start=3.0)
    assert delayed(2.0) == pytest.approx(0.2) and delayed(13.0) == pytest.approx(0.7)


def test_object_validation():
    with pytest.raises(ValueError):
        WorldObject(IDENT, -0.01)
    with pytest.raises(ValueError):
        WorldObject(IDENT, 0.03, mu_true=-1.0)


def test_cylinder_surface():
    cyl = WorldObject(IDENT, 0.035, shape="cylinder", half_height=0.06)
    d, n = cyl.surface_offset([0.05, 0.0, 0.03])
    assert d == pytest.approx(0.015) and np.allclose(n, [1, 0, 0])
    assert cyl.surface_offset([0.05, 0.0, 0.2])[0] == np.inf
