import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reflexgrasp.arm import (
    ChainGeometry,
    UnreachableError,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
    pose_error,
    wrist_roll_decomposition,
)
from reflexgrasp.se3 import RigidTransform, rot_x, rot_y, rot_z, rotvec

CHAIN = ChainGeometry()
HOME = np.array([0.9, 0.0, -1.8, 0.0, 0.9, 0.0])


def test_reach():
    assert CHAIN.reach == pytest.approx(0.96)
    T = forward_kinematics(CHAIN, np.zeros(6))
    assert np.allclose(T.translation, [0.96, 0.0, 0.0])


def test_base_joint_equivariance():
    q = np.array([0.0, 0.3, -0.7, 0.2, 0.5, 0.1])
    p0 = forward_kinematics(CHAIN, q).translation
    q1 = q.copy()
    q1[1] += math.pi / 2
    p1 = forward_kinematics(CHAIN, q1).translation
    # the first roll joint turns about the base x axis
    assert np.allclose(p1, rot_x(math.pi / 2) @ p0, atol=1e-12)
    # the zero pose extends along x, so pitching the shoulder swings it about y
    p_pitch = forward_kinematics(CHAIN, [math.pi / 2, 0, 0, 0, 0, 0]).translation
    assert np.allclose(p_pitch, rot_y(math.pi / 2) @ [0.96, 0, 0], atol=1e-12)


def test_jacobian_matches_finite_differences():
    q = HOME + np.array([0.1, -0.2, 0.1, 0.3, -0.1, 0.2])
    J, T0 = jacobian(CHAIN, q)
    h = 1e-7
    for i in range(6):
        dq = np.zeros(6)
        dq[i] = h
        T1 = forward_kinematics(CHAIN, q + dq)
        num = np.concatenate([(T1.translation - T0.translation) / h, rotvec(T1.rotation @ T0.rotation.T) / h])
        assert np.allclose(J[:, i], num, atol=1e-5)


def test_ik_fixed_point():
    q = inverse_kinematics(CHAIN, forward_kinematics(CHAIN, HOME), HOME)
    assert np.array_equal(q, HOME)


def test_ik_small_displacement():
    T = forward_kinematics(CHAIN, HOME)
    target = RigidTransform(T.rotation, T.translation + 0.01 * T.rotation[:, 2])
    q = inverse_kinematics(CHAIN, target, HOME)
    assert np.max(np.abs(q - HOME)) < 0.3
    e = pose_error(target, forward_kinematics(CHAIN, q))
    assert np.linalg.norm(e[:3]) < 1e-6 and np.linalg.norm(e[3:]) < 1e-6


def test_ik_unreachable():
    with pytest.raises(UnreachableError):
        inverse_kinematics(CHAIN, RigidTransform.from_translation([2.0, 0.0, 0.0]), HOME)


def test_fk_ik_round_trip_1000():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        q = HOME + rng.uniform(-0.6, 0.6, 6)
        target = forward_kinematics(CHAIN, q)
        seed = q + rng.normal(0.0, 0.1, 6)
        sol = inverse_kinematics(CHAIN, target, seed)
        e = pose_error(target, forward_kinematics(CHAIN, sol))
        assert np.linalg.norm(e[:3]) < 1e-6 and np.linalg.norm(e[3:]) < 1e-6


def test_ik_continuity():
    rng = np.random.default_rng(3)
    T = forward_kinematics(CHAIN, HOME)
    for _ in range(50):
        target = RigidTransform(T.rotation, T.translation + rng.uniform(-1e-3, 1e-3, 3))
        q = inverse_kinematics(CHAIN, target, HOME)
        assert np.max(np.abs(q - HOME)) <= 0.05


def test_wrist_roll_examples():
    alpha, rest = wrist_roll_decomposition(RigidTransform.identity())
    assert alpha == 0.0 and rest.allclose(RigidTransform.identity())
    alpha, rest = wrist_roll_decomposition(RigidTransform.from_rotation(rot_z(0.25)))
    assert alpha == pytest.approx(0.25, abs=1e-12)
    assert rest.allclose(RigidTransform.identity(), atol=1e-12)


@given(st.floats(-3, 3), st.floats(-1.4, 1.4), st.floats(-3, 3))
def test_wrist_roll_recomposes(a, b, c):
    R = rot_z(a) @ rot_y(b) @ rot_x(c)
    alpha, rest = wrist_roll_decomposition(RigidTransform.from_rotation(R))
    assert np.allclose(rot_z(alpha) @ rest.rotation, R, atol=1e-9)
    assert alpha == pytest.approx(a, abs=1e-9)


def test_limits():
    assert CHAIN.within_limits(HOME)
    assert not CHAIN.within_limits(HOME + np.array([0, 0, 0, 0, 0, 4.0]))
    assert CHAIN.within_limits(CHAIN.clip(np.full(6, 10.0)))
