"""6-DOF serial arm: shoulder pitch/roll, elbow pitch/roll, wrist pitch/roll.

At zero configuration the arm points along the base x-axis. Pitch joints
rotate about the local y-axis, roll joints about the local x-axis (the link
direction). The gripper base frame G is attached after the wrist roll with
z_G along the last link, so the wrist-roll axis is z_G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .se3 import RigidTransform, rot_x, rot_y, rot_z, rotvec

_AXES = ("y", "x", "y", "x", "y", "x")
_R_LINK_G = rot_y(math.pi / 2)  # z_G = x_link, y_G = y_link


class UnreachableError(RuntimeError):
    """Inverse kinematics failed to converge on the requested pose."""


@dataclass(frozen=True)
class ChainGeometry:
    upper_arm: float = 0.48
    lower_arm: float = 0.48
    base: RigidTransform = field(default_factory=RigidTransform.identity)
    lower: tuple = (-2.6, -math.pi, -2.6, -math.pi, -2.6, -math.pi)
    upper: tuple = (2.6, math.pi, 2.6, math.pi, 2.6, math.pi)
    velocity_limit: tuple = (20.0, 20.0, 20.0, 20.0, 25.0, 25.0)

    @property
    def reach(self) -> float:
        return self.upper_arm + self.lower_arm

    def within_limits(self, q, tol: float = 1e-12) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= np.array(self.lower) - tol) and np.all(q <= np.array(self.upper) + tol))

    def clip(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)


def _joint_rot(axis: str, angle: float) -> np.ndarray:
    return rot_y(angle) if axis == "y" else rot_x(angle)


def _chain(chain: ChainGeometry, q):
    """Walk the chain; returns (joint origins, joint axes, R_WG, p_WG) in world."""
    R = chain.base.rotation
    p = chain.base.translation.copy()
    origins, axes = [], []
    for i, (ax, qi) in enumerate(zip(_AXES, q)):
        if i == 2:
            p = p + R[:, 0] * chain.upper_arm
        elif i == 4:
            p = p + R[:, 0] * chain.lower_arm
        origins.append(p)
        axes.append(R[:, 1] if ax == "y" else R[:, 0])
        R = R @ _joint_rot(ax, qi)
    return origins, axes, R @ _R_LINK_G, p


def forward_kinematics(chain: ChainGeometry, q) -> RigidTransform:
    """Pose of the gripper base frame G in the world frame."""
    _, _, R, p = _chain(chain, q)
    return RigidTransform(R, p)


def jacobian(chain: ChainGeometry, q) -> tuple[np.ndarray, RigidTransform]:
    """Geometric Jacobian (linear rows first) of G's origin, in world axes."""
    origins, axes, R, p = _chain(chain, q)
    J = np.empty((6, 6))
    for i, (o, z) in enumerate(zip(origins, axes)):
        J[:3, i] = np.cross(z, p - o)
        J[3:, i] = z
    return J, RigidTransform(R, p)


def pose_error(target: RigidTransform, current: RigidTransform) -> np.ndarray:
    return np.concatenate(
        [target.translation - current.translation, rotvec(target.rotation @ current.rotation.T)]
    )


def inverse_kinematics(
    chain: ChainGeometry,
    target: RigidTransform,
    seed,
    damping: float = 0.01,
    tol: float = 1e-6,
    max_iter: int = 200,
    max_step: float = 0.5,
) -> np.ndarray:
    """Damped least-squares IK started from ``seed``.

    Staying close to the seed matters more than finding a global optimum: the
    re-grasp planner relies on small joint deltas.
    """
    q = chain.clip(np.asarray(seed, dtype=float))
    if np.linalg.norm(target.translation - chain.base.translation) > chain.reach + 1e-9:
        raise UnreachableError("target lies beyond the arm's reach")
    for _ in range(max_iter):
        J, T = jacobian(chain, q)
        e = pose_error(target, T)
        if np.linalg.norm(e[:3]) < tol and np.linalg.norm(e[3:]) < tol:
            return q
        lam = damping
        if np.linalg.cond(J) > 1e6:
            lam *= 10.0
        dq = J.T @ np.linalg.solve(J @ J.T + lam**2 * np.eye(6), e)
        n = np.linalg.norm(dq)
        if n > max_step:
            dq *= max_step / n
        q = chain.clip(q + dq)
    raise UnreachableError("inverse kinematics did not converge")


def wrist_roll_decomposition(T_rot: RigidTransform) -> tuple[float, RigidTransform]:
    """Split ``T_rot`` as ``Rz(alpha) @ remainder`` with alpha about the wrist roll (z_G).

    ZYX Euler order, so alpha is the first rotation. The split depends on that
    order; rotations not about z_G still leak into alpha once combined.
    """
    R = T_rot.rotation
    alpha = math.atan2(R[1, 0], R[0, 0])
    Rz_t = rot_z(alpha).T
    return alpha, RigidTransform(Rz_t @ R, Rz_t @ T_rot.translation)
