"""Grasp reflexes: detection, antipodal check, anti-slip law, re-grasp planner and FSM.

``fsm_tick`` is pure: it takes the previous ``ReflexState`` plus this tick's
inputs and returns a new state and the commands for the low-level loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .arm import ChainGeometry, UnreachableError, inverse_kinematics, wrist_roll_decomposition
from .gripper import (
    ContactReading,
    GripperGeometry,
    RangeError,
    desired_contact_frames,
    fingertip_frames,
    linear_gripper_angle,
    separation,
    torque_for_force,
)
from .se3 import RigidTransform, polar_angle, rot_x, rot_y

TELEOP = "Teleop"
ANTISLIP = "AntiSlip"
PLANNING = "RegraspPlanning"
EXECUTING = "RegraspExecuting"
MODES = (TELEOP, ANTISLIP, PLANNING, EXECUTING)


@dataclass(frozen=True)
class ReflexParams:
    gamma_psi: float = 0.3  # rad
    gamma_n: float = 0.3  # N
    mu_hat: float = 0.5
    gamma_c: float = 1.6
    epsilon_r: float = 0.01  # m
    T_f: float = 0.150  # s
    gamma_q: float = 0.05  # rad
    max_attempts: int = 5
    control_rate: float = 500.0
    enabled: bool = True  # False: observe and log only

    def __post_init__(self):
        if self.gamma_c < 1:
            raise ValueError("gamma_c must be >= 1")
        if self.mu_hat <= 0 or self.gamma_psi <= 0 or self.gamma_n < 0:
            raise ValueError("reflex thresholds must be positive")
        if self.T_f <= 0 or self.max_attempts < 0:
            raise ValueError("T_f must be positive and max_attempts non-negative")

    @property
    def gamma_mu(self) -> float:
        return self.mu_hat / self.gamma_c


# -- detection and checks ----------------------------------------------------


def gripper_closed_on_object(q_gl: float, q_gf: float, params: ReflexParams) -> bool:
    """Leader closed at least as far as the follower, within ``gamma_q``."""
    return q_gl - q_gf <= params.gamma_q


def grasp_detected(
    q_gl: float, q_gf: float, reading_f: ContactReading, reading_a: ContactReading, params: ReflexParams
) -> bool:
    """Hierarchical check: the force condition is only consulted once the gripper condition holds."""
    if not gripper_closed_on_object(q_gl, q_gf, params):
        return False
    return abs(reading_f.f_n) >= params.gamma_n and abs(reading_a.f_n) >= params.gamma_n


def antipodal_check(
    T_f_cf: RigidTransform, T_a_ca: RigidTransform, q_g: float, geom: GripperGeometry, params: ReflexParams
) -> tuple[float, float, bool]:
    """Polar angles of the measured contact frames from the ideal antipodal ones."""
    T_f_des, T_a_des = desired_contact_frames(geom, q_g)
    psi_f = polar_angle(T_f_des.inv() @ T_f_cf)
    psi_a = polar_angle(T_a_des.inv() @ T_a_ca)
    return psi_f, psi_a, psi_f <= params.gamma_psi and psi_a <= params.gamma_psi


def desired_normal_force(reading_f: ContactReading, reading_a: ContactReading, params: ReflexParams) -> float:
    """Normal force that keeps the worse of the two fingers at the friction ratio ``gamma_mu``."""
    return max(reading_f.f_t, reading_a.f_t) / params.gamma_mu


def antislip_torque(
    reading_f: ContactReading,
    reading_a: ContactReading,
    geom: GripperGeometry,
    params: ReflexParams,
    user_torque: float = 0.0,
) -> float:
    """Feed-forward gripper torque; adds grip on top of the user, never removes it.

    Closing torques are negative, so the stronger of the two is the smaller
    number. The result is limited to the gripper's force rating.
    """
    f = min(desired_normal_force(reading_f, reading_a, params), geom.max_grip_force)
    tau = min(torque_for_force(geom, f), user_torque)
    return max(tau, -geom.max_torque)


# -- object estimate and re-grasp planning -----------------------------------


@dataclass(frozen=True)
class ObjectEstimate:
    p_hat: np.ndarray  # centre in G
    r_hat: float
    residual: float
    fallback: bool = False


def estimate_object(
    T_g_cf: RigidTransform, T_g_ca: RigidTransform, fallback_radius: Optional[float] = None, cond_limit: float = 1e8
) -> ObjectEstimate:
    """Least-squares sphere through two contacts with known inward normals.

    Each contact gives ``p_O - r n_C = p_C``; stacking both is a 6x4 linear
    system in ``(p_O, r)``. When the normals are (anti)parallel the system loses
    rank; the centre is then taken as the contact midpoint and the radius from
    ``fallback_radius`` (or half the contact distance).
    """
    p_f, n_f = T_g_cf.translation, T_g_cf.rotation[:, 2]
    p_a, n_a = T_g_ca.translation, T_g_ca.rotation[:, 2]
    A = np.zeros((6, 4))
    A[:3, :3] = np.eye(3)
    A[3:, :3] = np.eye(3)
    A[:3, 3] = -n_f
    A[3:, 3] = -n_a
    b = np.concatenate([p_f, p_a])
    if np.linalg.cond(A) < cond_limit:
        x = np.linalg.pinv(A) @ b
        if x[3] > 0:
            return ObjectEstimate(x[:3], float(x[3]), float(np.linalg.norm(A @ x - b)))
    mid = 0.5 * (p_f + p_a)
    r = fallback_radius if fallback_radius is not None else 0.5 * float(np.linalg.norm(p_a - p_f))
    x = np.concatenate([mid, [r]])
    return ObjectEstimate(mid, float(r), float(np.linalg.norm(A @ x - b)), True)


@dataclass(frozen=True)
class JointTrajectory:
    """Linear joint-space interpolation, sampled once per control tick."""

    start: np.ndarray  # 6 arm joints + gripper
    end: np.ndarray
    n_ticks: int
    dt: float

    @property
    def duration(self) -> float:
        return self.n_ticks * self.dt

    def sample(self, k: int) -> np.ndarray:
        """Setpoint ``k`` ticks after the start (clamped to the end)."""
        s = min(max(k, 0), self.n_ticks) / self.n_ticks
        return self.start + s * (self.end - self.start)


@dataclass(frozen=True)
class RegraspPlan:
    trajectory: JointTrajectory
    q_g_star: float
    p_go_star: np.ndarray
    theta_c: float
    phi_c: float
    alpha: float
    T_wg_star: RigidTransform


def correction_angles(theta_f: float, phi_f: float, theta_a: float, phi_a: float) -> tuple[float, float]:
    """Mean misalignment of the two contacts, with translation-induced parts cancelling."""
    return 0.5 * (theta_f + theta_a), 0.5 * (phi_f - phi_a)


def plan_regrasp(
    estimate: ObjectEstimate,
    T_wg: RigidTransform,
    q_arm,
    q_g: float,
    angles: tuple[float, float, float, float],
    chain: ChainGeometry,
    geom: GripperGeometry,
    params: ReflexParams,
) -> RegraspPlan:
    """Arm and gripper trajectory that re-centres the object for an antipodal grasp.

    ``angles`` are the measured ``(theta_f, phi_f, theta_a, phi_a)``. Raises
    ``UnreachableError`` if the new gripper pose has no IK solution.
    """
    theta_f, phi_f, theta_a, phi_a = angles
    a, b, _ = geom.fit
    q_star = float(np.clip(linear_gripper_angle(estimate.r_hat + geom.r_sensor + params.epsilon_r, a, b),
                           geom.q_min, geom.q_max))

    T_gf, T_ga = fingertip_frames(geom, q_star)
    T_f_des, T_a_des = desired_contact_frames(geom, q_star)
    T_g_cf_star = T_gf @ T_f_des
    T_g_ca_star = T_ga @ T_a_des
    p_go_star = 0.5 * (T_g_cf_star.translation + T_g_ca_star.translation)

    theta_c, phi_c = correction_angles(theta_f, phi_f, theta_a, phi_a)
    # correction expressed about the fixed finger's ideal contact axes, which are
    # parallel to the object frame (O shares G's orientation)
    R_c = T_g_cf_star.rotation
    R_oo = R_c @ rot_y(phi_c) @ rot_x(theta_c) @ R_c.T
    alpha, _ = wrist_roll_decomposition(RigidTransform.from_rotation(R_oo))

    T_go = RigidTransform(np.eye(3), estimate.p_hat)
    T_go_star = RigidTransform(np.eye(3), p_go_star)
    T_wg_star = T_wg @ T_go @ T_go_star.inv()
    q_arm = np.asarray(q_arm, dtype=float)
    q_new = inverse_kinematics(chain, T_wg_star, q_arm)
    q_new = q_new.copy()
    q_new[5] += alpha
    if not chain.within_limits(q_new):
        raise UnreachableError("wrist roll correction exceeds the joint limit")

    n = max(1, int(round(params.T_f * params.control_rate)))
    traj = JointTrajectory(
        np.concatenate([q_arm, [q_g]]), np.concatenate([q_new, [q_star]]), n, 1.0 / params.control_rate
    )
    return RegraspPlan(traj, q_star, p_go_star, theta_c, phi_c, alpha, T_wg_star)


# -- state machine -----------------------------------------------------------


@dataclass(frozen=True)
class FsmInputs:
    t: float
    q_gl: float
    q_gf: float
    reading_f: ContactReading
    reading_a: ContactReading
    q_arm: np.ndarray
    T_wg: RigidTransform
    user_torque: float


@dataclass(frozen=True)
class Robot:
    chain: ChainGeometry
    geom: GripperGeometry


@dataclass(frozen=True)
class ReflexState:
    mode: str = TELEOP
    attempt_count: int = 0
    evaluations: int = 0
    trajectory: Optional[JointTrajectory] = None
    traj_tick: int = 0
    secure: bool = False
    gave_up: bool = False
    observed: bool = False  # monitor-only mode already logged this grasp
    fresh_after: float = -math.inf  # readings must be newer than this
    psi: tuple = (math.nan, math.nan)
    pending: Optional[tuple] = None  # readings captured for the planner


@dataclass(frozen=True)
class Commands:
    gripper_torque: Optional[float] = None  # overrides the user's torque
    setpoint: Optional[np.ndarray] = None  # 6 arm joints + gripper, tracked kinematically
    events: tuple = ()
    psi: Optional[tuple] = None  # set when a grasp was evaluated this tick


def _measured_frames(reading_f: ContactReading, reading_a: ContactReading, geom: GripperGeometry):
    return reading_f.frame(geom.r_sensor), reading_a.frame(geom.r_sensor)


def fsm_tick(state: ReflexState, inp: FsmInputs, params: ReflexParams, robot: Robot) -> tuple[ReflexState, Commands]:
    geom = robot.geom
    released = not gripper_closed_on_object(inp.q_gl, inp.q_gf, params)

    if state.mode == EXECUTING:
        k = state.traj_tick + 1
        sp = state.trajectory.sample(k)
        if k >= state.trajectory.n_ticks:
            # wait for a sensor sample taken after the move before judging again
            return replace(state, mode=TELEOP, trajectory=None, traj_tick=0, fresh_after=inp.t), Commands(
                setpoint=sp, events=("regrasp_done",)
            )
        return replace(state, traj_tick=k), Commands(setpoint=sp)

    if state.mode == ANTISLIP:
        if released:
            return replace(state, mode=TELEOP, secure=False, attempt_count=0), Commands(events=("release",))
        tau = antislip_torque(inp.reading_f, inp.reading_a, geom, params, inp.user_torque)
        return state, Commands(gripper_torque=tau)

    if state.mode == PLANNING:
        rf, ra = state.pending
        T_f_cf, T_a_ca = _measured_frames(rf, ra, geom)
        T_gf, T_ga = fingertip_frames(geom, inp.q_gf)
        fallback = separation(geom, inp.q_gf) / 2 - geom.r_sensor
        est = estimate_object(T_gf @ T_f_cf, T_ga @ T_a_ca, fallback_radius=fallback)
        count = state.attempt_count + 1
        try:
            plan = plan_regrasp(
                est, inp.T_wg, inp.q_arm, inp.q_gf, (rf.theta, rf.phi, ra.theta, ra.phi),
                robot.chain, geom, params,
            )
        except (UnreachableError, RangeError):
            return replace(state, mode=TELEOP, attempt_count=count, pending=None, fresh_after=inp.t), Commands(
                events=("ik_failure",)
            )
        new = replace(state, mode=EXECUTING, attempt_count=count, trajectory=plan.trajectory, traj_tick=0,
                      pending=None)
        return new, Commands(setpoint=plan.trajectory.sample(0), events=("regrasp_start",))

    # Teleop
    if released:
        if state.attempt_count or state.gave_up or state.observed:
            return replace(state, attempt_count=0, gave_up=False, observed=False), Commands()
        return state, Commands()
    if state.gave_up or state.observed:
        return state, Commands()
    rf, ra = inp.reading_f, inp.reading_a
    if min(rf.timestamp, ra.timestamp) <= state.fresh_after:
        return state, Commands()
    if not (rf.in_contact and ra.in_contact and grasp_detected(inp.q_gl, inp.q_gf, rf, ra, params)):
        return state, Commands()

    T_f_cf, T_a_ca = _measured_frames(rf, ra, geom)
    psi_f, psi_a, ok = antipodal_check(T_f_cf, T_a_ca, inp.q_gf, geom, params)
    evaluated = replace(state, evaluations=state.evaluations + 1, psi=(psi_f, psi_a))
    psi = (psi_f, psi_a)
    if not params.enabled:
        return replace(evaluated, observed=True), Commands(events=("grasp_eval",), psi=psi)
    if ok:
        return replace(evaluated, mode=ANTISLIP, secure=True), Commands(events=("grasp_eval", "secure"), psi=psi)
    if state.attempt_count >= params.max_attempts:
        return replace(evaluated, gave_up=True), Commands(events=("grasp_eval", "grasp_failure"), psi=psi)
    return replace(evaluated, mode=PLANNING, pending=(rf, ra)), Commands(events=("grasp_eval",), psi=psi)
