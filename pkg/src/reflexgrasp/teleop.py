"""Bilateral leader/follower PD coupling and the scripted operator.

The operator stands in for a human at the leader device. It plans straight
Cartesian moves for the leader gripper frame, squeezes the leader gripper a
fixed amount past the follower once the follower stops closing, and steps
through a small task script (approach, close, wait, lift, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation, Slerp

from .arm import ChainGeometry, UnreachableError, forward_kinematics, inverse_kinematics
from .gripper import GripperGeometry, fingertip_frames, separation
from .se3 import RigidTransform, rot_z


@dataclass(frozen=True)
class CouplingGains:
    kp: float = 20.0  # Nm/rad
    kd: float = 0.5  # Nm s/rad

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ValueError("coupling gains must be positive")


def gravity_torque(q) -> np.ndarray:
    """Gravity compensation term; link gravity is cancelled exactly."""
    return np.zeros_like(np.asarray(q, dtype=float))


def coupling_torques(q_l, qd_l, q_f, qd_f, gains: CouplingGains) -> tuple[np.ndarray, np.ndarray]:
    """Joint-space PD coupling. Returns ``(tau_f, tau_l)`` with ``tau_l = -tau_f``."""
    q_l, qd_l, q_f, qd_f = (np.asarray(v, dtype=float) for v in (q_l, qd_l, q_f, qd_f))
    tau_f = gains.kp * (q_l - q_f) + gains.kd * (qd_l - qd_f) + gravity_torque(q_f)
    return tau_f, -tau_f


@dataclass(frozen=True)
class JointDynamics:
    """Per-joint double integrator with viscous damping."""

    inertia: float = 0.05
    damping: float = 0.1

    def step(self, q, qd, tau, dt: float, lower=None, upper=None) -> tuple[np.ndarray, np.ndarray]:
        """Semi-implicit Euler; joints that hit a limit stop there."""
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        qd = qd + dt * (np.asarray(tau, dtype=float) - self.damping * qd) / self.inertia
        q = q + dt * qd
        if lower is not None:
            lo = q < lower
            q = np.where(lo, lower, q)
            qd = np.where(lo, 0.0, qd)
        if upper is not None:
            hi = q > upper
            q = np.where(hi, upper, q)
            qd = np.where(hi, 0.0, qd)
        return q, qd


# -- geometry helpers for the operator ---------------------------------------


def closing_angle_for(geom: GripperGeometry, radius: float) -> float:
    """Exact gripper angle at which both domes touch a centred sphere of ``radius``."""
    d = 2.0 * (radius + geom.r_sensor)
    if not (2 * geom.r_sensor < d < separation(geom, geom.q_max)):
        raise ValueError(f"object radius {radius} does not fit the gripper")
    return brentq(lambda q: separation(geom, q) - d, geom.q_min, geom.q_max, xtol=1e-12)


def grasp_point(geom: GripperGeometry, radius: float) -> np.ndarray:
    """Object centre in G for a centred grasp: midway between the dome centres."""
    T_gf, T_ga = fingertip_frames(geom, closing_angle_for(geom, radius))
    return 0.5 * (T_gf.translation + T_ga.translation)


def approach_rotation(base_point, target) -> np.ndarray:
    """Gripper orientation for a horizontal approach from the base toward ``target``.

    z_G points along the horizontal approach direction and x_G points down.
    """
    d = np.asarray(target, dtype=float) - np.asarray(base_point, dtype=float)
    d[2] = 0.0
    n = np.linalg.norm(d)
    z = d / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])
    x = np.array([0.0, 0.0, -1.0])
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def aim_pose(
    obj_centre, geom: GripperGeometry, radius: float, offset=(0.0, 0.0, 0.0), roll_error: float = 0.0,
    base_point=(0.0, 0.0, 0.0),
) -> RigidTransform:
    """Gripper pose that puts the object at ``grasp_point + offset`` (offset in G)."""
    R = approach_rotation(base_point, obj_centre) @ rot_z(roll_error)
    p_go = grasp_point(geom, radius) + np.asarray(offset, dtype=float)
    return RigidTransform(R, np.asarray(obj_centre, dtype=float) - R @ p_go)


def sample_aim_offset(rng: np.random.Generator, sigma: float, limit: float) -> np.ndarray:
    """Gaussian aim error in the G x/z plane, redrawn while it exceeds ``limit``."""
    for _ in range(1000):
        ex, ez = sigma * rng.standard_normal(2)
        if math.hypot(ex, ez) <= limit:
            return np.array([ex, 0.0, ez])
    return np.zeros(3)


def smoothstep(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True)
class JointPath:
    """Joint waypoints of a straight Cartesian move, timed with a smoothstep."""

    waypoints: np.ndarray  # (n, 6)
    duration: float

    def at(self, t: float) -> np.ndarray:
        if self.duration <= 0:
            return self.waypoints[-1].copy()
        s = smoothstep(t / self.duration) * (len(self.waypoints) - 1)
        i = min(int(s), len(self.waypoints) - 2)
        f = s - i
        return (1 - f) * self.waypoints[i] + f * self.waypoints[i + 1]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]


def cartesian_path(
    chain: ChainGeometry, q_start, T_goal: RigidTransform, speed: float, spacing: float = 0.01,
    min_duration: float = 0.2,
) -> JointPath:
    """Straight-line move of G from FK(q_start) to ``T_goal`` (orientation slerped linearly)."""
    T0 = forward_kinematics(chain, q_start)
    dist = float(np.linalg.norm(T_goal.translation - T0.translation))
    ang = float(np.linalg.norm(Rotation.from_matrix(T_goal.rotation @ T0.rotation.T).as_rotvec()))
    n = max(2, int(math.ceil(max(dist / spacing, ang / 0.1))) + 1)
    slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([T0.rotation, T_goal.rotation])))
    q = np.asarray(q_start, dtype=float)
    wps = [q.copy()]
    for s in np.linspace(0.0, 1.0, n)[1:]:
        T = RigidTransform(slerp([s]).as_matrix()[0], (1 - s) * T0.translation + s * T_goal.translation)
        q = inverse_kinematics(chain, T, q)
        wps.append(q)
    # smoothstep peaks at 1.5x the mean speed
    return JointPath(np.array(wps), max(min_duration, dist / speed if speed > 0 else 0.0))


# -- operator ----------------------------------------------------------------


@dataclass(frozen=True)
class OperatorScript:
    task: str = "hold"  # "hold", "regrasp" or "pick_place"
    aim_offset: tuple = (0.0, 0.0, 0.0)  # fixed aim error in G added on the first attempt (m)
    roll_error: float = 0.0  # rad about z_G, first attempt
    aim_sigma: float = 0.0  # m, random aim error drawn for every attempt
    approach_speed: float = 0.25  # m/s
    standoff: float = 0.08  # m back along z_G before the final approach
    close_speed: float = 1.5  # rad/s on the leader gripper
    grip_force: float = 4.0  # N the user squeezes with
    settle: float = 0.25  # s pause at the aim pose before closing
    dwell: float = 0.3  # s holding still before lifting (without waiting for a secure grasp)
    wait_secure: bool = True
    secure_timeout: float = 3.0
    lift_height: float = 0.08
    place_offset: tuple = (0.0, 0.15, 0.0)  # world displacement of the place target
    release_time: Optional[float] = None  # absolute time to release ("hold" task)
    release_duration: float = 0.2
    max_user_attempts: int = 6

    def __post_init__(self):
        if self.task not in ("hold", "regrasp", "pick_place"):
            raise ValueError(f"unknown operator task {self.task!r}")
        if self.approach_speed <= 0 or self.close_speed <= 0:
            raise ValueError("operator speeds must be positive")
        if self.grip_force < 0:
            raise ValueError("grip_force must be non-negative")


@dataclass
class FollowerView:
    """What the operator can see of the follower side each tick."""

    q: np.ndarray
    q_g: float
    mode: str = "Teleop"
    secure: bool = False


@dataclass
class Operator:
    script: OperatorScript
    chain: ChainGeometry
    geom: GripperGeometry
    gains: CouplingGains
    rng: np.random.Generator
    q: np.ndarray
    q_g: float
    base_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phase: str = "start"
    phase_t0: float = 0.0
    path: Optional[JointPath] = None
    attempts: int = 0
    events: list = field(default_factory=list)
    squeezing: bool = False
    released_at: Optional[float] = None
    place_target: Optional[np.ndarray] = None
    aim: Optional[np.ndarray] = None
    first_motion: Optional[float] = None
    last_plan_error: Optional[str] = None
    _pending: Optional[RigidTransform] = None

    @property
    def done(self) -> bool:
        return self.phase in ("done", "failed")

    def _enter(self, phase: str, t: float, path: Optional[JointPath] = None):
        self.phase, self.phase_t0, self.path = phase, t, path
        self.events.append((t, f"operator:{phase}"))

    def _move(self, T_goal: RigidTransform, speed: Optional[float] = None) -> Optional[JointPath]:
        try:
            return cartesian_path(self.chain, self.q, T_goal, speed or self.script.approach_speed)
        except UnreachableError as exc:
            self.last_plan_error = str(exc)
            return None

    def _squeeze_delta(self) -> float:
        return self.script.grip_force * self.geom.l_finger / self.gains.kp

    def _aim_targets(self, obj_centre, radius):
        limit = 0.8 * (radius + self.geom.r_sensor)
        off = sample_aim_offset(self.rng, self.script.aim_sigma, limit) if self.script.aim_sigma > 0 else np.zeros(3)
        roll = 0.0
        if self.attempts == 1:
            off = off + np.asarray(self.script.aim_offset, dtype=float)
            roll = self.script.roll_error
        self.aim = off
        T_aim = aim_pose(obj_centre, self.geom, radius, off, roll, self.base_point)
        T_stand = RigidTransform(T_aim.rotation, T_aim.translation - self.script.standoff * T_aim.rotation[:, 2])
        return T_stand, T_aim

    def _start_attempt(self, t: float, world) -> None:
        self.attempts += 1
        if self.attempts > self.script.max_user_attempts:
            self._enter("failed", t)
            return
        self.events.append((t, f"operator:attempt {self.attempts}"))
        T_stand, T_aim = self._aim_targets(world.obj.centre, world.obj.radius)
        self._pending = T_aim
        path = self._move(T_stand)
        self._enter("to_standoff", t, path)
        if path is None:
            self._enter("failed", t)

    def _gripper_close(self, dt: float, q_gf: float) -> None:
        delta = self._squeeze_delta()
        self.q_g = max(self.q_g - self.script.close_speed * dt, q_gf - delta, self.geom.q_min - delta)

    def _gripper_open(self, dt: float) -> None:
        self.q_g = min(self.q_g + self.script.close_speed * dt, self.geom.q_max)

    def _path_done(self, t: float) -> bool:
        return self.path is None or t - self.phase_t0 >= self.path.duration

    def step(self, t: float, dt: float, world, follower: FollowerView) -> tuple[np.ndarray, float]:
        """Advance the script one tick; returns the leader command ``(q, q_g)``."""
        s = self.script
        if follower.mode == "RegraspExecuting":
            # the leader is dragged along by the follower
            self.q = np.array(follower.q, dtype=float)
            self.q_g = float(follower.q_g)
            return self.q.copy(), self.q_g

        if self.phase == "start":
            self.first_motion = t
            self.place_target = world.obj.centre + np.asarray(s.place_offset, dtype=float)
            self._start_attempt(t, world)
        elif self.phase == "to_standoff":
            if self._path_done(t):
                self._enter("approach", t, self._move(self._pending))
        elif self.phase == "approach":
            if self._path_done(t):
                self._enter("settle", t)
        elif self.phase == "settle":
            if t - self.phase_t0 >= s.settle:
                self._enter("close", t)
        elif self.phase == "close":
            self._gripper_close(dt, follower.q_g)
            stalled = follower.q_g - self.q_g >= self._squeeze_delta() - 1e-9
            if stalled or self.q_g <= self.geom.q_min:
                self._enter("wait", t)
        elif self.phase == "wait":
            self._gripper_close(dt, follower.q_g)
            waited = t - self.phase_t0
            if s.wait_secure:
                ready = follower.secure or waited >= s.secure_timeout
            else:
                ready = waited >= s.dwell
            if ready:
                self._after_grasp(t, world)
        elif self.phase in ("lift", "transport", "lower"):
            self._gripper_close(dt, follower.q_g)
            # setting the object down on the table while lowering is expected
            lost = not world.held and (self.phase != "lower" or not world.supported)
            if s.task == "pick_place" and lost:
                self.events.append((t, "operator:lost object"))
                self._enter("abort_open", t)
            elif self._path_done(t):
                self._next_carry_phase(t, world)
        elif self.phase == "hold":
            self._gripper_close(dt, follower.q_g)
            if s.release_time is not None and t >= s.release_time:
                self._enter("release", t)
        elif self.phase == "release":
            self._gripper_open(dt)
            if t - self.phase_t0 >= s.release_duration:
                self.released_at = t
                T = forward_kinematics(self.chain, self.q)
                back = RigidTransform(T.rotation, T.translation - s.standoff * T.rotation[:, 2])
                self._enter("retreat", t, self._move(back))
        elif self.phase == "retreat":
            if self._path_done(t):
                self._enter("done", t)
        elif self.phase == "abort_open":
            self._gripper_open(dt)
            if t - self.phase_t0 >= s.release_duration:
                T = forward_kinematics(self.chain, self.q)
                up = RigidTransform(T.rotation, T.translation + np.array([0.0, 0.0, s.lift_height]))
                self._enter("abort_retreat", t, self._move(up))
        elif self.phase == "abort_retreat":
            self._gripper_open(dt)
            if self._path_done(t):
                self._start_attempt(t, world)

        if self.path is not None and self.phase in (
            "to_standoff", "approach", "lift", "transport", "lower", "retreat", "abort_retreat"
        ):
            self.q = self.path.at(t - self.phase_t0)
        return self.q.copy(), self.q_g

    def _after_grasp(self, t: float, world) -> None:
        s = self.script
        if s.task == "regrasp":
            self._enter("hold", t)
            return
        T = forward_kinematics(self.chain, self.q)
        up = RigidTransform(T.rotation, T.translation + np.array([0.0, 0.0, s.lift_height]))
        self._enter("lift", t, self._move(up))

    def _next_carry_phase(self, t: float, world) -> None:
        s = self.script
        T = forward_kinematics(self.chain, self.q)
        if s.task == "hold":
            self._enter("hold", t)
        elif self.phase == "lift":
            # the operator steers the object, not the gripper, onto the target
            shift = (self.place_target - world.obj.centre) * np.array([1.0, 1.0, 0.0])
            dest = T.translation + shift
            self._enter("transport", t, self._move(RigidTransform(T.rotation, dest)))
        elif self.phase == "transport":
            down = T.translation - np.array([0.0, 0.0, s.lift_height])
            self._enter("lower", t, self._move(RigidTransform(T.rotation, down)))
        else:
            self._enter("release", t)


def operator_step(t: float, dt: float, operator: Operator, world, follower: FollowerView):
    """Functional entry point: the leader joint command for this tick."""
    return operator.step(t, dt, world, follower)
