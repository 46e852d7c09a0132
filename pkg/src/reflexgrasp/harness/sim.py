"""Scenario runner: one deterministic leader/follower/world simulation."""

from __future__ import annotations

import collections
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..arm import ChainGeometry, forward_kinematics, jacobian
from ..gripper import FingertipSensor, GripperGeometry, fingertip_frames, grip_force_from_torque
from ..reflex import ANTISLIP, EXECUTING, FsmInputs, ReflexState, Robot, desired_contact_frames, fsm_tick
from ..se3 import RigidTransform, azimuth_angle, polar_angle
from ..teleop import FollowerView, JointDynamics, Operator, coupling_torques
from ..world import MassSchedule, World, WorldObject, settle_grasp
from .config import ScenarioConfig

TRACE_COLUMNS = (
    ["t", "mode"]
    + [f"q_f{i}" for i in range(1, 7)]
    + ["q_gf"]
    + [f"q_l{i}" for i in range(1, 7)]
    + ["q_gl"]
    + ["theta_f", "phi_f", "F_n_f", "F_t_f", "theta_a", "phi_a", "F_n_a", "F_t_a"]
    + ["psi_f", "psi_a", "F_n_cmd", "F_user", "ratio", "gamma_mu"]
    + ["slip", "held", "obj_x", "obj_y", "obj_z", "mass", "attempt_count", "operator_phase"]
)


@dataclass
class Evaluation:
    t: float
    psi_f: float
    psi_a: float
    rho_f: float
    rho_a: float
    user_attempt: int
    outcome: str


@dataclass
class TrialMetrics:
    name: str
    seed: int
    reflexes: bool
    task: str
    config_sha256: str
    success: bool = False
    initial_psi: tuple = (math.nan, math.nan)
    final_psi: tuple = (math.nan, math.nan)
    initial_rho: tuple = (math.nan, math.nan)
    final_rho: tuple = (math.nan, math.nan)
    grasp_attempts: int = 0  # grasp evaluations in the trial
    regrasps: int = 0
    user_attempts: int = 0
    time_to_secure: Optional[float] = None
    slip_events: int = 0
    slip_after_secure: int = 0
    trial_time: Optional[float] = None
    sim_time: float = 0.0
    final_mode: str = "Teleop"
    ik_failures: int = 0
    grasp_failures: int = 0
    trajectory_durations: list = field(default_factory=list)
    limit_violations: int = 0
    evaluations: list = field(default_factory=list)
    ratio_trace: list = field(default_factory=list)  # (t, F_t, F_n_cmd, ratio) per sensor sample while secure

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["initial_psi"] = list(self.initial_psi)
        d["final_psi"] = list(self.final_psi)
        return d


@dataclass
class TrialResult:
    metrics: TrialMetrics
    rows: list
    header: str


def _relative_normal(T_des: RigidTransform, T_meas: RigidTransform) -> np.ndarray:
    return (T_des.inv() @ T_meas).rotation[:, 2]


def _build_world(cfg: ScenarioConfig, geom: GripperGeometry) -> World:
    oc = cfg.object
    mass = MassSchedule(**oc.mass_schedule) if oc.mass_schedule else oc.mass
    obj = WorldObject(
        RigidTransform(np.eye(3), oc.position), oc.radius, mass, oc.mu_true, oc.anchored, oc.shape, oc.half_height
    )
    return World(obj, geom, cfg.table_height)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, chain: Optional[ChainGeometry] = None,
                 geom: Optional[GripperGeometry] = None):
        self.cfg = cfg
        self.chain = chain or ChainGeometry()
        self.geom = geom or GripperGeometry()
        self.dt = 1.0 / cfg.control_rate
        self.params = dataclasses.replace(cfg.reflex, enabled=cfg.reflexes_enabled, control_rate=cfg.control_rate)
        self.robot = Robot(self.chain, self.geom)
        ss = np.random.SeedSequence(cfg.seed)
        op_seq, sensor_seq = ss.spawn(2)
        self.sensor_rng = np.random.default_rng(sensor_seq)
        self.world = _build_world(cfg, self.geom)
        q0 = np.array(cfg.home, dtype=float)
        self.q_f = q0.copy()
        self.qd_f = np.zeros(6)
        self.q_gf = self.geom.q_max
        self.qd_gf = 0.0
        self.q_l = q0.copy()
        self.q_gl = self.geom.q_max
        # without reflexes there is no "secure" cue to wait for
        script = cfg.operator if cfg.reflexes_enabled else dataclasses.replace(cfg.operator, wait_secure=False)
        self.operator = Operator(
            script, self.chain, self.geom, cfg.gains, np.random.default_rng(op_seq), q0.copy(), self.geom.q_max,
            base_point=self.chain.base.translation.copy(),
        )
        self.arm_dyn = JointDynamics(cfg.dynamics.arm_inertia, cfg.dynamics.arm_damping)
        self.grip_dyn = JointDynamics(cfg.dynamics.gripper_inertia, cfg.dynamics.gripper_damping)
        self.sensors = (
            FingertipSensor(self.geom, cfg.noise, cfg.control_rate),
            FingertipSensor(self.geom, cfg.noise, cfg.control_rate),
        )
        self.state = ReflexState()
        self.delay = collections.deque()
        self.sha = cfg.sha256()

    # -- helpers -------------------------------------------------------------

    def _sense(self, tick: int, T_wg: RigidTransform):
        T_gf, T_ga = fingertip_frames(self.geom, self.q_gf)
        out = []
        for sensor, T_gtip, c in zip(self.sensors, (T_gf, T_ga), (self.world.contacts.fixed, self.world.contacts.actuated)):
            T_wtip = T_wg @ T_gtip
            if c is None:
                reading, new = sensor.update(tick, T_wtip, None, None, self.sensor_rng)
            else:
                reading, new = sensor.update(tick, T_wtip, c.point, -c.force_on_object, self.sensor_rng)
            out.append((reading, new))
        return out

    def _angles(self, rf, ra, q_g):
        T_f_des, T_a_des = desired_contact_frames(self.geom, q_g)
        T_f = rf.frame(self.geom.r_sensor)
        T_a = ra.frame(self.geom.r_sensor)
        n_f = _relative_normal(T_f_des, T_f)
        n_a = _relative_normal(T_a_des, T_a)
        return (
            polar_angle(T_f_des.inv() @ T_f), polar_angle(T_a_des.inv() @ T_a),
            azimuth_angle(n_f), azimuth_angle(n_a),
        )

    def _shift_arm(self, shift: np.ndarray) -> None:
        J, _ = jacobian(self.chain, self.q_f)
        twist = np.concatenate([shift, np.zeros(3)])
        dq = J.T @ np.linalg.solve(J @ J.T + 1e-6 * np.eye(6), twist)
        self.q_f = self.chain.clip(self.q_f + dq)

    # -- main loop -------------------------------------------------------------

    def run(self) -> TrialResult:
        cfg, dt, geom = self.cfg, self.dt, self.geom
        m = TrialMetrics(cfg.name, cfg.seed, cfg.reflexes_enabled, cfg.operator.task, self.sha)
        rows = []
        n_ticks = int(round(cfg.duration * cfg.control_rate))
        gamma_mu = self.params.gamma_mu
        secure_t = None
        slip_at_secure = 0
        hold_since = None
        pending_ratio = None  # (t, F_t) sampled this tick, completed with next tick's command
        lower, upper = np.array(self.chain.lower), np.array(self.chain.upper)
        last_psi = (math.nan, math.nan)
        q_l_prev, q_gl_prev = self.q_l.copy(), self.q_gl
        t = 0.0

        for tick in range(n_ticks + 1):
            t = tick * dt
            T_wg = forward_kinematics(self.chain, self.q_f)

            # leader side
            view = FollowerView(self.q_f.copy(), self.q_gf, self.state.mode, self.state.secure)
            cmd_l = self.operator.step(t, dt, self.world, view)
            if cfg.latency_ticks and self.state.mode != EXECUTING:
                self.delay.append(cmd_l)
                cmd_l = self.delay.popleft() if len(self.delay) > cfg.latency_ticks else (q_l_prev, q_gl_prev)
            self.q_l, self.q_gl = np.asarray(cmd_l[0], dtype=float), float(cmd_l[1])
            qd_l = (self.q_l - q_l_prev) / dt
            qd_gl = (self.q_gl - q_gl_prev) / dt
            q_l_prev, q_gl_prev = self.q_l.copy(), self.q_gl

            # sensing (sample-and-hold)
            (rf, new_f), (ra, new_a) = self._sense(tick, T_wg)

            # reflexes
            tau_user = cfg.gains.kp * (self.q_gl - self.q_gf) + cfg.gains.kd * (qd_gl - self.qd_gf)
            inp = FsmInputs(t, self.q_gl, self.q_gf, rf, ra, self.q_f.copy(), T_wg, tau_user)
            prev_mode = self.state.mode
            self.state, cmd = fsm_tick(self.state, inp, self.params, self.robot)
            for ev in cmd.events:
                if ev == "grasp_eval":
                    psi_f, psi_a, rho_f, rho_a = self._angles(rf, ra, self.q_gf)
                    last_psi = (psi_f, psi_a)
                    outcome = "secure" if "secure" in cmd.events else (
                        "failure" if "grasp_failure" in cmd.events else ("observed" if not self.params.enabled else "regrasp"))
                    m.evaluations.append(Evaluation(t, psi_f, psi_a, rho_f, rho_a, self.operator.attempts, outcome))
                elif ev == "secure" and secure_t is None:
                    secure_t = t
                    slip_at_secure = self.world.slip_events
                elif ev == "ik_failure":
                    m.ik_failures += 1
                elif ev == "grasp_failure":
                    m.grasp_failures += 1
                elif ev == "regrasp_start":
                    m.regrasps += 1
                    m.trajectory_durations.append(self.state.trajectory.duration)

            # follower side
            if cmd.setpoint is not None:
                sp = cmd.setpoint
                if not self.chain.within_limits(sp[:6]) or not (geom.q_min - 1e-9 <= sp[6] <= geom.q_max + 1e-9):
                    m.limit_violations += 1
                # position-controlled: no velocity carries over when the move ends
                self.qd_f = np.zeros(6)
                self.qd_gf = 0.0
                self.q_f, self.q_gf = sp[:6].copy(), float(sp[6])
                squeeze = 0.0
                tau = 0.0
            else:
                tau_arm, _ = coupling_torques(self.q_l, qd_l, self.q_f, self.qd_f, cfg.gains)
                self.q_f, self.qd_f = self.arm_dyn.step(self.q_f, self.qd_f, tau_arm, dt, lower, upper)
                tau = cmd.gripper_torque if cmd.gripper_torque is not None else tau_user
                tau = float(np.clip(tau, -geom.max_torque, geom.max_torque))
                q_g, qd_g = self.grip_dyn.step(np.array([self.q_gf]), np.array([self.qd_gf]), np.array([tau]), dt,
                                               np.array([geom.q_min]), np.array([geom.q_max]))
                q_g, qd_g = float(q_g[0]), float(qd_g[0])
                T_wg = forward_kinematics(self.chain, self.q_f)
                pen = self.world.table_penetration(T_wg)
                if pen > 0:
                    # the table stops the arm through the held object
                    self._shift_arm(np.array([0.0, 0.0, pen]))
                    self.qd_f = np.zeros(6)
                    T_wg = forward_kinematics(self.chain, self.q_f)
                self.world.follow_gripper(T_wg)
                st = settle_grasp(T_wg, q_g, tau < 0, self.world.obj, geom)
                if st.q_g != q_g:
                    q_g, qd_g = st.q_g, max(qd_g, 0.0)
                self.world.shift_object(st.object_shift)
                if np.any(st.gripper_shift):
                    self._shift_arm(st.gripper_shift)
                    T_wg = forward_kinematics(self.chain, self.q_f)
                self.q_gf, self.qd_gf = q_g, qd_g
                squeeze = grip_force_from_torque(geom, tau) if (st.blocked and tau < 0) else 0.0

            if pending_ratio is not None:
                pt, ft = pending_ratio
                fn_cmd = max(grip_force_from_torque(geom, tau), 0.0)
                m.ratio_trace.append((pt, ft, fn_cmd, ft / fn_cmd if fn_cmd > 0 else math.inf))
                pending_ratio = None
            if self.state.mode == ANTISLIP and prev_mode == ANTISLIP and (new_f or new_a):
                pending_ratio = (t, max(rf.f_t, ra.f_t))

            self.world.step(dt, T_wg, self.q_gf, squeeze)

            if cfg.record_trace:
                o = self.world.obj.centre
                rows.append([
                    t, self.state.mode, *self.q_f, self.q_gf, *self.q_l, self.q_gl,
                    rf.theta, rf.phi, rf.f_n, rf.f_t, ra.theta, ra.phi, ra.f_n, ra.f_t,
                    last_psi[0], last_psi[1], squeeze, max(grip_force_from_torque(geom, tau_user), 0.0),
                    (max(rf.f_t, ra.f_t) / squeeze) if squeeze > 0 else 0.0, gamma_mu,
                    int(self.world.slipping), int(self.world.held), o[0], o[1], o[2],
                    self.world.obj.mass_at(self.world.t), self.state.attempt_count, self.operator.phase,
                ])

            # termination
            if self.operator.done:
                break
            if cfg.operator.task == "hold" and self.world.dropped and self.operator.phase == "hold":
                break
            if cfg.operator.task == "regrasp":
                if self.state.gave_up:
                    break
                if self.state.mode == ANTISLIP and self.operator.phase == "hold":
                    hold_since = t if hold_since is None else hold_since
                    if t - hold_since >= 0.05:
                        break
                else:
                    hold_since = None

        m.sim_time = t
        m.final_mode = self.state.mode
        m.slip_events = self.world.slip_events
        m.user_attempts = self.operator.attempts
        m.grasp_attempts = len(m.evaluations)
        if m.evaluations:
            first, last = m.evaluations[0], m.evaluations[-1]
            m.initial_psi, m.initial_rho = (first.psi_f, first.psi_a), (first.rho_f, first.rho_a)
            secure_evals = [e for e in m.evaluations if e.outcome == "secure"]
            fin = secure_evals[-1] if secure_evals else last
            m.final_psi, m.final_rho = (fin.psi_f, fin.psi_a), (fin.rho_f, fin.rho_a)
        if secure_t is not None:
            m.time_to_secure = secure_t - (self.operator.first_motion or 0.0)
            m.slip_after_secure = self.world.slip_events - slip_at_secure
        m.success = self._judge(m)
        if m.success and cfg.operator.task == "pick_place":
            m.trial_time = self.operator.released_at - (self.operator.first_motion or 0.0)
        header = f"# config_sha256={self.sha} seed={cfg.seed} reflexes={'on' if cfg.reflexes_enabled else 'off'}"
        return TrialResult(m, rows, header)

    def _judge(self, m: TrialMetrics) -> bool:
        task = self.cfg.operator.task
        gamma = self.params.gamma_psi
        if task == "regrasp":
            return m.final_mode == ANTISLIP and max(m.final_psi) <= gamma
        if task == "hold":
            ok = not self.world.dropped and self.world.slip_events == 0
            if self.params.enabled:
                ok = ok and m.time_to_secure is not None and max(m.final_psi) <= gamma
            return ok
        # pick and place
        op = self.operator
        if op.released_at is None or op.place_target is None:
            return False
        err = self.world.obj.centre[:2] - op.place_target[:2]
        placed = float(np.linalg.norm(err)) <= 0.02 and self.world.supported and not self.world.held
        if placed and self.params.enabled:
            placed = m.time_to_secure is not None and m.slip_after_secure == 0
        return placed


def run_scenario(cfg: ScenarioConfig) -> TrialResult:
    return Simulation(cfg).run()
