"""Sensorized 1-DOF gripper: finger kinematics and fingertip sensor emulation.

Gripper base frame G: z along the approach direction, y along the closing
axis pointing from the fixed finger to the actuated finger, x = y cross z.
The fixed finger (frame F) sits at -y, the actuated finger (frame A) swings
on an arc about a pivot and sits at +y. Fingertip frames have their origin at
the dome centre and their z-axis (the dome pole) facing the other finger.
Both fingertip frames share the G x-axis.

The joint angle ``q_g`` grows as the gripper opens, so a negative torque
closes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .se3 import HALF_PI, DomainError, RigidTransform, contact_frame, dome_angles, rot_x

REFERENCE_FIT_A = 18.76  # rad/m
REFERENCE_FIT_B = -0.6129  # rad


class RangeError(ValueError):
    """A requested fingertip separation cannot be produced by the gripper."""


@dataclass(frozen=True)
class GripperGeometry:
    r_sensor: float = 0.010
    l_finger: float = 0.10
    link_radius: float = 0.1066  # pivot to actuated dome centre
    tip_depth: float = 0.17  # actuated dome centre along z_G at the neutral angle
    neutral_span: float = 0.0675  # dome-centre separation at the neutral angle
    fixed_recess: float = 0.005  # fixed dome sits this far behind the actuated one
    d_max: float = 0.115  # dome-centre separation when fully open (95 mm object)
    max_grip_force: float = 50.0

    def __post_init__(self):
        if self.r_sensor <= 0 or self.l_finger <= 0 or self.link_radius <= 0:
            raise ValueError("gripper dimensions must be positive")
        if self.d_max <= 2 * self.r_sensor:
            raise ValueError("d_max must exceed the closed separation 2*r_sensor")

    @cached_property
    def q_neutral(self) -> float:
        # the actuated finger is parallel to z_G where the reference fit puts this span
        return REFERENCE_FIT_A * self.neutral_span / 2 + REFERENCE_FIT_B

    @cached_property
    def q_min(self) -> float:
        """Closed: domes touching."""
        qn = self.q_neutral
        return brentq(lambda q: self._span(q) - 2 * self.r_sensor, qn - 0.6, qn)

    @cached_property
    def q_max(self) -> float:
        qn = self.q_neutral
        return brentq(lambda q: self._span(q) - self.d_max, qn, qn + HALF_PI)

    @cached_property
    def fit(self) -> tuple[float, float, float]:
        """Least-squares linear inverse ``q = a * d / 2 + b``; returns (a, b, R^2)."""
        q = np.linspace(self.q_min, self.q_max, 501)
        half = np.array([self._span(v) for v in q]) / 2
        A = np.column_stack([half, np.ones_like(half)])
        (a, b), *_ = np.linalg.lstsq(A, q, rcond=None)
        resid = q - A @ np.array([a, b])
        r2 = 1.0 - float(resid @ resid) / float(((q - q.mean()) ** 2).sum())
        return float(a), float(b), r2

    @property
    def max_torque(self) -> float:
        return self.max_grip_force * self.l_finger

    def _fixed_centre(self) -> np.ndarray:
        return np.array([0.0, -self.neutral_span / 2, self.tip_depth - self.fixed_recess])

    def _actuated_centre(self, q: float) -> np.ndarray:
        d = q - self.q_neutral
        L = self.link_radius
        return np.array([0.0, self.neutral_span / 2 + L * math.sin(d), self.tip_depth - L + L * math.cos(d)])

    def _span(self, q: float) -> float:
        return float(np.linalg.norm(self._actuated_centre(q) - self._fixed_centre()))

    def check_q(self, q: float, tol: float = 1e-9) -> None:
        if not (self.q_min - tol <= q <= self.q_max + tol):
            raise DomainError(f"gripper angle {q:.4f} outside [{self.q_min:.4f}, {self.q_max:.4f}]")


def fingertip_frames(geom: GripperGeometry, q_g: float) -> tuple[RigidTransform, RigidTransform]:
    """Return ``(T_GF, T_GA)`` at gripper angle ``q_g``."""
    geom.check_q(q_g)
    T_gf = RigidTransform(rot_x(-HALF_PI), geom._fixed_centre())
    T_ga = RigidTransform(rot_x(HALF_PI - (q_g - geom.q_neutral)), geom._actuated_centre(q_g))
    return T_gf, T_ga


def separation(geom: GripperGeometry, q_g: float) -> float:
    """Exact dome-centre separation at ``q_g``."""
    geom.check_q(q_g)
    return geom._span(q_g)


def linear_gripper_angle(half_span: float, a: float, b: float) -> float:
    return a * half_span + b


def inverse_separation(geom: GripperGeometry, d: float) -> float:
    """Gripper angle for dome-centre separation ``d`` via the linear fit.

    The result is clipped to the joint range; separations the gripper cannot
    produce raise ``RangeError``.
    """
    if not (2 * geom.r_sensor - 1e-12 <= d <= geom.d_max + 1e-12):
        raise RangeError(f"separation {d:.4f} m outside [{2 * geom.r_sensor}, {geom.d_max}]")
    a, b, _ = geom.fit
    return float(np.clip(linear_gripper_angle(d / 2, a, b), geom.q_min, geom.q_max))


def torque_for_force(geom: GripperGeometry, f_n_des: float) -> float:
    if f_n_des < 0:
        raise ValueError("desired normal force must be non-negative")
    return -f_n_des * geom.l_finger


def grip_force_from_torque(geom: GripperGeometry, tau: float) -> float:
    return -tau / geom.l_finger


def desired_contact_frames(geom: GripperGeometry, q_g: float) -> tuple[RigidTransform, RigidTransform]:
    """Ideal antipodal contact frames ``(T_F,Cf*, T_A,Ca*)`` at ``q_g``.

    Each lies on the dome point whose outward normal is parallel to the line
    joining the two dome centres.
    """
    T_gf, T_ga = fingertip_frames(geom, q_g)
    u = T_ga.translation - T_gf.translation
    u /= np.linalg.norm(u)
    th_f, ph_f = dome_angles(T_gf.rotation.T @ u)
    th_a, ph_a = dome_angles(T_ga.rotation.T @ -u)
    return contact_frame(th_f, ph_f, geom.r_sensor), contact_frame(th_a, ph_a, geom.r_sensor)


# -- fingertip sensors -------------------------------------------------------


@dataclass(frozen=True)
class NoiseParams:
    angle_sigma: float = 0.02  # rad
    force_sigma: float = 0.1  # N, before quantization
    force_resolution: float = 0.5  # N
    saturation: float = 25.0  # N, normal force
    sample_rate: float = 200.0  # Hz


@dataclass(frozen=True)
class ContactReading:
    theta: float = 0.0
    phi: float = 0.0
    f_n: float = 0.0
    f_x: float = 0.0
    f_y: float = 0.0
    in_contact: bool = False
    timestamp: float = 0.0

    @property
    def f_t(self) -> float:
        return math.hypot(self.f_x, self.f_y)

    def frame(self, r_sensor: float) -> RigidTransform:
        """Measured contact frame relative to the fingertip frame."""
        return contact_frame(self.theta, self.phi, r_sensor)


def _quantize(x: float, step: float) -> float:
    return math.floor(x / step + 0.5) * step


def sense_contact(
    T_w_tip: RigidTransform,
    contact_point,
    force_on_dome,
    geom: GripperGeometry,
    noise: NoiseParams,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> ContactReading:
    """Emulate one fingertip sensor sample.

    ``contact_point`` and ``force_on_dome`` are world-frame vectors (pass
    ``None`` for no contact). Normal force is reported positive when the object
    presses into the dome. The same number of random draws is consumed on every
    call so runs stay aligned across branches.
    """
    draws = rng.standard_normal(5)
    if contact_point is None:
        return ContactReading(timestamp=timestamp)
    R = T_w_tip.rotation
    n_tip = R.T @ (np.asarray(contact_point, dtype=float) - T_w_tip.translation)
    theta, phi = dome_angles(n_tip)
    if abs(theta) > HALF_PI or abs(phi) > HALF_PI:
        return ContactReading(timestamp=timestamp)
    R_c = contact_frame(theta, phi, geom.r_sensor).rotation
    f_c = R_c.T @ (R.T @ np.asarray(force_on_dome, dtype=float))

    res = noise.force_resolution
    f_n = _quantize(-f_c[2] + noise.force_sigma * draws[2], res)
    f_n = min(max(f_n, 0.0), noise.saturation)
    if f_n < res:
        return ContactReading(timestamp=timestamp)
    f_x = _quantize(f_c[0] + noise.force_sigma * draws[3], res)
    f_y = _quantize(f_c[1] + noise.force_sigma * draws[4], res)
    f_x = min(max(f_x, -noise.saturation), noise.saturation)
    f_y = min(max(f_y, -noise.saturation), noise.saturation)
    theta = float(np.clip(theta + noise.angle_sigma * draws[0], -HALF_PI, HALF_PI))
    phi = float(np.clip(phi + noise.angle_sigma * draws[1], -HALF_PI, HALF_PI))
    return ContactReading(theta, phi, f_n, f_x, f_y, True, timestamp)


@dataclass
class FingertipSensor:
    """Sample-and-hold wrapper: new readings only at sensor sample instants."""

    geom: GripperGeometry
    noise: NoiseParams
    control_rate: float = 500.0
    reading: ContactReading = field(default_factory=ContactReading)

    def is_sample_tick(self, tick: int) -> bool:
        if tick == 0:
            return True
        rate = self.noise.sample_rate
        return int(tick * rate // self.control_rate) != int((tick - 1) * rate // self.control_rate)

    def update(self, tick, T_w_tip, contact_point, force_on_dome, rng) -> tuple[ContactReading, bool]:
        if not self.is_sample_tick(tick):
            return self.reading, False
        self.reading = sense_contact(
            T_w_tip, contact_point, force_on_dome, self.geom, self.noise, rng, tick / self.control_rate
        )
        return self.reading, True
