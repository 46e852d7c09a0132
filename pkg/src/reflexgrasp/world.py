"""Quasi-static world: one circular-cross-section object and the two fingertip domes.

There are no rigid-body dynamics. The squeeze force comes from gripper torque
balance, gravity is shared equally between the two contacts, and a contact
slips when its tangential load leaves the friction cone. A free object that
slips drifts at a fixed penalty speed along its unbalanced tangential load.

Along the closing axis the grasp settles instantly: the actuated finger is
stopped by the object, and any slack is taken up by sliding the free object
(or, for an anchored object, by asking the arm to shift) until the fixed
finger also touches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from .gripper import GripperGeometry, fingertip_frames
from .se3 import RigidTransform

GRAVITY = 9.81
SLIP_DRIFT_SPEED = 0.05  # m/s
LOAD_TRANSFER_HEIGHT = 0.003  # m of lift before the fingertips carry the full weight (pad compliance)
_TOUCH_TOL = 1e-6  # m; absorbs the linearised arm shift


@dataclass(frozen=True)
class MassSchedule:
    """Linear ramp from ``m0`` to ``m1`` over ``duration`` seconds after ``start``."""

    m0: float = 0.2
    m1: float = 1.2
    duration: float = 20.0
    start: float = 0.0

    def __call__(self, t: float) -> float:
        if self.duration <= 0:
            return self.m1 if t >= self.start else self.m0
        s = min(max((t - self.start) / self.duration, 0.0), 1.0)
        return self.m0 + (self.m1 - self.m0) * s


def bottle_fill_schedule(t: float, schedule: MassSchedule = MassSchedule()) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    return schedule(t)


@dataclass
class WorldObject:
    pose: RigidTransform
    radius: float
    mass: Union[float, MassSchedule] = 0.3
    mu_true: float = 0.5
    anchored: bool = False
    shape: str = "sphere"  # or "cylinder", axis along the object z
    half_height: float = 0.1

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("object radius must be positive")
        if not 0 < self.mu_true <= 2:
            raise ValueError("mu_true must lie in (0, 2]")
        if self.shape not in ("sphere", "cylinder"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if isinstance(self.mass, (int, float)) and self.mass < 0:
            raise ValueError("mass must be non-negative")

    def mass_at(self, t: float) -> float:
        return self.mass(t) if callable(self.mass) else float(self.mass)

    @property
    def centre(self) -> np.ndarray:
        return self.pose.translation

    def _projector(self) -> np.ndarray:
        if self.shape == "sphere":
            return np.eye(3)
        a = self.pose.rotation[:, 2]
        return np.eye(3) - np.outer(a, a)

    def surface_offset(self, point) -> tuple[float, np.ndarray]:
        """(signed distance from ``point`` to the surface, outward unit normal)."""
        v = self._projector() @ (np.asarray(point, dtype=float) - self.centre)
        n = np.linalg.norm(v)
        if n < 1e-15:
            return -self.radius, np.array([0.0, 0.0, 1.0])
        if self.shape == "cylinder":
            along = float(self.pose.rotation[:, 2] @ (np.asarray(point) - self.centre))
            if abs(along) > self.half_height:
                return math.inf, v / n
        return n - self.radius, v / n


@dataclass(frozen=True)
class FingerContact:
    point: np.ndarray  # on the dome surface, world frame
    normal: np.ndarray  # object outward normal (points at the dome centre)
    depth: float  # penetration, >= 0
    normal_force: float = 0.0
    tangential: np.ndarray = field(default_factory=lambda: np.zeros(3))  # load demanded of friction
    slip: bool = False
    transmitted: np.ndarray = field(default_factory=lambda: np.zeros(3))  # friction after the cone cap

    @property
    def force_on_object(self) -> np.ndarray:
        return -self.normal * self.normal_force + self.transmitted


@dataclass(frozen=True)
class ContactState:
    fixed: Optional[FingerContact]
    actuated: Optional[FingerContact]
    squeeze: float = 0.0

    @property
    def both(self) -> bool:
        return self.fixed is not None and self.actuated is not None

    @property
    def slip(self) -> bool:
        return any(c is not None and c.slip for c in (self.fixed, self.actuated))


def _finger_contact(obj: WorldObject, centre, r_sensor) -> Optional[FingerContact]:
    dist, n = obj.surface_offset(centre)
    if dist > r_sensor + _TOUCH_TOL:
        return None
    return FingerContact(point=np.asarray(centre) - r_sensor * n, normal=n, depth=max(0.0, r_sensor - dist))


def resolve_contacts(
    gripper_pose: RigidTransform, q_g: float, obj: WorldObject, geom: GripperGeometry
) -> ContactState:
    """Dome/object contact geometry for both fingertips (no loads)."""
    T_gf, T_ga = fingertip_frames(geom, q_g)
    c_f = gripper_pose.apply(T_gf.translation)
    c_a = gripper_pose.apply(T_ga.translation)
    return ContactState(_finger_contact(obj, c_f, geom.r_sensor), _finger_contact(obj, c_a, geom.r_sensor))


def _loaded(c: FingerContact, push: np.ndarray, mu: float) -> FingerContact:
    N = float(-push @ c.normal)
    t = push + N * c.normal
    if N <= 0.0:
        return FingerContact(c.point, c.normal, c.depth, 0.0, t, True, np.zeros(3))
    tn = float(np.linalg.norm(t))
    slip = tn > mu * N
    return FingerContact(c.point, c.normal, c.depth, N, t, slip, t * (mu * N / tn) if slip else t)


def contact_loads(contacts: ContactState, squeeze: float, external: np.ndarray, mu: float) -> ContactState:
    """Distribute the squeeze and the external load over the contacts.

    The squeeze acts along the chord joining the two contact points; each
    contact must also supply half of ``-external`` (``external`` is the net
    non-contact force on the object, e.g. gravity). With a single contact the
    squeeze is purely normal and the external load is not carried.
    """
    f, a = contacts.fixed, contacts.actuated
    squeeze = max(0.0, squeeze)
    if f is not None and a is not None:
        chord = a.point - f.point
        n = np.linalg.norm(chord)
        u = chord / n if n > 1e-12 else -f.normal
        share = -0.5 * np.asarray(external, dtype=float)
        return ContactState(_loaded(f, squeeze * u + share, mu), _loaded(a, -squeeze * u + share, mu), squeeze)
    single = f if f is not None else a
    if single is None:
        return ContactState(None, None, 0.0)
    loaded = _loaded(single, -squeeze * single.normal, mu)
    return ContactState(loaded, None, squeeze) if f is not None else ContactState(None, loaded, squeeze)


# -- closing-axis settling ---------------------------------------------------


@dataclass(frozen=True)
class Settle:
    q_g: float
    blocked: bool  # actuated finger stopped by the object
    object_shift: np.ndarray  # world-frame translation to apply to a free object
    gripper_shift: np.ndarray  # world-frame translation the arm must make (anchored object)


def _slide_to_touch(obj: WorldObject, centre, y_axis, rho: float) -> Optional[float]:
    """Object shift s along ``y_axis`` that puts the surface exactly ``rho - R`` from ``centre``.

    Picks the root that leaves the object on the +y side of ``centre``.
    """
    P = obj._projector()
    w = P @ (obj.centre - np.asarray(centre))
    py = P @ y_axis
    A = float(py @ py)
    if A < 1e-12:
        return None
    B = float(w @ py)
    C = float(w @ w) - rho**2
    disc = B * B - A * C
    if disc < 0:
        return None
    return (-B + math.sqrt(disc)) / A


def _touch_angle(obj: WorldObject, gripper_pose: RigidTransform, geom: GripperGeometry, q_lo: float) -> float:
    """Largest closing progress: the q in [q_lo, q_max] where the actuated dome just touches."""
    # the dome centre swings on a circle of radius L about a fixed pivot in G;
    # project pivot and swing axes once so each gap evaluation is cheap
    L = geom.link_radius
    R = gripper_pose.rotation
    pivot = gripper_pose.apply(geom._actuated_centre(geom.q_neutral) - np.array([0.0, 0.0, L]))
    w, u, v = pivot - obj.centre, R[:, 1], R[:, 2]
    P = obj._projector()
    a, bu, bv = P @ w, L * (P @ u), L * (P @ v)
    ax = obj.pose.rotation[:, 2]
    aw, au, av = float(ax @ w), L * float(ax @ u), L * float(ax @ v)
    reach = obj.radius + geom.r_sensor

    def gap(q):
        sd, cd = math.sin(q - geom.q_neutral), math.cos(q - geom.q_neutral)
        if obj.shape == "cylinder" and abs(aw + sd * au + cd * av) > obj.half_height:
            return math.inf
        x = a + sd * bu + cd * bv
        return math.sqrt(float(x @ x)) - reach

    if gap(geom.q_max) <= 0:
        return geom.q_max
    return brentq(gap, q_lo, geom.q_max, xtol=1e-12)


def settle_grasp(
    gripper_pose: RigidTransform, q_g: float, closing: bool, obj: WorldObject, geom: GripperGeometry
) -> Settle:
    """Resolve finger/object interpenetration along the closing axis.

    ``q_g`` is the unconstrained gripper angle after integrating its dynamics;
    ``closing`` says whether the net gripper torque is closing. Shifts are
    returned rather than applied.
    """
    zero = np.zeros(3)
    y_axis = gripper_pose.rotation[:, 1]
    rho = obj.radius + geom.r_sensor
    shift = 0.0
    work = obj

    T_gf, _ = fingertip_frames(geom, q_g)
    c_f = gripper_pose.apply(T_gf.translation)

    def moved(s):
        return replace(obj, pose=RigidTransform(obj.pose.rotation, obj.centre + s * y_axis))

    dist_f = obj.surface_offset(c_f)[0]
    _, T_ga = fingertip_frames(geom, q_g)
    dist_a = obj.surface_offset(gripper_pose.apply(T_ga.translation))[0]
    a_pen = dist_a < geom.r_sensor - _TOUCH_TOL

    # fixed finger pushed into the object: push back out
    if dist_f < geom.r_sensor - _TOUCH_TOL:
        s = _slide_to_touch(obj, c_f, y_axis, rho)
        if s is not None:
            shift, work = s, moved(s)
    # actuated finger squeezing with the fixed finger not yet touching: take up slack
    elif closing and a_pen and dist_f > geom.r_sensor + _TOUCH_TOL:
        s = _slide_to_touch(obj, c_f, y_axis, rho)
        if s is not None and s < 0:
            shift, work = s, moved(s)

    _, T_ga = fingertip_frames(geom, q_g)
    dist_a = work.surface_offset(gripper_pose.apply(T_ga.translation))[0]
    blocked = dist_a <= geom.r_sensor + _TOUCH_TOL
    q_new = q_g
    if dist_a < geom.r_sensor - _TOUCH_TOL:
        q_new = _touch_angle(work, gripper_pose, geom, q_g)

    if shift == 0.0:
        return Settle(q_new, blocked, zero, zero)
    if obj.anchored:
        return Settle(q_new, blocked, zero, -shift * y_axis)
    return Settle(q_new, blocked, shift * y_axis, zero)


# -- world state -------------------------------------------------------------


@dataclass
class World:
    """Mutable world owned by one scenario run."""

    obj: WorldObject
    geom: GripperGeometry
    table_height: Optional[float] = None
    t: float = 0.0
    held: bool = False
    rel_pose: Optional[RigidTransform] = None  # object pose in G while held
    slipping: bool = False
    slip_events: int = 0
    dropped: bool = False
    contacts: ContactState = field(default_factory=lambda: ContactState(None, None))

    @property
    def rest_height(self) -> Optional[float]:
        if self.table_height is None:
            return None
        extent = self.obj.radius if self.obj.shape == "sphere" else self.obj.half_height
        return self.table_height + extent

    @property
    def supported(self) -> bool:
        if self.obj.anchored:
            return True
        rest = self.rest_height
        return rest is not None and self.obj.centre[2] <= rest + 1e-3

    def external_load(self) -> np.ndarray:
        """Weight not carried by the table; it hands over linearly over the first few mm of lift."""
        if self.obj.anchored:
            return np.zeros(3)
        share = 1.0
        rest = self.rest_height
        if rest is not None:
            share = float(np.clip((self.obj.centre[2] - rest) / LOAD_TRANSFER_HEIGHT, 0.0, 1.0))
        return np.array([0.0, 0.0, -share * self.obj.mass_at(self.t) * GRAVITY])

    def shift_object(self, delta) -> None:
        if self.obj.anchored:
            return
        self.obj.pose = RigidTransform(self.obj.pose.rotation, self.obj.centre + np.asarray(delta))
        self._clamp_to_table()

    def _clamp_to_table(self) -> None:
        rest = self.rest_height
        if rest is not None and self.obj.centre[2] < rest:
            p = self.obj.centre.copy()
            p[2] = rest
            self.obj.pose = RigidTransform(self.obj.pose.rotation, p)

    def evaluate(self, gripper_pose: RigidTransform, q_g: float, squeeze: float) -> ContactState:
        geo = resolve_contacts(gripper_pose, q_g, self.obj, self.geom)
        self.contacts = contact_loads(geo, squeeze, self.external_load(), self.obj.mu_true)
        return self.contacts

    def table_penetration(self, gripper_pose: RigidTransform) -> float:
        """How far below its resting height a held object would be carried by ``gripper_pose``."""
        rest = self.rest_height
        if not self.held or self.obj.anchored or self.rel_pose is None or rest is None:
            return 0.0
        z = (gripper_pose @ self.rel_pose).translation[2]
        return max(rest - z, 0.0)

    def follow_gripper(self, gripper_pose: RigidTransform) -> None:
        """Carry a held free object rigidly with the gripper."""
        if self.held and not self.obj.anchored and self.rel_pose is not None:
            self.obj.pose = gripper_pose @ self.rel_pose
            self._clamp_to_table()

    def step(self, dt: float, gripper_pose: RigidTransform, q_g: float, squeeze: float) -> ContactState:
        """Advance one tick: loads, slip bookkeeping, object motion."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.follow_gripper(gripper_pose)
        cs = self.evaluate(gripper_pose, q_g, squeeze)
        slipping = cs.both and cs.slip and (cs.squeeze > 0 or not self.supported)
        if slipping and not self.slipping:
            self.slip_events += 1
        self.slipping = slipping

        if self.obj.anchored:
            self.held = cs.both and cs.squeeze > 0
        elif cs.both and cs.squeeze > 0 and not slipping:
            self.held = True
            self.rel_pose = gripper_pose.inv() @ self.obj.pose
        elif slipping:
            demand = cs.fixed.tangential + cs.actuated.tangential
            n = np.linalg.norm(demand)
            if n > 1e-12:
                direction = -demand / n
                if self.supported and direction[2] < 0:
                    direction[2] = 0.0
                self.shift_object(SLIP_DRIFT_SPEED * dt * direction)
            self.held = True
            self.rel_pose = gripper_pose.inv() @ self.obj.pose
        else:
            if self.held and not self.supported:
                self.dropped = True
            self.held = False
            self.rel_pose = None
            if not self.supported and self.rest_height is not None:
                # falls straight down onto the table
                p = self.obj.centre.copy()
                p[2] = self.rest_height
                self.obj.pose = RigidTransform(self.obj.pose.rotation, p)
        self.t += dt
        return cs
