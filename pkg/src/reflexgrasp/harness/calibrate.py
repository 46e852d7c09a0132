"""Monte-Carlo calibration of the operator's aim error.

A static model of the first grasp: the object sits at ``grasp_point + e`` in
G, the gripper slides along its closing axis until the fixed dome touches,
then the actuated finger closes onto it. The sensed polar angles are pooled
over both fingers.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from ..gripper import GripperGeometry, NoiseParams, fingertip_frames, sense_contact
from ..reflex import ReflexParams, antipodal_check
from ..se3 import RigidTransform
from ..teleop import grasp_point, sample_aim_offset
from ..world import WorldObject, _slide_to_touch


def first_grasp_psi(
    offset, radius: float, geom: GripperGeometry, noise: NoiseParams, rng: np.random.Generator,
    params: ReflexParams = ReflexParams(),
) -> tuple[float, float]:
    """Sensed (psi_f, psi_a) for a closing grasp with the object offset by ``offset`` in G."""
    centre = grasp_point(geom, radius) + np.asarray(offset, dtype=float)
    obj = WorldObject(RigidTransform(np.eye(3), centre), radius, anchored=True)
    T_gf, _ = fingertip_frames(geom, geom.q_max)
    s = _slide_to_touch(obj, T_gf.translation, np.array([0.0, 1.0, 0.0]), radius + geom.r_sensor)
    if s is None:
        raise ValueError("offset too large for the fixed finger to reach the object")
    obj = WorldObject(RigidTransform(np.eye(3), centre + [0.0, s, 0.0]), radius, anchored=True)

    def gap(q):
        return obj.surface_offset(fingertip_frames(geom, q)[1].translation)[0] - geom.r_sensor

    # close from fully open until the actuated dome first meets the surface
    qs = np.linspace(geom.q_max, geom.q_min, 40)
    gaps = [gap(q) for q in qs]
    k = next(i for i, g in enumerate(gaps) if g <= 0)
    q = brentq(gap, qs[k], qs[k - 1], xtol=1e-12) if k > 0 else geom.q_max
    T_gf, T_ga = fingertip_frames(geom, q)
    frames = []
    for T_tip in (T_gf, T_ga):
        n = obj.surface_offset(T_tip.translation)[1]
        # a firm 2 N press keeps the reading above the force floor
        r = sense_contact(T_tip, T_tip.translation - geom.r_sensor * n, 2.0 * n, geom, noise, rng)
        frames.append(r.frame(geom.r_sensor))
    psi_f, psi_a, _ = antipodal_check(frames[0], frames[1], q, geom, params)
    return psi_f, psi_a


def mean_initial_psi(
    sigma: float, radius: float, geom: GripperGeometry, noise: NoiseParams, n: int = 400, seed: int = 0,
) -> float:
    rng = np.random.default_rng(seed)
    limit = 0.8 * (radius + geom.r_sensor)
    vals = []
    for _ in range(n):
        e = sample_aim_offset(rng, sigma, limit)
        vals.extend(first_grasp_psi(e, radius, geom, noise, rng))
    return float(np.mean(vals))


def calibrate_aim_sigma(
    target: float, radius: float, geom: GripperGeometry, noise: NoiseParams, n: int = 400, seed: int = 0,
    tol: float = 1e-4,
) -> float:
    """Aim-error sigma (m) whose first-grasp mean polar angle equals ``target``."""
    lo, hi = 0.0, 0.8 * (radius + geom.r_sensor)
    f_lo = mean_initial_psi(lo, radius, geom, noise, n, seed) - target
    f_hi = mean_initial_psi(hi, radius, geom, noise, n, seed) - target
    if f_lo > 0 or f_hi < 0:
        raise ValueError(f"target mean {target} not reachable with this aim model")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_initial_psi(mid, radius, geom, noise, n, seed) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
