"""Small SE(3)/SO(3) kernel.

Rotations are plain 3x3 numpy arrays. ``RigidTransform`` pairs one with a
translation; ``T_ab`` maps points expressed in frame b into frame a, so
``T_ac = T_ab @ T_bc``.

Matrix indices are zero-based everywhere: ``R[2, 2]`` is the bottom-right
rotation element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

HALF_PI = 0.5 * math.pi


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotvec(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (the SO(3) log)."""
    return Rotation.from_matrix(R).as_rotvec()


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(
        np.allclose(R @ R.T, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotation(cls, R: np.ndarray) -> RigidTransform:
        return cls(R, np.zeros(3))

    @classmethod
    def from_translation(cls, p) -> RigidTransform:
        return cls(np.eye(3), p)

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def inv(self) -> RigidTransform:
        return inverse(self)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def contact_frame(theta: float, phi: float, r_sensor: float) -> RigidTransform:
    """Contact frame on a hemispherical dome, relative to the dome centre.

    The frame is ``Ry(phi) Rx(theta) Trans(0, 0, r_sensor)``; its z-axis is the
    outward surface normal at the contact point.
    """
    if not (math.isfinite(theta) and math.isfinite(phi)):
        raise DomainError("contact angles must be finite")
    if abs(theta) > HALF_PI + 1e-12 or abs(phi) > HALF_PI + 1e-12:
        raise DomainError(f"contact angles ({theta}, {phi}) lie outside the dome")
    if r_sensor <= 0:
        raise DomainError("r_sensor must be positive")
    R = rot_y(phi) @ rot_x(theta)
    return RigidTransform(R, R @ np.array([0.0, 0.0, r_sensor]))


def dome_angles(normal) -> tuple[float, float]:
    """Invert the dome parameterization: outward unit normal -> (theta, phi).

    With ``n = Ry(phi) Rx(theta) e_z = (sin(phi)cos(theta), -sin(theta), cos(phi)cos(theta))``.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    theta = math.atan2(-n[1], math.hypot(n[0], n[2]))
    phi = math.atan2(n[0], n[2])
    return theta, phi


def polar_angle(T: RigidTransform) -> float:
    """Angle between the z-axes of the two frames related by ``T``."""
    R = T.rotation
    # atan2 keeps full precision near 0 and pi, where acos does not
    return math.atan2(math.hypot(R[0, 2], R[1, 2]), R[2, 2])


def azimuth_angle(normal) -> float:
    """In-plane direction of a contact normal, ``atan2(n_y, n_x)``.

    A normal along the z-axis has no defined azimuth; 0 is returned.
    """
    n = np.asarray(normal, dtype=float)
    if n[0] == 0.0 and n[1] == 0.0:
        return 0.0
    rho = math.atan2(n[1], n[0])
    # atan2 gives -pi for (-1, -0.0); keep the range (-pi, pi]
    return math.pi if rho == -math.pi else rho


def is_degenerate_azimuth(normal, tol: float = 1e-12) -> bool:
    n = np.asarray(normal, dtype=float)
    return abs(n[0]) <= tol and abs(n[1]) <= tol
