"""Rotations, rigid transforms and twist/wrench conventions.

Twists and wrenches are stacked angular-first throughout the package:
``xi = (wx, wy, wz, vx, vy, vz)``.  The pose difference used everywhere is
``diff(T1, T2) = log(T1^-1 T2)``, a body-frame twist expressed in T1's frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ANGULAR = slice(0, 3)
LINEAR = slice(3, 6)

_EPS = 1e-12


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    theta = np.linalg.norm(w)
    if theta < _EPS:
        return np.eye(3) + hat(w)
    K = hat(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal-branch rotation vector of R, angle in [0, pi].

    The angle-pi case is resolved through the largest diagonal entry of
    R + I, which stays well conditioned where the sin-based formula fails.
    """
    tr = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-8:
        return vee(R - R.T) * 0.5
    if theta > np.pi - 1e-6:
        # axis from the dominant column of R + I
        A = R + np.eye(3)
        k = int(np.argmax(np.diag(A)))
        axis = A[:, k] / np.linalg.norm(A[:, k])
        w = axis * theta
        # fix the sign so exp(w) reproduces R's off-diagonal skew part
        if np.linalg.norm(vee(R - R.T) * 0.5 - axis * np.sin(theta)) > \
           np.linalg.norm(vee(R - R.T) * 0.5 + axis * np.sin(theta)):
            w = -w
        return w
    return vee(R - R.T) * (0.5 * theta / np.sin(theta))


def _left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    c = (1.0 - (theta * np.sin(theta)) / (2.0 * (1.0 - np.cos(theta)))) / theta ** 2
    return np.eye(3) - 0.5 * W + c * (W @ W)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``rotation`` in SO(3), ``translation`` in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rpy(xyz, rpy=(0.0, 0.0, 0.0)) -> "Pose":
        """Pose from a translation and extrinsic x-y-z (roll, pitch, yaw) angles."""
        r, p, y = rpy
        R = so3_exp(np.array([0.0, 0.0, y])) @ \
            so3_exp(np.array([0.0, p, 0.0])) @ \
            so3_exp(np.array([r, 0.0, 0.0]))
        return Pose(R, np.asarray(xyz, dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        RT = self.rotation.T
        return Pose(RT, -RT @ self.translation)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return (np.abs(R.T @ R - np.eye(3)).max() < tol
                and abs(np.linalg.det(R) - 1.0) < tol)


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential of an angular-first twist."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[ANGULAR], xi[LINEAR]
    R = so3_exp(w)
    theta = np.linalg.norm(w)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * hat(w)
    else:
        W = hat(w)
        V = (np.eye(3) + (1.0 - np.cos(theta)) / theta ** 2 * W
             + (theta - np.sin(theta)) / theta ** 3 * (W @ W))
    return Pose(R, V @ v)


def se3_log(T: Pose) -> np.ndarray:
    """Angular-first twist ``xi`` with ``se3_exp(xi) == T``."""
    w = so3_log(T.rotation)
    v = _left_jacobian_inv(w) @ T.translation
    return np.concatenate([w, v])


def pose_diff(T1: Pose, T2: Pose) -> np.ndarray:
    """SE(3) difference ``log(T1^-1 T2)`` as a 6-vector (angular, linear)."""
    return se3_log(T1.inverse() @ T2)


def pose_error_norm(T1: Pose, T2: Pose) -> float:
    return float(np.linalg.norm(pose_diff(T1, T2)))


def interpolate_pose(Ta: Pose, Tb: Pose, s: float) -> Pose:
    """Geodesic interpolation from Ta (s=0) to Tb (s=1)."""
    return Ta @ se3_exp(s * pose_diff(Ta, Tb))
