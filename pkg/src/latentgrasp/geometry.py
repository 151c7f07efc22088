"""SE(3)/SO(3) algebra for pose selection, metrics, and trajectory synthesis.

Conventions:
    * A pose is (R, t): 3x3 orthonormal rotation, 3-vector translation in meters.
    * A twist is a 6-vector ordered (translational 3 | rotational 3) so that the
      diagonal weight matrix diag(w_t, w_t, w_t, w_r, w_r, w_r) lines up with it.
    * Rotation logs are restricted to the principal branch; angles within
      PI_TOLERANCE of pi raise NearPiRotation instead of picking a branch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NearPiRotation, NotARotation, ShapeMismatch

ROTATION_ATOL = 1e-9
SMALL_ANGLE = 1e-6
PI_TOLERANCE = 1e-6

POSE_BYTES = 96  # 12 little-endian float64: row-major rotation then translation


def _check_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise NotARotation(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-8):
        raise NotARotation("R @ R.T deviates from identity")
    if abs(np.linalg.det(R) - 1.0) > 1e-8:
        raise NotARotation("det(R) != +1")
    return R


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise NotARotation("translation has non-finite entries")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_bytes(self) -> bytes:
        vals = np.concatenate([self.rotation.reshape(9), self.translation])
        return struct.pack("<12d", *vals)

    @staticmethod
    def from_bytes(buf: bytes) -> "Pose":
        vals = struct.unpack("<12d", buf)
        return Pose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:]))


@dataclass(frozen=True)
class DistanceWeights:
    """Translation/rotation weights of the SE(3) pseudo-metric."""

    w_t: float = 100.0
    w_r: float = 20.0

    def __post_init__(self):
        if self.w_t < 0 or self.w_r < 0:
            raise DegenerateInput("distance weights must be nonnegative")
        if self.w_t == 0 and self.w_r == 0:
            raise DegenerateInput("distance weights cannot both be zero")

    def diagonal(self) -> np.ndarray:
        return np.array([self.w_t] * 3 + [self.w_r] * 3)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Gram-Schmidt two 3-vectors into a rotation; third column by cross product."""
    r = np.asarray(r, dtype=float).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-6:
        raise DegenerateInput("first 6D column is near zero")
    b1 = a1 / n1
    a2p = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 < 1e-6:
        raise DegenerateInput("6D columns are parallel or second is near zero")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened."""
    R = _check_rotation(R)
    return np.concatenate([R[:, 0], R[:, 1]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; Taylor fallback below SMALL_ANGLE."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    A = np.sin(theta) / theta
    B = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + A * K + B * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal-branch rotation vector; rejects angles within PI_TOLERANCE of pi."""
    R = _check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if np.pi - theta < PI_TOLERANCE:
        raise NearPiRotation(f"rotation angle {theta:.9f} within tolerance of pi")
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return w
    return w * theta / np.sin(theta)


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    A = (1.0 - np.cos(theta)) / (theta * theta)
    B = (theta - np.sin(theta)) / (theta ** 3)
    return np.eye(3) + A * K + B * (K @ K)


def _left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    half = 0.5 * theta
    cot = half / np.tan(half)
    coeff = (1.0 - cot) / (theta * theta)
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential map of a (translation | rotation) twist."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    v, omega = xi[:3], xi[3:]
    R = so3_exp(omega)
    t = _left_jacobian(omega) @ v
    return Pose(R, t)


def se3_log(T: Pose) -> np.ndarray:
    """Principal-branch logarithm, twist ordered (translation | rotation)."""
    omega = so3_log(T.rotation)
    v = _left_jacobian_inv(omega) @ T.translation
    return np.concatenate([v, omega])


def weighted_distance(P: Pose, G: Pose, weights: DistanceWeights) -> float:
    """sqrt(xi^T W xi) with xi = log(P^-1 G); the SE(3) geodesic pseudo-metric."""
    xi = se3_log(P.inverse().compose(G))
    return float(np.sqrt(np.dot(xi * weights.diagonal(), xi)))


def rotation_angle(R0: np.ndarray, R1: np.ndarray) -> float:
    """Geodesic angle between two rotations, in radians."""
    cos_theta = np.clip((np.trace(R0.T @ R1) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos_theta))


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    q0 = q0 / np.linalg.norm(q0)
    q1 = q1 / np.linalg.norm(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot > 1.0 - 1e-12:
        out = q0 + t * (q1 - q0)
        return out / np.linalg.norm(out)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * q0 + np.sin(t * theta) * q1) / s


def interpolate_pose(P0: Pose, P1: Pose, t: float) -> Pose:
    """SLERP on rotation, linear interpolation on translation, t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ShapeMismatch(f"interpolation parameter {t} outside [0, 1]")
    q = quat_slerp(matrix_to_quat(P0.rotation), matrix_to_quat(P1.rotation), t)
    trans = (1.0 - t) * P0.translation + t * P1.translation
    return Pose(quat_to_matrix(q), trans)


# 10-dim action layout: translation (3) | rot6d (6) | gripper (1)
ACTION_DIM = 10
ROT6D_SLICE = slice(3, 9)
GRIPPER_INDEX = 9


def action_from_pose(pose: Pose, gripper: float) -> np.ndarray:
    a = np.empty(ACTION_DIM)
    a[:3] = pose.translation
    a[ROT6D_SLICE] = matrix_to_rot6d(pose.rotation)
    a[GRIPPER_INDEX] = gripper
    return a


def pose_from_action(action: np.ndarray) -> Pose:
    a = np.asarray(action, dtype=float).reshape(ACTION_DIM)
    return Pose(rot6d_to_matrix(a[ROT6D_SLICE]), a[:3])
