"""Rigid-body transform algebra.

The solver state is a 6-vector ``u = [u_theta, u_t]`` (rotation vector first,
then translation).  ``pseudo_exp`` maps it to a rigid transform by taking the
exact SO(3) exponential of the rotation part and copying the translation part
verbatim; ``pseudo_log`` is its inverse.

Rotations are 3x3 matrices throughout.  Quaternions only show up in the
trajectory file reader/writer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this angle the Rodrigues coefficients are replaced by their Taylor series.
SMALL_ANGLE = 1e-8
# so3_log rejects inputs further than this from SO(3).
ORTHONORMAL_TOL = 1e-6


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S) -> np.ndarray:
    """Inverse of :func:`skew` (uses the antisymmetric part of ``S``)."""
    S = np.asarray(S, dtype=float)
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def so3_exp(u_theta) -> np.ndarray:
    w = np.asarray(u_theta, dtype=float).reshape(3)
    theta2 = float(w @ w)
    theta = math.sqrt(theta2)
    W = skew(w)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * W + b * (W @ W)


def check_rotation(R, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or np.linalg.det(R) < 0.0:
        raise ValueError("matrix is not a proper rotation (orthonormality check failed)")
    return R


def _canonical_sign(axis: np.ndarray) -> np.ndarray:
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def so3_log(R) -> np.ndarray:
    """Principal rotation vector of ``R`` (norm in ``[0, pi]``)."""
    R = check_rotation(R)
    c = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    v = vee(R)  # = sin(theta) * axis
    s = float(np.linalg.norm(v))
    theta = math.atan2(s, c)
    if theta < SMALL_ANGLE:
        return v * (1.0 + theta * theta / 6.0)
    if c > -0.9:
        return v * (theta / s)
    # Close to pi: sin(theta) is tiny, so read the axis off the symmetric part
    # instead, R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T.
    A = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    i = int(np.argmax(np.diag(A)))
    axis = A[:, i] / math.sqrt(A[i, i])
    axis /= np.linalg.norm(axis)
    d = float(axis @ v)
    if abs(d) > 1e-14:
        axis = axis if d > 0 else -axis
    else:
        axis = _canonical_sign(axis)
    return theta * axis


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = check_rotation(np.array(self.rotation, dtype=float).reshape(3, 3))
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        u = pseudo_log(self)
        return f"RigidTransform(u_theta={u[:3].tolist()}, u_t={u[3:].tolist()})"


def pseudo_exp(u) -> RigidTransform:
    u = np.asarray(u, dtype=float).reshape(6)
    return RigidTransform(so3_exp(u[:3]), u[3:].copy())


def pseudo_log(T: RigidTransform) -> np.ndarray:
    return np.concatenate([so3_log(T.rotation), T.translation])


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    return A @ B


def inverse(T: RigidTransform) -> RigidTransform:
    return T.inverse()


def transform_point(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def rotation_angle(R) -> float:
    """Rotation angle in radians, robust for angles near zero."""
    R = np.asarray(R, dtype=float)
    c = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    return math.atan2(float(np.linalg.norm(vee(R))), c)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_to_rotation(q) -> np.ndarray:
    """Unit quaternion in ``(x, y, z, w)`` order to rotation matrix."""
    x, y, z, w = np.asarray(q, dtype=float).reshape(4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion ``(x, y, z, w)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = [0.0, 0.0, 0.0, (R[k, j] - R[j, k]) / s]
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q
