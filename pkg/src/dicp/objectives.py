"""Residuals, Jacobians and robust weights for the geometric and Doppler terms.

All Jacobians are with respect to the 6-vector state ``u = [u_theta, u_t]``,
rotation block first.  Functions accept a single point ``(3,)`` or a batch
``(N, 3)`` and return matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .se3 import check_rotation


@dataclass(frozen=True, eq=False)
class Calibration:
    """LiDAR mounting on the vehicle: ``x_V = R_VL x_L + t_VL``."""

    R_VL: np.ndarray = None
    t_VL: np.ndarray = None

    def __post_init__(self):
        R = np.eye(3) if self.R_VL is None else check_rotation(np.array(self.R_VL, dtype=float))
        t = np.zeros(3) if self.t_VL is None else np.array(self.t_VL, dtype=float).reshape(3)
        object.__setattr__(self, "R_VL", R)
        object.__setattr__(self, "t_VL", t)

    def to_vehicle(self, points_L) -> np.ndarray:
        return np.asarray(points_L, dtype=float) @ self.R_VL.T + self.t_VL


def _rows(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _like(x, out):
    return out[0] if np.ndim(x) == 1 else out


def direction_in_vehicle(position_L, calib: Calibration) -> np.ndarray:
    """Unit ray direction, LiDAR to point, expressed in the vehicle frame."""
    p = _rows(position_L)
    r = np.linalg.norm(p, axis=1)
    if np.any(r <= 0.0):
        raise ValueError("zero-range point has no ray direction")
    d = (p / r[:, None]) @ calib.R_VL.T
    return _like(position_L, d)


def expected_doppler(u, d_V, calib: Calibration, dt: float):
    """Radial velocity a static point shows when the inter-scan motion is ``u``.

    ``(1/dt) * d . (u_t - skew(t_VL) u_theta)``; the minus sign of the
    velocity approximations is folded in here.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float).reshape(6)
    lever = u[3:] - np.cross(calib.t_VL, u[:3])
    return np.asarray(d_V, dtype=float) @ lever / dt


def doppler_residual(doppler, position_L, u, calib: Calibration, dt: float):
    """Measured minus expected Doppler velocity. Needs no target cloud."""
    d = direction_in_vehicle(position_L, calib)
    return np.asarray(doppler, dtype=float) - expected_doppler(u, d, calib, dt)


def doppler_jacobian(d_V, calib: Calibration, dt: float) -> np.ndarray:
    """``(1/dt) [ (d x t_VL)^T, -d^T ]``; independent of the state."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    d = _rows(d_V)
    J = np.hstack([np.cross(d, calib.t_VL), -d]) / dt
    return _like(d_V, J)


def p2plane_residual(p_src, q_tgt, n, u):
    """Signed distance along ``n`` under the small-angle rotation ``I + skew(u_theta)``."""
    u = np.asarray(u, dtype=float).reshape(6)
    p = np.asarray(p_src, dtype=float)
    moved = p + np.cross(u[:3], p) + u[3:]
    return np.sum((moved - np.asarray(q_tgt, dtype=float)) * np.asarray(n, dtype=float), axis=-1)


def p2plane_jacobian(p_src, n) -> np.ndarray:
    p = _rows(p_src)
    nn = _rows(n)
    return _like(p_src, np.hstack([np.cross(p, nn), nn]))


def p2point_residual(p_src, q_tgt, u):
    u = np.asarray(u, dtype=float).reshape(6)
    p = np.asarray(p_src, dtype=float)
    return p + np.cross(u[:3], p) + u[3:] - np.asarray(q_tgt, dtype=float)


def p2point_jacobian(p_src) -> np.ndarray:
    """``[-skew(p) | I]``; shape ``(3, 6)`` or ``(N, 3, 6)``."""
    p = _rows(p_src)
    J = np.zeros((len(p), 3, 6))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    J[:, 0, 1], J[:, 0, 2] = z, -y
    J[:, 1, 0], J[:, 1, 2] = -z, x
    J[:, 2, 0], J[:, 2, 1] = y, -x
    J[:, :, 3:] = np.eye(3)
    return J[0] if np.ndim(p_src) == 1 else J


def tukey_weight(r, k: float):
    """Tukey biweight: ``(1 - (r/k)^2)^2`` inside ``|r| < k``, zero outside."""
    if not k > 0:
        raise ValueError("Tukey cutoff k must be positive")
    r = np.asarray(r, dtype=float)
    s = 1.0 - (r / k) ** 2
    w = np.where(np.abs(r) < k, s * s, 0.0)
    return float(w) if w.ndim == 0 else w
