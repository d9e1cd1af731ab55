"""Odometry metrics: frame-to-frame relative pose error and path-length error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .se3 import RigidTransform, rotation_angle


@dataclass(frozen=True)
class PairError:
    index: int
    trans_err_m: float
    rot_err_deg: float
    est_step_m: float
    gt_step_m: float


@dataclass(frozen=True)
class EvalReport:
    rpe_trans_rmse_m: float
    rpe_rot_rmse_deg: float
    path_error_m: float
    mean_iterations: float = float("nan")
    per_pair: list[PairError] = field(default_factory=list)


def _check(est, gt):
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} estimated vs {len(gt)} ground truth")
    if len(est) < 2:
        raise ValueError("need at least two poses")


def relative_poses(poses) -> list[RigidTransform]:
    return [a.inverse() @ b for a, b in zip(poses[:-1], poses[1:])]


def compose_relative(rel, origin: RigidTransform | None = None) -> list[RigidTransform]:
    """Chain ``len(rel)`` relative motions into ``len(rel) + 1`` absolute poses."""
    out = [origin or RigidTransform.identity()]
    for r in rel:
        out.append(out[-1] @ r)
    return out


def pair_errors(est, gt) -> list[PairError]:
    _check(est, gt)
    rows = []
    for i, (e, g) in enumerate(zip(relative_poses(est), relative_poses(gt))):
        E = g.inverse() @ e
        rows.append(PairError(
            i,
            float(np.linalg.norm(E.translation)),
            math.degrees(rotation_angle(E.rotation)),
            float(np.linalg.norm(e.translation)),
            float(np.linalg.norm(g.translation)),
        ))
    return rows


def rpe(est, gt) -> tuple[float, float]:
    """RMSE over consecutive pairs of the error-transform translation norm (m) and angle (deg)."""
    rows = pair_errors(est, gt)
    t = np.array([r.trans_err_m for r in rows])
    a = np.array([r.rot_err_deg for r in rows])
    return float(np.sqrt(np.mean(t ** 2))), float(np.sqrt(np.mean(a ** 2)))


def path_length(poses) -> float:
    return float(sum(np.linalg.norm(r.translation) for r in relative_poses(poses)))


def path_error(est, gt) -> float:
    _check(est, gt)
    return abs(path_length(est) - path_length(gt))


def evaluate(est, gt, iterations=None) -> EvalReport:
    rows = pair_errors(est, gt)
    t, r = rpe(est, gt)
    mean_it = float(np.mean(iterations)) if iterations is not None and len(iterations) else float("nan")
    return EvalReport(t, r, path_error(est, gt), mean_it, rows)
