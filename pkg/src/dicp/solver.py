"""Doppler ICP: joint point-to-plane / Doppler-velocity registration by IRLS.

Each iteration transforms the source by the current estimate, pairs points
with their nearest target neighbours, optionally drops pairs whose Doppler
disagrees with the motion estimate, builds the weighted normal equations of

    E(u) = lambda_v * sum w_v r_v^2 + (1 - lambda_v) * sum w_p r_p^2

and applies the solved increment on the left of the estimate.

Point positions are stored in the LiDAR frame; registration runs in the
vehicle frame, so both clouds are moved through the extrinsic calibration
first.  The resulting transform is ``T_TS`` between vehicle frames, source
being the earlier scan.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import _kernels
from .cloud import CorrespondenceSet, DopplerPointCloud, SpatialIndex, build_index, estimate_normals, match
from .errors import DegenerateSystemError, MissingDopplerError, RegistrationError
from .objectives import Calibration, direction_in_vehicle, doppler_jacobian, tukey_weight
from .se3 import RigidTransform, pseudo_exp, pseudo_log

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    P2P = "P2P"
    P2P_DR = "P2P+DR"
    P2P_DOR = "P2P+DOR"
    DICP = "DICP"
    DOPPLER_ONLY = "DopplerOnly"

    @property
    def geometric(self) -> bool:
        return self is not Mode.DOPPLER_ONLY

    @property
    def doppler_residual(self) -> bool:
        return self in (Mode.P2P_DR, Mode.DICP, Mode.DOPPLER_ONLY)

    @property
    def rejection(self) -> bool:
        return self in (Mode.P2P_DOR, Mode.DICP, Mode.DOPPLER_ONLY)

    @property
    def needs_doppler(self) -> bool:
        return self.doppler_residual or self.rejection


class SeedMode(str, enum.Enum):
    NONE = "none"
    CONSTANT_VELOCITY = "constant_velocity"


class GeometricMetric(str, enum.Enum):
    POINT_TO_PLANE = "point_to_plane"
    POINT_TO_POINT = "point_to_point"


@dataclass(frozen=True)
class SolverParams:
    lambda_v: float = 0.01
    max_dist_m: float = 1.0
    max_vel_err_mps: float = 2.0
    geometric_k: float = 0.5
    doppler_k: float = 0.2
    robust_kernel_start_iter: int = 2
    rejection_start_iter: int = 2
    max_iters: int = 100
    conv_trans_tol_m: float = 1e-6
    conv_rot_tol_rad: float = 1e-6
    mode: Mode = Mode.DICP
    metric: GeometricMetric = GeometricMetric.POINT_TO_PLANE

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "metric", GeometricMetric(self.metric))
        if not 0.0 <= self.lambda_v <= 1.0:
            raise ValueError("lambda_v must lie in [0, 1]")
        for name in ("max_dist_m", "max_vel_err_mps", "geometric_k", "doppler_k",
                     "conv_trans_tol_m", "conv_rot_tol_rad"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.robust_kernel_start_iter < 0 or self.rejection_start_iter < 0:
            raise ValueError("start iterations must be non-negative")

    @property
    def effective_lambda(self) -> float:
        if not self.mode.doppler_residual:
            return 0.0
        if not self.mode.geometric:
            return 1.0
        return self.lambda_v


@dataclass(frozen=True)
class IterationStats:
    geom_rmse: float
    doppler_rmse: float
    inlier_count: int
    rejected_dynamic_count: int
    damping: float = 0.0


@dataclass(eq=False)
class RegistrationResult:
    transform: RigidTransform
    state: np.ndarray
    iterations: int
    converged: bool
    per_iteration: list[IterationStats] = field(default_factory=list)
    geom_rmse: float = float("nan")
    doppler_rmse: float = float("nan")
    inlier_count: int = 0
    stop_reason: str = "max_iters"

    @property
    def damped(self) -> bool:
        return any(s.damping > 0 for s in self.per_iteration)


@dataclass(eq=False)
class NormalEquations:
    H: np.ndarray
    g: np.ndarray
    geom_rmse: float = float("nan")
    doppler_rmse: float = float("nan")


class SolveStep(NamedTuple):
    delta: np.ndarray
    damping: float


@dataclass(eq=False)
class RegistrationProblem:
    """Both clouds in the vehicle frame plus per-point quantities that never change."""

    source: np.ndarray
    directions: np.ndarray
    doppler: np.ndarray | None
    target: np.ndarray
    normals: np.ndarray | None
    doppler_J: np.ndarray
    dt: float
    calib: Calibration
    index: SpatialIndex | None


def prepare(source: DopplerPointCloud, target: DopplerPointCloud, params: SolverParams,
            calib: Calibration | None = None) -> RegistrationProblem:
    calib = calib or Calibration()
    mode = params.mode
    if len(source) == 0:
        raise RegistrationError("source cloud is empty")
    if mode.needs_doppler and not source.has_doppler:
        raise MissingDopplerError(f"mode {mode.value} needs a Doppler channel on the source cloud")
    if mode.geometric:
        if len(target) == 0:
            raise RegistrationError("target cloud is empty")
        if params.metric is GeometricMetric.POINT_TO_PLANE and target.normals is None:
            raise ValueError("point-to-plane registration needs target normals (see estimate_normals)")
    dt = source.period_s
    dirs = direction_in_vehicle(source.positions, calib)
    normals = None if target.normals is None else target.normals @ calib.R_VL.T
    return RegistrationProblem(
        source=calib.to_vehicle(source.positions),
        directions=dirs,
        doppler=source.doppler,
        target=calib.to_vehicle(target.positions),
        normals=normals,
        doppler_J=doppler_jacobian(dirs, calib, dt),
        dt=dt,
        calib=calib,
        index=build_index(calib.to_vehicle(target.positions)) if mode.geometric else None,
    )


def doppler_residuals(problem: RegistrationProblem, state, idx=None) -> np.ndarray:
    """``r_v`` of the selected source points, linear in the total state."""
    u = np.asarray(state, dtype=float).reshape(6)
    lever = u[3:] - np.cross(problem.calib.t_VL, u[:3])
    d = problem.directions if idx is None else problem.directions[idx]
    v = problem.doppler if idx is None else problem.doppler[idx]
    return v - d @ lever / problem.dt


def correspondences(problem: RegistrationProblem, T: RigidTransform, params: SolverParams) -> CorrespondenceSet:
    if problem.index is None:
        n = len(problem.source)
        return CorrespondenceSet(np.arange(n), np.full(n, -1, dtype=np.int64), np.zeros(n))
    return match(T.apply(problem.source), problem.index, params.max_dist_m)


def reject_dynamic(corrs: CorrespondenceSet, problem: RegistrationProblem, state, params: SolverParams,
                   iteration: int) -> tuple[CorrespondenceSet, int]:
    """Keep pairs with ``|r_v| < max_vel_err_mps``; returns ``(kept, n_rejected)``."""
    if not params.mode.rejection or iteration < params.rejection_start_iter or len(corrs) == 0:
        return corrs, 0
    r = doppler_residuals(problem, state, corrs.source)
    keep = np.abs(r) < params.max_vel_err_mps
    return corrs.subset(keep), int(len(keep) - keep.sum())


def _geometric_rows(corrs, problem, T, params):
    p = T.apply(problem.source[corrs.source])
    q = problem.target[corrs.target]
    if params.metric is GeometricMetric.POINT_TO_POINT:
        e = p - q
        J = np.zeros((len(p), 3, 6))
        J[:, 0, 1], J[:, 0, 2] = p[:, 2], -p[:, 1]
        J[:, 1, 0], J[:, 1, 2] = -p[:, 2], p[:, 0]
        J[:, 2, 0], J[:, 2, 1] = p[:, 1], -p[:, 0]
        J[:, :, 3:] = np.eye(3)
        norm = np.linalg.norm(e, axis=1)
        return e.reshape(-1), J.reshape(-1, 6), np.repeat(norm, 3), np.ones(3 * len(p), dtype=bool)
    n = problem.normals[corrs.target]
    valid = np.all(np.isfinite(n), axis=1)
    n = np.where(valid[:, None], n, 0.0)
    r = np.einsum("ni,ni->n", p - q, n)
    J = np.hstack([np.cross(p, n), n])
    return r, J, r, valid


def accumulate(corrs: CorrespondenceSet, problem: RegistrationProblem, T: RigidTransform,
               params: SolverParams, iteration: int) -> NormalEquations:
    """Weighted normal equations about the current estimate ``T``.

    Geometric rows are linearised at the transformed source points; Doppler
    rows are evaluated at the total state ``pseudo_log(T)``.  Robust weights
    switch on at ``robust_kernel_start_iter``.
    """
    if len(corrs) == 0:
        raise RegistrationError("no correspondences to accumulate")
    lam = params.effective_lambda
    robust = iteration >= params.robust_kernel_start_iter
    zeros6 = np.zeros((0, 6))
    geom_rmse = doppler_rmse = float("nan")

    if params.mode.geometric and lam < 1.0:
        rp, Jp, rk, valid = _geometric_rows(corrs, problem, T, params)
        wp = tukey_weight(rk, params.geometric_k) if robust else np.ones(len(rp))
        wp = np.where(valid, wp, 0.0)
        if valid.any():
            geom_rmse = float(np.sqrt(np.mean(rp[valid] ** 2)))
    else:
        rp, Jp, wp = np.zeros(0), zeros6, np.zeros(0)

    if params.mode.doppler_residual and lam > 0.0:
        rv = doppler_residuals(problem, pseudo_log(T), corrs.source)
        Jv = problem.doppler_J[corrs.source]
        wv = tukey_weight(rv, params.doppler_k) if robust else np.ones(len(rv))
        doppler_rmse = float(np.sqrt(np.mean(rv ** 2)))
    else:
        rv, Jv, wv = np.zeros(0), zeros6, np.zeros(0)

    # Pad so both term sets line up row by row in correspondence order.
    n = max(len(rp), len(rv))
    Jp, rp, wp = _pad(Jp, rp, wp, n)
    Jv, rv, wv = _pad(Jv, rv, wv, n)
    if not np.any((1.0 - lam) * wp + lam * wv > 0):
        raise DegenerateSystemError("every residual has zero weight")
    H, g = _kernels.accumulate_rows(Jp, rp, wp, Jv, rv, wv, lam)
    return NormalEquations(H, g, geom_rmse, doppler_rmse)


def _pad(J, r, w, n):
    if len(r) == n:
        return J, r, w
    k = n - len(r)
    return np.vstack([J, np.zeros((k, 6))]), np.concatenate([r, np.zeros(k)]), np.concatenate([w, np.zeros(k)])


def solve_normal_equations(ne: NormalEquations, retries: int = 3) -> SolveStep:
    """Cholesky solve of ``H du = g``; damps the diagonal when ``H`` is not positive definite."""
    H = np.asarray(ne.H, dtype=float)
    mu0 = 1e-6 * np.trace(H) / 6.0
    damping = 0.0
    for attempt in range(retries + 1):
        try:
            c = scipy.linalg.cho_factor(H + damping * np.eye(6), lower=True, check_finite=True)
            delta = scipy.linalg.cho_solve(c, ne.g)
            if np.all(np.isfinite(delta)):
                return SolveStep(delta, damping)
        except (np.linalg.LinAlgError, ValueError):
            pass
        if attempt < retries:
            damping = mu0 * 10.0 ** attempt
            if not damping > 0:
                break
            log.debug("normal equations not SPD; retrying with damping %.3g", damping)
    raise DegenerateSystemError("normal equations are singular even after damping")


def joint_cost(ne_corrs: CorrespondenceSet, problem: RegistrationProblem, T: RigidTransform,
               params: SolverParams, iteration: int, delta) -> float:
    """Objective of the linearised model at increment ``delta`` with weights frozen at ``T``."""
    lam = params.effective_lambda
    robust = iteration >= params.robust_kernel_start_iter
    delta = np.asarray(delta, dtype=float)
    total = 0.0
    if params.mode.geometric and lam < 1.0:
        r, J, rk, valid = _geometric_rows(ne_corrs, problem, T, params)
        w = tukey_weight(rk, params.geometric_k) if robust else np.ones(len(r))
        w = np.where(valid, w, 0.0)
        total += (1.0 - lam) * float(np.sum(w * (r + J @ delta) ** 2))
    if params.mode.doppler_residual and lam > 0.0:
        rv = doppler_residuals(problem, pseudo_log(T), ne_corrs.source)
        Jv = problem.doppler_J[ne_corrs.source]
        w = tukey_weight(rv, params.doppler_k) if robust else np.ones(len(rv))
        total += lam * float(np.sum(w * (rv + Jv @ delta) ** 2))
    return total


def register(source: DopplerPointCloud, target: DopplerPointCloud, params: SolverParams | None = None,
             calib: Calibration | None = None, seed=None) -> RegistrationResult:
    """Estimate ``T_TS`` aligning ``source`` onto ``target``.

    ``seed`` is an initial state 6-vector (zero when omitted).  A run that
    hits ``max_iters`` is returned with ``converged=False``.
    """
    params = params or SolverParams()
    problem = prepare(source, target, params, calib)
    T = pseudo_exp(np.zeros(6) if seed is None else seed)
    stats: list[IterationStats] = []
    history = [pseudo_log(T)]
    reason = "max_iters"
    it = 0
    for it in range(params.max_iters):
        state = pseudo_log(T)
        corrs = correspondences(problem, T, params)
        corrs, n_rejected = reject_dynamic(corrs, problem, state, params, it)
        if len(corrs) == 0:
            raise RegistrationError(
                f"no correspondences left at iteration {it} "
                f"(max_dist={params.max_dist_m}, rejected_dynamic={n_rejected})")
        ne = accumulate(corrs, problem, T, params, it)
        step = solve_normal_equations(ne)
        stats.append(IterationStats(ne.geom_rmse, ne.doppler_rmse, len(corrs), n_rejected, step.damping))
        T = pseudo_exp(step.delta) @ T
        if _small(step.delta, params):
            reason = "increment"
            break
        # Nearest-neighbour flips can trap the estimate in a short cycle whose
        # steps never shrink; revisiting a recent state counts as stationary.
        state = pseudo_log(T)
        if any(_small(state - h, params) for h in history[-_CYCLE_WINDOW:-1]):
            reason = "cycle"
            break
        history.append(state)
    result = RegistrationResult(T, pseudo_log(T), it + 1, reason != "max_iters", stats, stop_reason=reason)
    _final_residuals(result, problem, params, it + 1)
    return result


_CYCLE_WINDOW = 16


def _small(delta, params: SolverParams) -> bool:
    return (np.linalg.norm(delta[3:]) < params.conv_trans_tol_m
            and np.linalg.norm(delta[:3]) < params.conv_rot_tol_rad)


def _final_residuals(result: RegistrationResult, problem: RegistrationProblem, params: SolverParams, it: int):
    T = result.transform
    corrs = correspondences(problem, T, params)
    corrs, _ = reject_dynamic(corrs, problem, result.state, params, it)
    result.inlier_count = len(corrs)
    if len(corrs) == 0:
        return
    if params.mode.geometric:
        r, _, _, valid = _geometric_rows(corrs, problem, T, params)
        if valid.any():
            result.geom_rmse = float(np.sqrt(np.mean(r[valid] ** 2)))
    if problem.doppler is not None:
        rv = doppler_residuals(problem, result.state, corrs.source)
        result.doppler_rmse = float(np.sqrt(np.mean(rv ** 2)))


@dataclass(eq=False)
class OdometryResult:
    """Absolute vehicle poses plus the per-pair registrations behind them."""

    poses: list[RigidTransform]
    relative: list[RigidTransform]
    results: list[RegistrationResult | None]
    failed: list[bool]
    errors: list[str]

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def mean_iterations(self) -> float:
        its = [r.iterations for r in self.results if r is not None]
        return float(np.mean(its)) if its else float("nan")


def odometry(scans, params: SolverParams | None = None, calib: Calibration | None = None,
             seeding=SeedMode.CONSTANT_VELOCITY, normals_k: int = 20,
             origin: RigidTransform | None = None) -> OdometryResult:
    """Register consecutive scans and chain them into inertial-frame poses.

    With ``ConstantVelocity`` seeding each pair starts from the previous
    pair's estimate.  A pair that fails is replaced by the identity and
    flagged.
    """
    params = params or SolverParams()
    seeding = SeedMode(seeding)
    scans = list(scans)
    if len(scans) < 2:
        raise ValueError("odometry needs at least two scans")

    def _with_normals(scan):
        if params.mode.geometric and params.metric is GeometricMetric.POINT_TO_PLANE and scan.normals is None:
            return estimate_normals(scan, normals_k)
        return scan

    pose = origin or RigidTransform.identity()
    poses, relative, results, failed, errors = [pose], [], [], [], []
    seed = np.zeros(6)
    for source, target in zip(scans[:-1], scans[1:]):
        try:
            res = register(source, _with_normals(target), params, calib,
                           seed if seeding is SeedMode.CONSTANT_VELOCITY else None)
            T_TS = res.transform
            seed = res.state
            results.append(res)
            failed.append(False)
            errors.append("")
        except RegistrationError as exc:
            log.warning("registration failed, using identity: %s", exc)
            T_TS = RigidTransform.identity()
            seed = np.zeros(6)
            results.append(None)
            failed.append(True)
            errors.append(str(exc))
        relative.append(T_TS)
        pose = pose @ T_TS.inverse()
        poses.append(pose)
    return OdometryResult(poses, relative, results, failed, errors)


def with_mode(params: SolverParams, mode) -> SolverParams:
    return replace(params, mode=Mode(mode))
