from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from conftest import cached_odometry, cached_pair, cached_sequence
from dicp import sim
from dicp.cloud import CorrespondenceSet, DopplerPointCloud, estimate_normals
from dicp.errors import DegenerateSystemError, MissingDopplerError, RegistrationError
from dicp.evaluation import path_length
from dicp.objectives import (Calibration, doppler_jacobian, p2plane_jacobian, tukey_weight)
from dicp.se3 import RigidTransform, pseudo_exp, pseudo_log, rotation_angle
from dicp.solver import (Mode, NormalEquations, SeedMode, SolverParams, accumulate, correspondences, joint_cost,
                         odometry, prepare, register, reject_dynamic, solve_normal_equations, with_mode)

DICP = SolverParams()
P2P = SolverParams(mode=Mode.P2P)
NO_REJECTION = 10 ** 9


def all_points(problem):
    n = len(problem.source)
    return CorrespondenceSet(np.arange(n), np.zeros(n, dtype=np.int64), np.zeros(n))


def fraction_solve(H, g):
    """Gaussian elimination in exact rational arithmetic."""
    n = len(g)
    A = [[Fraction(float(H[i, j])) for j in range(n)] + [Fraction(float(g[i]))] for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[p] = A[p], A[c]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c] / A[c][c]
                A[r] = [a - f * b for a, b in zip(A[r], A[c])]
    return np.array([float(A[i][n] / A[i][i]) for i in range(n)])


def static_pair(name="feature_rich"):
    """Source equal to target from a motionless sensor; range noise only, so every Doppler is zero."""
    scene = sim.make_scene(name)
    s = sim.TrajectorySample(0.0, RigidTransform.identity(), np.zeros(3), np.zeros(3))
    cloud = sim.simulate_scan(scene, s, sim.ScanPattern(), sim.NoiseSpec(0.02, 0.0, 3))
    return cloud, estimate_normals(cloud, 20)


# ---------------------------------------------------------------------------
# accumulate
# ---------------------------------------------------------------------------

def test_single_correspondence_gives_outer_product():
    src = DopplerPointCloud([[4.0, 1.0, -0.5]], doppler=[0.0])
    tgt = DopplerPointCloud([[4.1, 1.0, -0.5]], normals=[[-1.0, 0, 0]])
    problem = prepare(src, tgt, P2P)
    corrs = CorrespondenceSet(np.array([0]), np.array([0]), np.array([0.01]))
    ne = accumulate(corrs, problem, RigidTransform.identity(), P2P, 0)
    J = p2plane_jacobian([4.0, 1.0, -0.5], [-1.0, 0, 0])
    np.testing.assert_array_equal(ne.H, np.outer(J, J))
    np.testing.assert_allclose(ne.g, -J * ((np.array([4.0, 1, -0.5]) - [4.1, 1, -0.5]) @ [-1, 0, 0]), atol=1e-15)


def test_doppler_only_rank():
    params = SolverParams(lambda_v=1.0)
    ray = np.array([0.6, 0.64, 0.48])
    src = DopplerPointCloud(np.outer([3.0, 5.0, 9.0, 20.0], ray), doppler=[1.0, -2, 0.3, 4])
    tgt = DopplerPointCloud(src.positions, normals=np.tile([0, 0, 1.0], (4, 1)))
    problem = prepare(src, tgt, params)
    ne = accumulate(all_points(problem), problem, RigidTransform.identity(), params, 0)
    assert np.linalg.matrix_rank(ne.H) == 1

    rng = np.random.default_rng(4)
    for n in (2, 4, 10):
        pts = rng.normal(size=(n, 3)) * 10
        src = DopplerPointCloud(pts, doppler=rng.normal(size=n))
        tgt = DopplerPointCloud(pts, normals=np.tile([0, 0, 1.0], (n, 1)))
        for calib in (Calibration(), Calibration(t_VL=[1.5, 0.2, 1.9])):
            problem = prepare(src, tgt, params, calib)
            H = accumulate(all_points(problem), problem, RigidTransform.identity(), params, 0).H
            assert np.linalg.matrix_rank(H) <= min(6, n)
            if not calib.t_VL.any():
                assert np.array_equal(H[:3, :3], np.zeros((3, 3)))
                assert np.array_equal(H[:3, 3:], np.zeros((3, 3)))


def naive_normal_equations(problem, corrs, T, params, robust):
    lam = params.lambda_v
    H = [[0.0] * 6 for _ in range(6)]
    g = [0.0] * 6
    u = pseudo_log(T)
    for s, t in zip(corrs.source, corrs.target):
        p = T.apply(problem.source[s])
        n = problem.normals[t]
        rows = []
        if np.all(np.isfinite(n)):
            r = float((p - problem.target[t]) @ n)
            w = tukey_weight(r, params.geometric_k) if robust else 1.0
            rows.append(((1 - lam) * w, p2plane_jacobian(p, n), r))
        d = problem.directions[s]
        rv = problem.doppler[s] - float(d @ (u[3:] - np.cross(problem.calib.t_VL, u[:3]))) / problem.dt
        wv = tukey_weight(rv, params.doppler_k) if robust else 1.0
        rows.append((lam * wv, doppler_jacobian(d, problem.calib, problem.dt), rv))
        for c, J, r in rows:
            for i in range(6):
                g[i] -= c * J[i] * r
                for j in range(6):
                    H[i][j] += c * J[i] * J[j]
    return np.array(H), np.array(g)


@pytest.mark.parametrize("iteration", [0, 2])
def test_accumulate_matches_naive_double_loop(iteration):
    src, tgt, T_gt, _ = cached_pair("feature_rich", noiseless=False)
    calib = Calibration(t_VL=[1.0, 0.1, 1.7])
    params = SolverParams(lambda_v=0.3)
    problem = prepare(src, tgt, params, calib)
    T = pseudo_exp(pseudo_log(T_gt) + [0.002, -0.001, 0.003, 0.05, -0.04, 0.02])
    corrs = correspondences(problem, T, params)
    corrs = corrs.subset(np.arange(len(corrs)) % 7 == 0)
    ne = accumulate(corrs, problem, T, params, iteration)
    H, g = naive_normal_equations(problem, corrs, T, params, iteration >= 2)
    scale = np.abs(H).max()
    np.testing.assert_allclose(ne.H, H, rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(ne.g, g, rtol=0, atol=1e-12 * max(np.abs(g).max(), 1.0))
    assert np.array_equal(ne.H, ne.H.T)


def test_all_zero_weights_is_degenerate():
    src = DopplerPointCloud([[5.0, 0, 0], [6.0, 1, 0]])
    tgt = DopplerPointCloud(src.positions, normals=np.full((2, 3), np.nan))
    problem = prepare(src, tgt, P2P)
    with pytest.raises(DegenerateSystemError):
        accumulate(all_points(problem), problem, RigidTransform.identity(), P2P, 0)
    with pytest.raises(RegistrationError):
        accumulate(CorrespondenceSet.empty(), problem, RigidTransform.identity(), P2P, 0)


def test_rotation_block_vanishes_without_lever_arm():
    src, tgt, _, _ = cached_pair("straight_walls", noiseless=False)
    params = SolverParams(lambda_v=1.0)
    problem = prepare(src, tgt, params)
    ne = accumulate(correspondences(problem, RigidTransform.identity(), params), problem,
                    RigidTransform.identity(), params, 0)
    assert np.array_equal(ne.H[:3, :3], np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# solve_normal_equations
# ---------------------------------------------------------------------------

def test_solve_identity_system():
    e4 = np.eye(6)[3]
    step = solve_normal_equations(NormalEquations(np.eye(6), e4))
    np.testing.assert_array_equal(step.delta, e4)
    assert step.damping == 0.0


def test_solve_matches_rational_reference():
    rng = np.random.default_rng(11)
    for _ in range(5):
        A = rng.normal(size=(6, 6))
        H = A @ A.T + 0.5 * np.eye(6)
        H = 0.5 * (H + H.T)
        g = rng.normal(size=6)
        ref = fraction_solve(H, g)
        np.testing.assert_allclose(solve_normal_equations(NormalEquations(H, g)).delta, ref, rtol=0, atol=1e-10)


def test_tunnel_system_takes_damping_path():
    # Wall and ground normals carry no x component, so travel along x is unobservable.
    rng = np.random.default_rng(2)
    pts = np.c_[rng.uniform(0, 30, 200), rng.choice([-4.0, 4.0], 200), rng.uniform(-1.8, 3, 200)]
    normals = np.where(pts[:, 1:2] > 0, [0, -1.0, 0], [0, 1.0, 0])
    J = np.hstack([np.cross(pts, normals), normals])
    H = J.T @ J
    step = solve_normal_equations(NormalEquations(H, J.T @ rng.normal(size=200)))
    assert step.damping == pytest.approx(1e-6 * np.trace(H) / 6)
    assert np.all(np.isfinite(step.delta))


def test_unrecoverable_singularity_raises():
    with pytest.raises(DegenerateSystemError):
        solve_normal_equations(NormalEquations(np.zeros((6, 6)), np.ones(6)))
    with pytest.raises(DegenerateSystemError):
        solve_normal_equations(NormalEquations(np.full((6, 6), np.nan), np.ones(6)))


def test_register_records_damping_on_tunnel():
    rng = np.random.default_rng(5)
    n = 600
    pts = np.c_[rng.uniform(2, 40, n), rng.choice([-4.0, 4.0], n), rng.uniform(-1.5, 3, n)]
    normals = np.where(pts[:, 1:2] > 0, [0, -1.0, 0], [0, 1.0, 0])
    tgt = DopplerPointCloud(pts, normals=normals)
    src = DopplerPointCloud(pts + [0, 0.05, 0])
    res = register(src, tgt, P2P)
    assert res.damped
    assert any(s.damping > 0 for s in res.per_iteration)


# ---------------------------------------------------------------------------
# reject_dynamic
# ---------------------------------------------------------------------------

def _actor_problem(noiseless):
    seq = cached_sequence("with_actor", noiseless, n_scans=2)
    src, labels = seq.scans[0], seq.labels[0]
    u = sim.trajectory_state(*seq.samples[:2])
    problem = prepare(src, estimate_normals(seq.scans[1], 20), DICP)
    return problem, labels, u


def test_reject_dynamic_at_ground_truth():
    problem, labels, u = _actor_problem(noiseless=True)
    corrs = all_points(problem)
    static_only = corrs.subset(labels < 0)
    kept, n = reject_dynamic(static_only, problem, u, DICP, 2)
    assert n == 0 and len(kept) == len(static_only)
    kept, n = reject_dynamic(corrs, problem, u, DICP, 2)
    assert n == int(np.sum(labels >= 0)) > 0
    assert np.all(labels[kept.source] < 0)


def test_reject_dynamic_noise_tail():
    problem, labels, u = _actor_problem(noiseless=False)
    static_only = all_points(problem).subset(labels < 0)
    _, n = reject_dynamic(static_only, problem, u, DICP, 2)
    assert n / len(static_only) < 1e-4


def test_reject_dynamic_respects_schedule_and_mode():
    problem, labels, u = _actor_problem(noiseless=True)
    corrs = all_points(problem)
    assert reject_dynamic(corrs, problem, u, DICP, 1)[1] == 0
    assert reject_dynamic(corrs, problem, u, with_mode(DICP, Mode.P2P_DR), 5)[1] == 0
    assert reject_dynamic(corrs, problem, u, with_mode(DICP, Mode.P2P_DOR), 2)[1] > 0


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mode", list(Mode))
def test_identical_clouds_register_to_identity(mode):
    cloud, target = static_pair()
    res = register(cloud, target, SolverParams(mode=mode))
    assert res.transform.allclose(RigidTransform.identity(), atol=1e-9)
    assert res.iterations <= 2 and res.converged


def _pair_errors(mode, **kw):
    src, tgt, T_gt, _ = cached_pair("curved_walls", noiseless=True, **kw)
    res = register(src, tgt, SolverParams(mode=mode))
    E = T_gt.inverse() @ res.transform
    return res, np.linalg.norm(E.translation), abs(E.translation[0])


@pytest.mark.xfail(strict=True, reason="constant-velocity Doppler model is biased by the chord/tangent "
                                       "offset on arcs; see the decisions ledger")
def test_curved_pair_recovers_ground_truth_to_a_tenth_of_a_millimetre():
    _, err, _ = _pair_errors(Mode.DICP)
    assert err < 1e-4


def test_curved_pair_dicp_accuracy_and_p2p_degeneracy():
    res, err, along = _pair_errors(Mode.DICP)
    assert res.converged and err < 5e-3
    _, err_p2p, along_p2p = _pair_errors(Mode.P2P)
    assert along_p2p >= 10 * max(along, err)


def test_lambda_zero_without_rejection_is_point_to_plane():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=True)
    plain = register(src, tgt, P2P)
    blended = register(src, tgt, SolverParams(lambda_v=0.0, rejection_start_iter=NO_REJECTION))
    dt = np.linalg.norm(plain.transform.translation - blended.transform.translation)
    dr = rotation_angle(plain.transform.rotation.T @ blended.transform.rotation)
    assert dt < 1e-6 and dr < 1e-6
    assert plain.iterations == blended.iterations


def test_joint_objective_does_not_increase_across_solve():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=False)
    for params in (DICP, SolverParams(lambda_v=0.2), P2P, with_mode(DICP, Mode.P2P_DR)):
        problem = prepare(src, tgt, params)
        T = RigidTransform.identity()
        for it in range(6):
            corrs = correspondences(problem, T, params)
            corrs, _ = reject_dynamic(corrs, problem, pseudo_log(T), params, it)
            ne = accumulate(corrs, problem, T, params, it)
            step = solve_normal_equations(ne)
            before = joint_cost(corrs, problem, T, params, it, np.zeros(6))
            after = joint_cost(corrs, problem, T, params, it, step.delta)
            assert after <= before * (1 + 1e-12) + 1e-15
            T = pseudo_exp(step.delta) @ T


def test_doppler_rmse_vanishes_when_doppler_fully_determines_motion():
    src, tgt, _, _ = cached_pair("straight_walls", noiseless=True)
    res = register(src, tgt, SolverParams(mode=Mode.DOPPLER_ONLY))
    assert res.doppler_rmse < 1e-6
    cloud, target = static_pair("straight_walls")
    assert register(cloud, target, DICP).doppler_rmse < 1e-6


@pytest.mark.xfail(strict=True, reason="blended optimum keeps millimetre geometric bias from estimated "
                                       "normals; see the decisions ledger")
def test_dicp_doppler_rmse_on_moving_noiseless_pair():
    src, tgt, _, _ = cached_pair("straight_walls", noiseless=True)
    assert register(src, tgt, DICP).doppler_rmse < 1e-6


def test_register_is_deterministic():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=False)
    a, b = register(src, tgt, DICP), register(src, tgt, DICP)
    assert a.state.tobytes() == b.state.tobytes()
    assert a.transform.as_matrix().tobytes() == b.transform.as_matrix().tobytes()
    assert a.iterations == b.iterations and a.per_iteration == b.per_iteration


def test_register_flags_non_convergence():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=False)
    res = register(src, tgt, replace(DICP, max_iters=1))
    assert res.iterations == 1 and not res.converged and res.stop_reason == "max_iters"


def test_register_input_errors():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=True)
    no_doppler = DopplerPointCloud(src.positions, period_s=src.period_s)
    with pytest.raises(MissingDopplerError):
        register(no_doppler, tgt, DICP)
    with pytest.raises(MissingDopplerError):
        register(no_doppler, tgt, with_mode(DICP, Mode.P2P_DOR))
    assert register(no_doppler, tgt, P2P).converged
    with pytest.raises(ValueError, match="normals"):
        register(src, DopplerPointCloud(tgt.positions), P2P)
    far = DopplerPointCloud(src.positions + [500, 0, 0], doppler=src.doppler)
    with pytest.raises(RegistrationError, match="no correspondences"):
        register(far, tgt, DICP)
    with pytest.raises(RegistrationError):
        register(DopplerPointCloud(np.zeros((0, 3)), doppler=np.zeros(0)), tgt, DICP)


def test_seed_is_used_as_initial_state():
    src, tgt, T_gt, _ = cached_pair("feature_rich", noiseless=True)
    doppler_only = SolverParams(mode=Mode.DOPPLER_ONLY)
    solution = register(src, tgt, doppler_only)
    again = register(src, tgt, doppler_only, seed=solution.state)
    assert again.iterations == 1
    np.testing.assert_allclose(again.state, solution.state, atol=1e-12)
    cold = register(src, tgt, replace(DICP, max_iters=1))
    warm = register(src, tgt, replace(DICP, max_iters=1), seed=pseudo_log(T_gt))
    assert warm.per_iteration[0].doppler_rmse < 1e-9 < 1.0 < cold.per_iteration[0].doppler_rmse


# ---------------------------------------------------------------------------
# odometry
# ---------------------------------------------------------------------------

def test_static_sensor_odometry_is_identity():
    cloud, _ = static_pair()
    res = odometry([cloud] * 4, DICP)
    assert len(res) == 4 and not any(res.failed)
    for T in res.relative:
        assert T.allclose(RigidTransform.identity(), atol=1e-9)


def test_straight_corridor_path_length():
    seq, res = cached_odometry("straight_walls")
    length = path_length(seq.ground_truth)
    assert abs(path_length(res.poses) - length) < 0.005 * length
    assert not any(res.failed)


def test_seeding_lowers_iterations_on_feature_rich():
    _, seeded = cached_odometry("feature_rich", seeding="constant_velocity")
    _, unseeded = cached_odometry("feature_rich", seeding="none")
    assert seeded.mean_iterations < unseeded.mean_iterations


def test_odometry_composes_in_the_inertial_frame():
    seq = cached_sequence("feature_rich", True, n_scans=3)
    res = odometry(seq.scans, DICP, origin=seq.ground_truth[0])
    for est, gt in zip(res.poses, seq.ground_truth):
        assert np.linalg.norm(est.translation - gt.translation) < 0.05
    with pytest.raises(ValueError):
        odometry(seq.scans[:1], DICP)


def test_odometry_continues_past_failed_pairs():
    src, tgt, _, _ = cached_pair("feature_rich", noiseless=True)
    far = DopplerPointCloud(src.positions + [500, 0, 0], doppler=src.doppler, period_s=src.period_s)
    res = odometry([src, far, src], DICP, seeding=SeedMode.NONE)
    assert res.failed[0] and res.errors[0]
    assert res.results[0] is None
    assert res.relative[0].allclose(RigidTransform.identity(), atol=0)
    assert len(res.poses) == 3
