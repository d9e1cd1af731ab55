import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dicp.cloud import DopplerPointCloud, build_index, estimate_normals, match, nearest
from dicp.se3 import RigidTransform, so3_exp

coords = st.floats(-5, 5, allow_nan=False, width=32)
point_sets = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=coords)


def brute_nearest(points, q):
    d = np.linalg.norm(points - q, axis=1)
    i = int(np.flatnonzero(d == d.min())[0])
    return i, float(d[i])


def brute_match(src, tgt, max_dist):
    pairs = []
    for s, p in enumerate(src):
        i, d = brute_nearest(tgt, p)
        if d < max_dist:
            pairs.append((s, i))
    return pairs


def test_single_point_index():
    idx = build_index(DopplerPointCloud([[1.0, 2, 3]]))
    i, d = nearest(idx, [10, -4, 0])
    assert i == 0 and d == pytest.approx(np.linalg.norm([9, -6, -3]))


def test_self_queries_return_zero_distance(rng):
    pts = rng.uniform(-50, 50, size=(1000, 3))
    idx = build_index(pts)
    i, d = idx.query(pts)
    assert np.array_equal(i, np.arange(1000))
    assert np.all(d == 0.0)


def test_nearest_matches_linear_scan(rng):
    pts = rng.uniform(-10, 10, size=(300, 3))
    idx = build_index(DopplerPointCloud(pts))
    for q in rng.uniform(-12, 12, size=(500, 3)):
        i, d = nearest(idx, q)
        bi, bd = brute_nearest(pts, q)
        assert i == bi
        assert d == pytest.approx(bd, rel=1e-12)


def test_ties_go_to_lowest_index():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0]])
    for order in ([0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [2, 4, 0, 3, 1]):
        i, _ = nearest(build_index(pts[order]), [0, 0, 0])
        assert i == 0
    dup = np.array([[5.0, 5, 5], [1.0, 1, 1], [1.0, 1, 1]])
    assert nearest(build_index(dup), [1.1, 1, 1])[0] == 1


@settings(max_examples=60, deadline=None)
@given(point_sets, point_sets)
def test_nearest_exactness_property(tgt, queries):
    idx = build_index(tgt)
    got_i, got_d = idx.query(queries)
    for q, i, d in zip(queries, got_i, got_d):
        bi, bd = brute_nearest(tgt, q)
        assert d == pytest.approx(bd, rel=1e-12, abs=1e-12)
        assert i == bi


def test_empty_index_is_rejected():
    with pytest.raises(ValueError):
        build_index(DopplerPointCloud(np.zeros((0, 3))))


def test_match_examples(rng):
    pts = rng.uniform(-10, 10, size=(200, 3))
    c = match(pts, build_index(pts), 0.1)
    assert np.array_equal(c.source, np.arange(200)) and np.array_equal(c.target, np.arange(200))
    assert np.all(c.sq_dist == 0)
    sparse = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    assert len(match(sparse + [0, 0.2, 0], build_index(sparse), 0.1)) == 0
    with pytest.raises(ValueError):
        match(pts, build_index(pts), 0.0)


def test_match_equals_brute_force(rng):
    src = rng.uniform(-5, 5, size=(300, 3))
    tgt = rng.uniform(-5, 5, size=(250, 3))
    for max_dist in (0.2, 0.5, 1.0):
        c = match(src, build_index(tgt), max_dist)
        assert list(zip(c.source.tolist(), c.target.tolist())) == brute_match(src, tgt, max_dist)
        assert len(set(c.source.tolist())) == len(c)


@settings(max_examples=40, deadline=None)
@given(point_sets, point_sets, st.floats(0.01, 3), st.floats(0.01, 3))
def test_match_is_monotone_in_distance(src, tgt, a, b):
    lo, hi = sorted((a, b))
    idx = build_index(tgt)
    assert len(match(src, idx, lo)) <= len(match(src, idx, hi))


def test_normals_of_exact_planes(rng):
    xy = rng.uniform(-2, 2, size=(400, 2))
    below = DopplerPointCloud(np.c_[xy, np.full(400, -3.0)])
    n = estimate_normals(below, 20).normals
    np.testing.assert_allclose(n, np.tile([0, 0, 1.0], (400, 1)), atol=1e-6)
    wall = DopplerPointCloud(np.c_[np.full(400, 10.0), xy])
    n = estimate_normals(wall, 20).normals
    np.testing.assert_allclose(n, np.tile([-1.0, 0, 0], (400, 1)), atol=1e-6)


def test_noisy_plane_normal_error_monte_carlo():
    errors = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        R = so3_exp(r.normal(size=3))
        local = np.c_[r.uniform(-0.5, 0.5, size=(500, 2)), r.normal(0, 0.01, size=500)]
        pts = (local @ R.T) + R[:, 2] * 5.0
        n = estimate_normals(DopplerPointCloud(pts), 20).normals
        cosang = np.clip(np.abs(n @ R[:, 2]), -1, 1)
        errors.append(np.degrees(np.arccos(cosang)).mean())
    assert np.mean(errors) < 5.0


def test_normals_face_the_sensor(rng):
    pts = rng.normal(size=(500, 3)) * 4 + [8, 0, 0]
    n = estimate_normals(DopplerPointCloud(pts), 10).normals
    ok = np.all(np.isfinite(n), axis=1)
    assert np.all(np.einsum("ni,ni->n", n[ok], pts[ok]) <= 0)
    np.testing.assert_allclose(np.linalg.norm(n[ok], axis=1), 1.0, atol=1e-9)


def test_collinear_neighbourhood_has_no_normal():
    pts = np.c_[np.linspace(0, 5, 30), np.zeros(30), np.zeros(30)] + [1, 0, 0]
    c = estimate_normals(DopplerPointCloud(pts), 5)
    assert not c.normal_mask.any()
    assert c[0].normal is None


def test_estimate_normals_preconditions():
    c = DopplerPointCloud(np.random.default_rng(0).normal(size=(10, 3)))
    with pytest.raises(ValueError):
        estimate_normals(c, 2)
    with pytest.raises(ValueError):
        estimate_normals(c, 11)


def test_cloud_container_behaviour():
    c = DopplerPointCloud([[1.0, 0, 0], [0, 2.0, 0]], doppler=[0.5, -1.0], period_s=0.05, timestamp_s=3.0)
    assert len(c) == 2 and c.has_doppler
    p = c[1]
    assert np.array_equal(p.position, [0, 2, 0]) and p.doppler == -1.0 and p.normal is None
    T = RigidTransform(so3_exp([0, 0, 0.3]), [1, 2, 3])
    moved = c.transformed(T, frame_id="vehicle")
    np.testing.assert_allclose(moved.positions, T.apply(c.positions))
    assert moved.frame_id == "vehicle" and moved.period_s == 0.05
    sub = c.select(np.array([False, True]))
    assert len(sub) == 1 and sub.doppler[0] == -1.0
    with pytest.raises(ValueError):
        DopplerPointCloud([[0.0, 0, 0]], period_s=0.0)
    with pytest.raises(ValueError):
        DopplerPointCloud([[np.nan, 0, 0]])
