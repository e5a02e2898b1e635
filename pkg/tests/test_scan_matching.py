import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nearest_bruteforce
from poseslam2d.errors import EmptyCloud, NoCorrespondences
from poseslam2d.geometry import Pose2, between, transform_points
from poseslam2d.scan_matching import (
    LaserScan,
    PointCloud2,
    RegistrationConfig,
    SpatialIndex2,
    _gicp_system,
    _gicp_terms,
    estimate_covariances,
    gicp_align,
    gicp_cost,
    icp_point_to_point,
    scan_to_cloud,
)
from poseslam2d.simulator import SimConfig, World2D, raycast, square_room


def scan(ranges, angle_min=0.0, inc=0.1, rmin=0.1, rmax=10.0):
    return LaserScan(0.0, angle_min, inc, rmin, rmax, np.array(ranges, dtype=float))


def pose_err(p, q):
    e = between(p, q)
    return e.translation_norm(), abs(e.theta)


def room_cloud(pose, seed=0, world=None, noise=0.01):
    cfg = SimConfig(range_noise_sigma=noise)
    s = raycast(world or square_room(), pose, cfg, np.random.default_rng(seed))
    return estimate_covariances(scan_to_cloud(s))


# -- scans and clouds -----------------------------------------------------


def test_scan_to_cloud_examples():
    assert np.allclose(scan_to_cloud(scan([1.0]), min_valid=0).points, [[1, 0]])
    two = scan_to_cloud(scan([1.0, 1.0], inc=math.pi / 2), min_valid=0).points
    assert np.allclose(two, [[1, 0], [0, 1]], atol=1e-16)
    one = scan_to_cloud(scan([np.nan, 0.05, 2.0], rmin=0.1), min_valid=0).points
    assert np.allclose(one, [[2.0 * math.cos(0.2), 2.0 * math.sin(0.2)]])


def test_scan_to_cloud_needs_ten_returns():
    with pytest.raises(EmptyCloud):
        scan_to_cloud(scan([1.0] * 9))
    assert len(scan_to_cloud(scan([1.0] * 10))) == 10


def test_scan_to_cloud_preserves_beam_order():
    r = np.linspace(1, 2, 30)
    r[[3, 7]] = np.nan
    r[11] = 20.0
    pts = scan_to_cloud(scan(r)).points
    keep = [i for i in range(30) if i not in (3, 7, 11)]
    assert np.allclose(np.hypot(pts[:, 0], pts[:, 1]), r[keep])
    assert np.all(np.diff(np.arctan2(pts[:, 1], pts[:, 0])) > 0)


def test_laser_scan_validation():
    with pytest.raises(ValueError):
        LaserScan(0, 0, 0.0, 0.1, 1.0, [1, 1])
    with pytest.raises(ValueError):
        LaserScan(0, 0, 0.1, 1.0, 1.0, [1, 1])


def test_covs_length_must_match():
    with pytest.raises(ValueError):
        PointCloud2(np.zeros((3, 2)), np.zeros((2, 2, 2)))


# -- nearest neighbors ----------------------------------------------------


def test_nearest_examples():
    idx = SpatialIndex2([(0, 0), (2, 0)])
    i, d = idx.nearest((0.4, 0))
    assert i == 0 and d == pytest.approx(0.4)
    assert idx.nearest((1, 0))[0] == 0
    assert SpatialIndex2([(2, 0), (0, 0)]).nearest((1, 0))[0] == 0


def test_nearest_tie_prefers_lowest_index_among_duplicates():
    pts = np.array([(5, 5), (1, 1), (1, 1), (1, 1)], dtype=float)
    assert SpatialIndex2(pts).nearest((1, 1.5))[0] == 1


def test_nearest_matches_linear_scan():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-10, 10, (1000, 2))
    idx = SpatialIndex2(pts)
    for q in rng.uniform(-12, 12, (100, 2)):
        i, d = idx.nearest(q)
        bi, bd = nearest_bruteforce(pts, q)
        assert i == bi and d == pytest.approx(bd, abs=1e-12)


def test_query_respects_max_dist():
    idx = SpatialIndex2([(0, 0), (3, 0)])
    _, _, found = idx.query(np.array([[0.5, 0], [1.6, 0]]), 1.0)
    assert found.tolist() == [True, False]


def test_empty_index_raises():
    with pytest.raises(EmptyCloud):
        SpatialIndex2(np.zeros((0, 2)))


# -- covariances ----------------------------------------------------------


def _eig(c):
    w, v = np.linalg.eigh(c)
    return w, v[:, 1]


def test_collinear_covariances():
    pts = np.column_stack([np.arange(20.0), np.zeros(20)])
    cloud = estimate_covariances(PointCloud2(pts), k=5)
    for c in cloud.covs:
        w, major = _eig(c)
        assert np.allclose(w, [1e-3, 1.0], atol=1e-12)
        assert abs(abs(major[0]) - 1.0) < 1e-12


def test_vertical_wall_covariances():
    pts = np.column_stack([np.full(20, 3.0), np.linspace(-1, 1, 20)])
    for c in estimate_covariances(PointCloud2(pts), k=5).covs:
        w, major = _eig(c)
        assert abs(abs(major[1]) - 1.0) < 1e-12


def test_blob_covariances_have_forced_spectrum():
    rng = np.random.default_rng(1)
    for spread in (1e-3, 1.0, 100.0):
        cloud = estimate_covariances(PointCloud2(rng.normal(0, spread, (60, 2))), k=20)
        for c in cloud.covs:
            assert np.allclose(c, c.T, atol=1e-15)
            assert np.allclose(np.linalg.eigvalsh(c), [1e-3, 1.0], atol=1e-12)


def test_covariances_need_enough_points():
    with pytest.raises(EmptyCloud):
        estimate_covariances(PointCloud2(np.zeros((4, 2))), k=5)
    with pytest.raises(EmptyCloud):
        estimate_covariances(PointCloud2(np.zeros((0, 2))), k=3)


# -- ICP ------------------------------------------------------------------


def test_icp_self_match():
    c = room_cloud(Pose2(1, 1, 0.3))
    m = icp_point_to_point(c, c)
    assert m.converged and m.iterations <= 2
    assert m.relative_pose == Pose2()


def test_icp_recovers_known_transform():
    src = room_cloud(Pose2(1, 1, 0.3))
    T = Pose2(0.1, -0.05, 0.05)
    tgt = PointCloud2(transform_points(T, src.points))
    m = icp_point_to_point(src, tgt)
    dt, dr = pose_err(T, m.relative_pose)
    assert dt < 1e-3 and dr < 1e-3


def test_icp_far_init_has_no_correspondences():
    c = room_cloud(Pose2(1, 1, 0.3))
    with pytest.raises(NoCorrespondences):
        icp_point_to_point(c, c, Pose2(100, 0, 0))


def test_registration_rejects_tiny_clouds():
    small = PointCloud2(np.random.default_rng(0).normal(size=(5, 2)))
    with pytest.raises(EmptyCloud):
        icp_point_to_point(small, small)


# -- GICP -----------------------------------------------------------------


def test_gicp_self_match():
    c = room_cloud(Pose2(1, 1, 0.3))
    m = gicp_align(c, c)
    assert m.final_cost < 1e-9
    assert m.relative_pose.translation_norm() < 1e-9 and abs(m.relative_pose.theta) < 1e-9


def test_gicp_requires_covariances():
    c = room_cloud(Pose2(1, 1, 0.3))
    with pytest.raises(ValueError):
        gicp_align(PointCloud2(c.points), c)


def corridor():
    return World2D(np.array([((-2, -1), (6, -1)), ((6, -1), (6, 1)),
                             ((6, 1), (-2, 1)), ((-2, 1), (-2, -1))], dtype=float))


def test_gicp_corridor_offset():
    # A single pair is dominated by range noise, so the rotation comparison
    # against ICP is made on the mean over 30 seeded pairs.
    w = corridor()
    pa = Pose2(2.0, 0.0, 0.0)
    T = Pose2(0.2, 0.0, 0.1)
    g_rot, i_rot = [], []
    for seed in range(30):
        a = room_cloud(pa, 2 * seed + 1, w)
        b = room_cloud(pa.compose(T), 2 * seed + 2, w)
        gt, gr = pose_err(T, gicp_align(b, a).relative_pose)
        assert gt < 1e-2 and gr < 1e-2
        g_rot.append(gr)
        i_rot.append(pose_err(T, icp_point_to_point(b, a).relative_pose)[1])
    assert np.mean(g_rot) < np.mean(i_rot)


def test_gicp_identity_covariances_match_icp():
    a = room_cloud(Pose2(0.5, 0.7, 0.2), 3)
    b = room_cloud(Pose2(0.7, 0.6, 0.4), 4)
    eye = lambda n: np.broadcast_to(np.eye(2), (n, 2, 2))
    src, tgt = PointCloud2(b.points, eye(len(b))), PointCloud2(a.points, eye(len(a)))
    g = gicp_align(src, tgt)
    i = icp_point_to_point(src, tgt)
    assert np.max(np.abs(g.relative_pose.as_array() - i.relative_pose.as_array())) < 1e-6


def test_gicp_measurement_convention():
    # relative_pose maps source into target: between(pose_target, pose_source)
    pt, ps = Pose2(0.4, 0.3, -0.2), Pose2(0.6, 0.4, 0.0)
    m = gicp_align(room_cloud(ps, 5), room_cloud(pt, 6))
    dt, dr = pose_err(between(pt, ps), m.relative_pose)
    assert dt < 1e-2 and dr < 1e-2


def test_gicp_final_cost_not_above_initial():
    rng = np.random.default_rng(7)
    for k in range(10):
        pa = Pose2(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(-3, 3))
        pb = pa.compose(Pose2(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.25, 0.25)))
        a, b = room_cloud(pa, 2 * k), room_cloud(pb, 2 * k + 1)
        m = gicp_align(b, a)
        assert m.final_cost <= gicp_cost(b, a, Pose2())
        assert not m.converged or m.iterations <= RegistrationConfig().max_iterations


def _moved(cloud, G):
    return estimate_covariances(PointCloud2(transform_points(G, cloud.points)))


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3.1, 3.1))
def test_registration_equivariance(gx, gy, gt):
    G = Pose2(gx, gy, gt)
    a = room_cloud(Pose2(0.9, 1.2, 0.5), 11)
    b = room_cloud(Pose2(1.1, 1.0, 0.7), 12)
    init = Pose2(0.05, 0.0, 0.1)
    cfg = RegistrationConfig(tol=1e-12, max_iterations=100)
    m = gicp_align(b, a, init, cfg)
    mg = gicp_align(_moved(b, G), _moved(a, G), G.compose(init).compose(G.inverse()), cfg)
    expect = G.compose(m.relative_pose).compose(G.inverse())
    d = between(expect, mg.relative_pose)
    assert max(abs(d.x), abs(d.y), abs(d.theta)) < 1e-6


def test_gicp_kernel_matches_numpy_reference():
    a = room_cloud(Pose2(0.9, 1.2, 0.5), 21)
    b = room_cloud(Pose2(1.1, 1.0, 0.7), 22)
    cfg = RegistrationConfig()
    for pose in (Pose2(), Pose2(0.1, -0.2, 0.15), Pose2(0.2, 0.1, -0.3)):
        H, g = np.zeros((3, 3)), np.zeros(3)
        cost, n = _gicp_system(b, a, pose, cfg, H, g)
        pts, (qxx, qxy, qyy), (wx, wy), ref_cost, ref_n = _gicp_terms(
            b, a, pose.rotation(), np.array([pose.x, pose.y]), cfg)
        assert n == ref_n
        assert cost == pytest.approx(ref_cost, rel=1e-12)
        px, py = -pts[:, 1], pts[:, 0]
        ref_g = np.array([wx.sum(), wy.sum(), np.sum(px * wx + py * wy)])
        assert np.allclose(g, ref_g, rtol=1e-10, atol=1e-10)
        assert np.allclose(H, H.T)
        assert H[0, 0] == pytest.approx(qxx.sum(), rel=1e-12)
        assert H[1, 1] == pytest.approx(qyy.sum(), rel=1e-12)
