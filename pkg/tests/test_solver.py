import math

import numpy as np
import pytest

from regkit.errors import (
    DegenerateConfigurationError,
    NoCorrespondencesError,
    TooFewCorrespondencesError,
)
from regkit.geometry import (
    EulerRanges,
    RigidTransform,
    apply,
    compose,
    rotation_about_axis,
    rotation_error,
    sample_random_transform,
    transform_points,
)
from regkit.matching import CorrespondenceSet
from regkit.mesh import make_widget, sample_surface
from regkit.pointcloud import PointCloud
from regkit.preprocess import make_synthetic_pair, partial_crop
from regkit.solver import (
    DEFAULT_PROBE_DIRECTION,
    RegisterConfig,
    _svd3,
    fit_loglog_slope,
    gap_probe_matrix,
    icp,
    procrustes,
    register,
    svd_gradient_probe,
)


def exact_corr(n, weights=None):
    w = np.ones(n) if weights is None else weights
    return CorrespondenceSet(np.arange(n), np.arange(n), w)


def small_angle_error_rad(a, b):
    """Rotation angle between two rotations, accurate near zero."""
    fro = np.linalg.norm(a - b)
    return 2.0 * math.asin(min(1.0, fro / (2.0 * math.sqrt(2.0))))


# ---------------------------------------------------------------------------
# procrustes
# ---------------------------------------------------------------------------

def test_procrustes_identity_on_identical_clouds():
    rng = np.random.default_rng(0)
    pts = PointCloud(rng.normal(size=(20, 3)))
    pose = procrustes(exact_corr(20), pts, pts)
    assert np.abs(pose.rotation - np.eye(3)).max() < 1e-12
    assert np.abs(pose.translation).max() < 1e-12


def test_procrustes_recovers_known_transform():
    rng = np.random.default_rng(1)
    src = PointCloud(rng.normal(size=(30, 3)))
    gt = RigidTransform(rotation_about_axis(2, 90.0), np.array([1.0, 2.0, 3.0]))
    tgt = apply(gt, src)
    pose = procrustes(exact_corr(30), src, tgt)
    assert small_angle_error_rad(pose.rotation, gt.rotation) < 1e-9
    assert np.abs(pose.translation - gt.translation).max() < 1e-9


def test_procrustes_weight_scale_invariant():
    rng = np.random.default_rng(2)
    src = PointCloud(rng.normal(size=(25, 3)))
    gt = sample_random_transform(EulerRanges.full_rotation(), rng)
    tgt = apply(gt, src)
    w = rng.uniform(0.5, 2.0, size=25)
    a = procrustes(exact_corr(25, w), src, tgt)
    b = procrustes(exact_corr(25, w * 37.5), src, tgt)
    assert np.abs(a.rotation - b.rotation).max() < 1e-12
    assert np.abs(a.translation - b.translation).max() < 1e-12


def test_procrustes_reflection_case_stays_proper():
    # Planar 3-point configuration whose best orthogonal map is a mirror:
    # the determinant correction must return the best proper rotation.
    src = PointCloud(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]]))
    mirrored = src.points.copy()
    mirrored[:, 2] = 0.0
    mirrored[:, 0] = -mirrored[:, 0]  # reflect through the yz-plane
    tgt = PointCloud(mirrored)
    pose = procrustes(exact_corr(3), src, tgt)
    assert np.linalg.det(pose.rotation) == pytest.approx(1.0, abs=1e-9)

    # exhaustive proper-rotation search oracle (coarse-to-fine axis-angle grid)
    def objective(r):
        return float(np.sum((src.points @ r.T + pose.translation - tgt.points) ** 2))

    def grid_best(center=None, span=math.pi, steps=9):
        best = (math.inf, None)
        axes = [
            np.array([x, y, z])
            for x in (-1.0, 0.0, 1.0)
            for y in (-1.0, 0.0, 1.0)
            for z in (-1.0, 0.0, 1.0)
            if (x, y, z) != (0.0, 0.0, 0.0)
        ]
        for axis in axes:
            axis = axis / np.linalg.norm(axis)
            for t in np.linspace(-span, span, steps):
                k = np.array(
                    [
                        [0, -axis[2], axis[1]],
                        [axis[2], 0, -axis[0]],
                        [-axis[1], axis[0], 0],
                    ]
                )
                r = np.eye(3) + math.sin(t) * k + (1 - math.cos(t)) * (k @ k)
                # re-solve the optimal translation for this rotation
                t_vec = tgt.points.mean(0) - r @ src.points.mean(0)
                val = float(np.sum((src.points @ r.T + t_vec - tgt.points) ** 2))
                if val < best[0]:
                    best = (val, r)
        return best

    oracle_val, _ = grid_best(steps=721)
    t_opt = tgt.points.mean(0) - pose.rotation @ src.points.mean(0)
    solver_val = float(np.sum((src.points @ pose.rotation.T + t_opt - tgt.points) ** 2))
    assert solver_val <= oracle_val + 1e-6


def test_procrustes_too_few():
    rng = np.random.default_rng(3)
    pts = PointCloud(rng.normal(size=(5, 3)))
    with pytest.raises(TooFewCorrespondencesError):
        procrustes(CorrespondenceSet([0, 1], [0, 1], [1.0, 1.0]), pts, pts)


def test_procrustes_collinear_degenerate():
    pts = np.zeros((5, 3))
    pts[:, 0] = np.arange(5.0)
    cloud = PointCloud(pts)
    with pytest.raises(DegenerateConfigurationError):
        procrustes(exact_corr(5), cloud, cloud)


@pytest.mark.parametrize("seed", range(20))
def test_procrustes_exactness_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 51))
    src = PointCloud(rng.normal(size=(n, 3)))
    gt = sample_random_transform(EulerRanges.full_rotation(), rng)
    tgt = apply(gt, src)
    w = rng.uniform(0.1, 3.0, size=n)
    pose = procrustes(exact_corr(n, w), src, tgt)
    assert small_angle_error_rad(pose.rotation, gt.rotation) <= 1e-9
    assert np.linalg.norm(pose.translation - gt.translation) <= 1e-9


def test_svd3_matches_reconstruction():
    rng = np.random.default_rng(4)
    for _ in range(200):
        h = rng.normal(size=(3, 3))
        u, s, v = _svd3(h)
        assert np.abs(u @ np.diag(s) @ v.T - h).max() < 1e-12
        assert np.abs(u.T @ u - np.eye(3)).max() < 1e-12
        assert np.abs(v.T @ v - np.eye(3)).max() < 1e-12
        assert s[0] >= s[1] >= s[2] >= 0


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------

def test_icp_converges_immediately_from_gt():
    rng = np.random.default_rng(5)
    src = PointCloud(rng.uniform(-1, 1, size=(200, 3)))
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    tgt = apply(gt, src)
    result = icp(src, tgt, init=gt, max_iters=20)
    assert result.converged
    assert result.diagnostics["iterations"] == 1
    assert small_angle_error_rad(result.pose.rotation, gt.rotation) < 1e-9
    assert np.abs(result.pose.translation - gt.translation).max() < 1e-9


def test_icp_recovers_small_perturbation():
    rng = np.random.default_rng(6)
    src = sample_surface(make_widget(0), 500, rng).without_normals()
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    tgt = apply(gt, src)
    perturb = compose(
        RigidTransform(rotation_about_axis(1, 5.0), np.array([0.05, 0.0, -0.05])), gt
    )
    result = icp(src, tgt, init=perturb, max_iters=60)
    assert rotation_error(result.pose.rotation, gt.rotation) < 0.5


def test_icp_wrong_basin_exposed_by_rms():
    rng = np.random.default_rng(7)
    src = sample_surface(make_widget(1), 400, rng).without_normals()
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    tgt = apply(gt, src)
    flipped = compose(gt, RigidTransform(rotation_about_axis(2, 180.0), np.zeros(3)))
    good = icp(src, tgt, init=gt, max_iters=40)
    bad = icp(src, tgt, init=flipped, max_iters=40)
    assert bad.inlier_rms > 10.0 * max(good.inlier_rms, 1e-9)


def test_icp_empty_cloud():
    with pytest.raises(ValueError):
        icp(PointCloud(np.empty((0, 3))), PointCloud(np.zeros((4, 3))))


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

BENCH_CONFIG = RegisterConfig(
    fpfh_radius=0.45,
    normal_k=24,
    epsilon=0.01,
    sinkhorn_iters=100,
    hard_threshold=0.001,
    target_ratio=1.0,
)


def test_register_exact_rigid_copy():
    rng = np.random.default_rng(8)
    mesh = make_widget(17)
    src = sample_surface(mesh, 700, rng).without_normals()
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    tgt = apply(gt, src)
    result = register(src, tgt, BENCH_CONFIG)
    assert rotation_error(result.pose.rotation, gt.rotation) < 1.0
    assert np.linalg.norm(result.pose.translation - gt.translation) < 0.02


def test_register_deterministic():
    mesh = make_widget(18)
    src, tgt, _ = make_synthetic_pair(mesh, EulerRanges.rot45(), 512, 400, 5)
    a = register(src, tgt, BENCH_CONFIG)
    b = register(src, tgt, BENCH_CONFIG)
    assert np.array_equal(a.pose.rotation, b.pose.rotation)
    assert np.array_equal(a.pose.translation, b.pose.translation)
    assert a.correspondence_count == b.correspondence_count


def test_register_no_correspondences():
    # two unrelated tiny clouds with zero descriptor signal
    rng = np.random.default_rng(9)
    src = PointCloud(rng.uniform(-1, 1, size=(40, 3)))
    tgt = PointCloud(rng.uniform(-1, 1, size=(40, 3)) + 100.0)
    with pytest.raises(NoCorrespondencesError):
        register(src, tgt, RegisterConfig(hard_threshold=0.9, icp_refine=False))


def test_register_mesh_source():
    mesh = make_widget(19)
    rng = np.random.default_rng(10)
    base = sample_surface(mesh, 1024, rng)
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    tgt = partial_crop(apply(gt, base), 768, rng)
    result = register(mesh, tgt, BENCH_CONFIG)
    assert rotation_error(result.pose.rotation, gt.rotation) < 5.0


def test_register_equivariant_to_exact_target_rotation():
    # Pre-rotating the target by an axis permutation (exact in floats) must
    # rotate the recovered pose identically; voxel hashing is not
    # rotation-equivariant, so the property is tested with voxel off.
    mesh = make_widget(20)
    src, tgt, _ = make_synthetic_pair(mesh, EulerRanges.rot45(), 512, 420, 13)
    q = RigidTransform(rotation_about_axis(2, 90.0), np.zeros(3))
    config = RegisterConfig(
        fpfh_radius=0.45,
        normal_k=24,
        epsilon=0.01,
        sinkhorn_iters=60,
        hard_threshold=0.001,
        target_ratio=1.0,
        voxel=False,
    )
    a = register(src, tgt, config)
    b = register(src, apply(q, tgt), config)
    expected = compose(q, a.pose)
    assert np.abs(b.pose.rotation - expected.rotation).max() < 1e-6
    assert np.abs(b.pose.translation - expected.translation).max() < 1e-6


# ---------------------------------------------------------------------------
# SVD gradient probe
# ---------------------------------------------------------------------------

def test_probe_matches_finite_differences():
    rng = np.random.default_rng(11)
    g = rng.normal(size=(3, 3))
    report = svd_gradient_probe(np.diag([3.0, 2.0, 1.0]), g)
    fd_direct = report.finite_difference_norm
    total = np.linalg.norm(report.total_gradient)
    assert abs(total - fd_direct) / fd_direct < 1e-4


def test_probe_gap_ratio_100x():
    n1 = svd_gradient_probe(gap_probe_matrix(1e-3)).analytic_gradient_norm
    n0 = svd_gradient_probe(gap_probe_matrix(1e-1)).analytic_gradient_norm
    assert n1 / n0 == pytest.approx(100.0, rel=0.1)


def test_probe_slope_minus_one():
    gaps = [1e-1, 1e-2, 1e-3, 1e-4]
    norms = [svd_gradient_probe(gap_probe_matrix(g)).analytic_gradient_norm for g in gaps]
    slope = fit_loglog_slope(gaps, norms)
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_probe_exactly_repeated_singular_values():
    report = svd_gradient_probe(np.diag([1.0, 1.0, 0.5]))
    assert report.unbounded
    assert report.analytic_gradient_norm == math.inf
    assert np.isfinite(report.finite_difference_norm)


def test_probe_rejects_rank_deficient():
    with pytest.raises(ValueError):
        svd_gradient_probe(np.diag([1.0, 1.0, 0.0]))


def test_probe_gap_reported():
    report = svd_gradient_probe(gap_probe_matrix(0.01))
    assert report.singular_gap == pytest.approx(0.01, rel=1e-9)
    assert np.all(np.diff(report.singular_values) <= 0)
