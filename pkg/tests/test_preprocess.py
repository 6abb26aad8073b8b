import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regkit.errors import EmptyCloudError
from regkit.geometry import EulerRanges, RigidTransform, apply, sample_random_transform, transform_points
from regkit.matching import CorrespondenceSet
from regkit.mesh import make_widget, sample_surface
from regkit.pointcloud import PointCloud
from regkit.preprocess import (
    NormalizationRecord,
    VoxelParams,
    denormalize_pose,
    enforce_count_ratio,
    make_synthetic_pair,
    normalize_pair,
    normalize_pose,
    partial_crop,
    voxel_downsample,
)
from regkit.solver import procrustes


def random_cloud(rng, n=50, scale=1.0):
    return PointCloud(rng.uniform(-scale, scale, size=(n, 3)))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_normalize_source_touching_bounds_keeps_scale():
    pts = np.array([[-1.0, 0, 0], [1.0, 0, 0], [0, 0.5, 0], [0, 0, -0.25]])
    src, _, rec = normalize_pair(PointCloud(pts), PointCloud(pts))
    assert rec.scale == pytest.approx(1.0)
    assert np.abs(src.points).max() == pytest.approx(1.0)


def test_normalize_scales_by_half_for_pm2():
    pts = np.array([[-2.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    src, _, rec = normalize_pair(PointCloud(pts), PointCloud(pts))
    assert rec.scale == pytest.approx(0.5)
    assert np.abs(src.points).max() == pytest.approx(1.0)


def test_normalize_target_mean_is_zero():
    rng = np.random.default_rng(0)
    source = random_cloud(rng)
    target = PointCloud(rng.uniform(5, 9, size=(40, 3)))
    _, tgt, _ = normalize_pair(source, target)
    assert np.abs(tgt.points.mean(axis=0)).max() < 1e-9


def test_normalize_empty_cloud_raises():
    with pytest.raises(EmptyCloudError):
        normalize_pair(PointCloud(np.empty((0, 3))), PointCloud(np.zeros((1, 3))))


def test_denormalize_identity_record():
    pose = sample_random_transform(EulerRanges.rot45(), 0)
    out = denormalize_pose(pose, NormalizationRecord.identity())
    assert np.array_equal(out.rotation, pose.rotation)
    assert np.array_equal(out.translation, pose.translation)


def exact_corr(n):
    return CorrespondenceSet(np.arange(n), np.arange(n), np.ones(n))


@pytest.mark.parametrize("seed", range(5))
def test_normalize_solve_denormalize_round_trip(seed):
    # Solve in normalized space from exact correspondences; the recovered
    # pose mapped back must equal the original-units ground truth.
    rng = np.random.default_rng(seed)
    source = PointCloud(rng.uniform(-3, 7, size=(60, 3)))
    gt = sample_random_transform(EulerRanges.full_rotation(2.0), rng)
    target = apply(gt, source)
    src_n, tgt_n, rec = normalize_pair(source, target)
    solved = procrustes(exact_corr(60), src_n, tgt_n)
    back = denormalize_pose(solved, rec)
    assert np.abs(back.rotation - gt.rotation).max() < 1e-9
    assert np.abs(back.translation - gt.translation).max() < 1e-9 * max(1.0, 1.0 / rec.scale)


def test_denormalize_point_equivalence_scale_half():
    rng = np.random.default_rng(3)
    source = PointCloud(rng.uniform(-2, 2, size=(100, 3)))
    gt = sample_random_transform(EulerRanges.rot45(), rng)
    target = apply(gt, source)
    src_n, tgt_n, rec = normalize_pair(source, target)
    pose_n = normalize_pose(gt, rec)
    # normalized pose must send normalized source points onto normalized targets
    moved = transform_points(pose_n, src_n.points)
    assert np.abs(moved - tgt_n.points).max() < 1e-9
    # and denormalizing recovers the original mapping on all sample points
    back = denormalize_pose(pose_n, rec)
    assert np.abs(transform_points(back, source.points) - target.points).max() < 1e-9


# ---------------------------------------------------------------------------
# voxel downsampling
# ---------------------------------------------------------------------------

def test_voxel_merges_points_to_centroid():
    pc = PointCloud(np.array([[0.01, 0, 0], [0.02, 0, 0]]))
    out = voxel_downsample(pc, 0.1)
    assert len(out) == 1
    assert np.allclose(out.points[0], [0.015, 0, 0])


def test_voxel_preserves_far_points():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(64, 3))
    pts = pts[np.lexsort(pts.T)]
    # points farther apart than voxel * sqrt(3) can never share a voxel
    voxel = 0.01
    out = voxel_downsample(PointCloud(pts), voxel)
    assert len(out) == len(pts)


def test_voxel_idempotent_when_no_merge():
    pc = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]]))
    once = voxel_downsample(pc, 0.1)
    twice = voxel_downsample(once, 0.1)
    assert np.array_equal(np.sort(once.points, axis=0), np.sort(twice.points, axis=0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_voxel_keys_unique_and_cover_inputs(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(200, 3))
    voxel = 0.25
    out = voxel_downsample(PointCloud(pts), voxel)
    keys_out = np.floor(out.points / voxel).astype(np.int64)
    # container voxels are unique...
    assert len(np.unique(keys_out, axis=0)) == len(keys_out)
    # ...and every input point's voxel is represented
    keys_in = np.unique(np.floor(pts / voxel).astype(np.int64), axis=0)
    merged = {tuple(k) for k in keys_out}
    assert {tuple(k) for k in keys_in} <= merged


def test_voxel_bijection_of_identical_clouds():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(300, 3))
    a = voxel_downsample(PointCloud(pts), 0.1)
    b = voxel_downsample(PointCloud(pts.copy()), 0.1)
    d = np.linalg.norm(a.points[:, None] - b.points[None, :], axis=2)
    fwd = d.argmin(axis=1)
    bwd = d.argmin(axis=0)
    assert np.all(bwd[fwd] == np.arange(len(a)))  # 100% mutual-NN match rate


# ---------------------------------------------------------------------------
# count ratio and cropping
# ---------------------------------------------------------------------------

def test_ratio_unchanged_when_under_budget():
    rng = np.random.default_rng(0)
    src, tgt = random_cloud(rng, 1000), random_cloud(rng, 500)
    _, out = enforce_count_ratio(src, tgt, VoxelParams(0.05, 0.75), 0)
    assert len(out) == 500


def test_ratio_subsamples_to_budget():
    rng = np.random.default_rng(0)
    src, tgt = random_cloud(rng, 1000), random_cloud(rng, 900)
    _, out = enforce_count_ratio(src, tgt, VoxelParams(0.05, 0.75), 0)
    assert len(out) == 750


def test_ratio_deterministic():
    rng = np.random.default_rng(0)
    src, tgt = random_cloud(rng, 1000), random_cloud(rng, 900)
    _, a = enforce_count_ratio(src, tgt, VoxelParams(0.05, 0.75), 42)
    _, b = enforce_count_ratio(src, tgt, VoxelParams(0.05, 0.75), 42)
    assert np.array_equal(a.points, b.points)


def test_partial_crop_full_keep_is_whole_cloud():
    rng = np.random.default_rng(2)
    pc = random_cloud(rng, 64)
    out = partial_crop(pc, 64, 0)
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, pc.points))


def test_partial_crop_counts():
    rng = np.random.default_rng(3)
    pc = random_cloud(rng, 1024)
    out = partial_crop(pc, 768, 0)
    assert len(out) == 768


def test_partial_crop_is_nearest_neighborhood():
    rng = np.random.default_rng(4)
    pc = random_cloud(rng, 200)
    out = partial_crop(pc, 50, 9)
    anchor = out.points[0]  # output ordered by distance from the seed point
    kept = {tuple(p) for p in out.points}
    d_kept = max(np.linalg.norm(p - anchor) for p in out.points)
    discarded = [p for p in pc.points if tuple(p) not in kept]
    assert all(np.linalg.norm(p - anchor) >= d_kept - 1e-12 for p in discarded)


def test_partial_crop_too_many_raises():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        partial_crop(random_cloud(rng, 10), 11, 0)


# ---------------------------------------------------------------------------
# synthetic pairs
# ---------------------------------------------------------------------------

def test_synthetic_pair_zero_ranges():
    mesh = make_widget(0)
    source, target, gt = make_synthetic_pair(mesh, EulerRanges.zero(), 256, 128, 0)
    assert np.allclose(gt.rotation, np.eye(3))
    assert np.allclose(gt.translation, 0.0)
    # target is a crop of the same sampled cloud
    src_set = {tuple(np.round(p, 12)) for p in sample_surface(mesh, 256, np.random.default_rng(0)).points}
    assert all(tuple(np.round(p, 12)) in src_set for p in target.points)


def test_synthetic_pair_default_protocol_sizes():
    mesh = make_widget(1)
    source, target, gt = make_synthetic_pair(mesh, EulerRanges.rot45(), 1024, 768, 3)
    assert len(source) == 768
    assert len(target) == 768


def test_synthetic_pair_target_lies_on_surface():
    mesh = make_widget(2)
    source, target, gt = make_synthetic_pair(mesh, EulerRanges.rot45(), 512, 256, 7)
    from regkit.geometry import invert

    back = transform_points(invert(gt), target.points)
    # each back-transformed target point satisfies some face's plane equation
    tri = mesh.triangles()
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 0
    normals = normals[ok] / norms[ok, None]
    offsets = np.einsum("fi,fi->f", normals, tri[ok, 0])
    dist = np.abs(back @ normals.T - offsets)
    assert dist.min(axis=1).max() < 1e-9


def test_synthetic_pair_deterministic():
    mesh = make_widget(3)
    a = make_synthetic_pair(mesh, EulerRanges.rot45(), 256, 128, 11)
    b = make_synthetic_pair(mesh, EulerRanges.rot45(), 256, 128, 11)
    assert np.array_equal(a[0].points, b[0].points)
    assert np.array_equal(a[1].points, b[1].points)
    assert np.array_equal(a[2].rotation, b[2].rotation)
