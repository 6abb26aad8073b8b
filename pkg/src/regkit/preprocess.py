"""Data processing for registration: normalization, voxelization, cropping.

The normalization convention: the source cloud is centered on its
bounding-box center and isotropically scaled so its largest absolute
coordinate is 1; the target is mean-centered and scaled by the same
factor. Isotropic scaling keeps the ground-truth motion rigid, so poses
solved in normalized space map exactly back to original units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import EmptyCloudError
from .geometry import EulerRanges, RigidTransform, apply, make_rng, sample_random_transform
from .mesh import TriangleMesh, sample_surface
from .neighbors import knn_indices
from .pointcloud import PointCloud

F64: TypeAlias = np.float64
Vec3: TypeAlias = NDArray[F64]


@dataclass(frozen=True)
class NormalizationRecord:
    """Scale and offsets needed to map a normalized-space pose back."""

    scale: float
    source_offset: Vec3
    target_offset: Vec3

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "source_offset", np.asarray(self.source_offset, dtype=np.float64))
        object.__setattr__(self, "target_offset", np.asarray(self.target_offset, dtype=np.float64))

    @staticmethod
    def identity() -> "NormalizationRecord":
        return NormalizationRecord(1.0, np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class VoxelParams:
    """Voxel edge length (normalized units) and target/source count ratio."""

    voxel_size: float = 0.05
    target_ratio: float = 0.75

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must be in (0, 1]")


def normalize_pair(
    source: PointCloud, target: PointCloud
) -> tuple[PointCloud, PointCloud, NormalizationRecord]:
    """Center and scale both clouds into a shared normalized frame.

    Source: bounding-box centered, scaled so max |coordinate| = 1.
    Target: mean-centered, then scaled by the source's scale factor.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloudError("normalize_pair needs non-empty clouds")
    src_offset = 0.5 * (source.points.min(axis=0) + source.points.max(axis=0))
    centered = source.points - src_offset
    max_abs = float(np.abs(centered).max())
    scale = 1.0 / max_abs if max_abs > 0 else 1.0

    tgt_offset = target.points.mean(axis=0)
    src_norm = PointCloud(centered * scale, source.normals)
    tgt_norm = PointCloud((target.points - tgt_offset) * scale, target.normals)
    return src_norm, tgt_norm, NormalizationRecord(scale, src_offset, tgt_offset)


def denormalize_pose(pose: RigidTransform, rec: NormalizationRecord) -> RigidTransform:
    """Map a pose solved in normalized space back to original units.

    With s = scale, cs/ct the offsets, a normalized pose (R, t) sends
    s*(x - cs) to s*(y - ct); the original-space pose is therefore
    (R, t/s + ct - R @ cs).
    """
    translation = pose.translation / rec.scale + rec.target_offset - pose.rotation @ rec.source_offset
    return RigidTransform(pose.rotation, translation)


def normalize_pose(pose: RigidTransform, rec: NormalizationRecord) -> RigidTransform:
    """Inverse of :func:`denormalize_pose`; maps an original-units pose in."""
    translation = (pose.translation - rec.target_offset + pose.rotation @ rec.source_offset) * rec.scale
    return RigidTransform(pose.rotation, translation)


def voxel_downsample(pc: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, ordered by lexicographic voxel key.

    Normals are dropped: downstream descriptor stages re-estimate them
    from the resampled geometry.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(pc) == 0:
        return PointCloud(np.empty((0, 3)))
    keys = np.floor(pc.points / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pc.points)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    return PointCloud(sums / counts[:, None])


def enforce_count_ratio(
    source_ds: PointCloud,
    target_ds: PointCloud,
    params: VoxelParams,
    seed: int | np.random.Generator | None,
) -> tuple[PointCloud, PointCloud]:
    """Subsample the target so it has at most ratio * |source| points."""
    if len(source_ds) == 0 or len(target_ds) == 0:
        raise EmptyCloudError("enforce_count_ratio needs non-empty clouds")
    budget = int(np.floor(params.target_ratio * len(source_ds)))
    if len(target_ds) <= budget:
        return source_ds, target_ds
    rng = make_rng(seed)
    keep = np.sort(rng.choice(len(target_ds), size=budget, replace=False))
    return source_ds, target_ds.subset(keep)


def partial_crop(
    pc: PointCloud, keep: int, seed: int | np.random.Generator | None
) -> PointCloud:
    """Seeded random point plus its ``keep - 1`` nearest neighbors.

    Output is ordered by (distance to the seed point, index), so the seed
    point itself comes first.
    """
    if keep > len(pc):
        raise ValueError(f"cannot keep {keep} of {len(pc)} points")
    if keep < 1:
        raise ValueError("keep must be >= 1")
    rng = make_rng(seed)
    anchor = int(rng.integers(len(pc)))
    idx = knn_indices(pc.points[anchor : anchor + 1], pc.points, keep)[0]
    return pc.subset(idx)


def make_synthetic_pair(
    mesh: TriangleMesh,
    ranges: EulerRanges,
    n_sample: int,
    n_keep: int,
    seed: int | np.random.Generator | None,
) -> tuple[PointCloud, PointCloud, RigidTransform]:
    """Partial-to-partial pair: crops of a sampled surface and its rigid copy.

    Both clouds derive from the same ``n_sample``-point surface sample;
    the target is a crop of the transformed sample taken around an
    independently chosen anchor. The returned transform maps source
    coordinates onto target coordinates.
    """
    rng = make_rng(seed)
    base = sample_surface(mesh, n_sample, rng)
    gt = sample_random_transform(ranges, rng)
    source = partial_crop(base, n_keep, rng)
    target = partial_crop(apply(gt, base), n_keep, rng)
    return source, target, gt
