"""Rigid-motion algebra, Euler-range sampling, and pose error metrics.

Conventions
-----------
- Rotations are 3x3 proper orthonormal matrices; transforms act as
  ``p -> R @ p + t``.
- Angles are degrees at the API surface and radians internally.
- Randomly sampled rotations compose per-axis Euler rotations in the
  fixed order X then Y then Z (``R = Rz @ Ry @ Rx``), i.e. the rotation
  about x is applied first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .pointcloud import PointCloud

F64: TypeAlias = np.float64
Mat3: TypeAlias = NDArray[F64]  # shape (3, 3)
Vec3: TypeAlias = NDArray[F64]  # shape (3,)

ROTATION_TOL = 1e-9

AxisBounds: TypeAlias = tuple[float, float]


def _as_array(x, shape) -> NDArray[F64]:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("entries must be finite")
    return a


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Normalize a seed-or-generator argument to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def is_rotation(m, tol: float = ROTATION_TOL) -> bool:
    """True if ``m`` is orthonormal with determinant +1 within ``tol``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if np.abs(m.T @ m - np.eye(3)).max() > tol:
        return False
    return abs(float(np.linalg.det(m)) - 1.0) <= tol


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``p -> rotation @ p + translation``."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3))
        t = _as_array(self.translation, (3,))
        if not is_rotation(r):
            raise ValueError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def to_matrix(self) -> NDArray[F64]:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def rotation_about_axis(axis: int, angle_deg: float) -> Mat3:
    """Rotation matrix about a coordinate axis (0=x, 1=y, 2=z)."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    m = np.eye(3)
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    m[i, i] = c
    m[j, j] = c
    m[i, j] = -s
    m[j, i] = s
    return m


def rotation_xyz(angles_deg) -> Mat3:
    """Compose per-axis rotations in the toolkit's fixed X-then-Y-then-Z order."""
    ax, ay, az = (float(v) for v in angles_deg)
    return (
        rotation_about_axis(2, az)
        @ rotation_about_axis(1, ay)
        @ rotation_about_axis(0, ax)
    )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform satisfying ``compose(a, b).apply(p) == a.apply(b.apply(p))``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def transform_points(t: RigidTransform, points) -> NDArray[F64]:
    """Apply the transform to an (N, 3) coordinate array."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ t.rotation.T + t.translation


def apply(t: RigidTransform, pc: PointCloud) -> PointCloud:
    """Transform a cloud; normals rotate, point count and order are preserved."""
    normals = pc.normals @ t.rotation.T if pc.normals is not None else None
    return PointCloud(transform_points(t, pc.points), normals)


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

def rotation_error(pred: Mat3, gt: Mat3) -> float:
    """Geodesic rotation error in degrees, in [0, 180].

    The arccos argument is clamped to [-1, 1] so round-off near identity
    or half-turn poses cannot produce NaN.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    arg = (float(np.trace(pred.T @ gt)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, arg))))


def translation_error_sq(pred, gt) -> float:
    """Squared Euclidean distance between translation vectors."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(d @ d)


def translation_error_norm(pred, gt) -> float:
    """Euclidean distance between translation vectors (used for cm thresholds)."""
    return math.sqrt(translation_error_sq(pred, gt))


def translation_mse(pred, gt) -> float:
    """Mean over the 3 components of the squared difference."""
    return translation_error_sq(pred, gt) / 3.0


# ---------------------------------------------------------------------------
# Random transform sampling
# ---------------------------------------------------------------------------

def _check_bounds(bounds, what: str) -> tuple[AxisBounds, AxisBounds, AxisBounds]:
    out = []
    for axis, (lo, hi) in enumerate(bounds):
        lo, hi = float(lo), float(hi)
        if lo > hi:
            raise ValueError(f"{what} axis {axis}: min {lo} > max {hi}")
        out.append((lo, hi))
    if len(out) != 3:
        raise ValueError(f"{what} needs bounds for exactly 3 axes")
    return tuple(out)


@dataclass(frozen=True)
class EulerRanges:
    """Per-axis rotation bounds (degrees) and translation bounds."""

    rotation_deg: tuple[AxisBounds, AxisBounds, AxisBounds]
    translation: tuple[AxisBounds, AxisBounds, AxisBounds]

    def __post_init__(self):
        object.__setattr__(self, "rotation_deg", _check_bounds(self.rotation_deg, "rotation"))
        object.__setattr__(self, "translation", _check_bounds(self.translation, "translation"))

    @staticmethod
    def zero() -> "EulerRanges":
        z = ((0.0, 0.0),) * 3
        return EulerRanges(z, z)

    @staticmethod
    def rot45(translation: float = 0.5) -> "EulerRanges":
        """Benchmark default: rotation in [0, 45] deg per axis."""
        return EulerRanges(
            ((0.0, 45.0),) * 3,
            ((-translation, translation),) * 3,
        )

    @staticmethod
    def full_rotation(translation: float = 0.5) -> "EulerRanges":
        """Full viewpoint coverage: x, z in [-180, 180], y in [-90, 90] deg."""
        return EulerRanges(
            ((-180.0, 180.0), (-90.0, 90.0), (-180.0, 180.0)),
            ((-translation, translation),) * 3,
        )


def sample_random_transform(
    ranges: EulerRanges, seed: int | np.random.Generator | None
) -> RigidTransform:
    """Draw Euler angles and translation uniformly per axis within bounds."""
    rng = make_rng(seed)
    angles = [rng.uniform(lo, hi) for lo, hi in ranges.rotation_deg]
    trans = np.array([rng.uniform(lo, hi) for lo, hi in ranges.translation])
    return RigidTransform(rotation_xyz(angles), trans)
