"""Handcrafted per-point features and the descriptor score map.

Normals come from k-NN covariance analysis; the 33-bin fast point
feature histogram is the classic Darboux-angle construction (three
angle features, 11 bins each, neighbor-weighted aggregation). The score
map is the cosine similarity between descriptors: histogram magnitudes
carry no signal, so descriptors are unit-normalized before the inner
product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .neighbors import knn_indices, radius_pairs
from .pointcloud import PointCloud

F64: TypeAlias = np.float64
ScoreMap: TypeAlias = NDArray[F64]  # (M, N), rows = source points

FPFH_BINS = 11
FPFH_DIM = 3 * FPFH_BINS

_DEGENERATE_EIG_TOL = 1e-10


@dataclass(frozen=True)
class DescriptorSet:
    """Per-point feature vectors aligned with their cloud by index."""

    vectors: NDArray[F64]  # (N, D)
    isolated: NDArray[np.bool_]  # True where the point had no neighbors

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("vectors must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("descriptors must be finite")
        flags = np.asarray(self.isolated, dtype=bool)
        if flags.shape != (len(v),):
            raise ValueError("isolated flags must match vector count")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "isolated", flags)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def estimate_normals(
    pc: PointCloud, k: int = 16, viewpoint=None
) -> tuple[PointCloud, NDArray[np.bool_]]:
    """Per-point normals from the k-NN covariance; returns (cloud, degenerate).

    The normal is the smallest-eigenvalue eigenvector of each point's
    k-neighborhood covariance. Signs are oriented toward ``viewpoint``
    when given (sensor position for scans), otherwise outward along the
    centroid-to-point ray (mesh-model convention). Neighborhoods whose
    covariance does not define a plane (collinear or coincident points)
    get the +z normal and a True flag.
    """
    n = len(pc)
    if not 3 <= k < n:
        raise ValueError(f"need |pc| > k >= 3, got |pc|={n}, k={k}")
    neigh = knn_indices(pc.points, pc.points, k + 1)  # self lands in column 0
    local = pc.points[neigh]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / (k + 1)

    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = eigvecs[:, :, 0].copy()
    scale = eigvals[:, 2]
    degenerate = eigvals[:, 1] <= _DEGENERATE_EIG_TOL * np.maximum(scale, 1e-300)
    degenerate |= scale <= 0.0
    normals[degenerate] = (0.0, 0.0, 1.0)

    if viewpoint is not None:
        toward = np.asarray(viewpoint, dtype=np.float64) - pc.points
    else:
        toward = pc.points - pc.points.mean(axis=0)
    flip = (np.einsum("ij,ij->i", normals, toward) < 0.0) & ~degenerate
    normals[flip] *= -1.0

    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pc.points, normals), degenerate


def _pair_angle_features(p, n_p, q, n_q):
    """Darboux-frame angle triplet (alpha, phi, theta) for point pairs.

    Per pair, the point whose normal makes the smaller angle with the
    connecting line acts as the frame source; this makes the triplet
    symmetric in the pair, so each unordered pair is computed once.
    """
    d = q - p
    dist = np.linalg.norm(d, axis=1)
    dist = np.maximum(dist, 1e-300)
    d_unit = d / dist[:, None]

    dot_p = np.einsum("ij,ij->i", n_p, d_unit)
    dot_q = np.einsum("ij,ij->i", n_q, d_unit)
    # Tie epsilon: symmetric geometry (e.g. sphere chords) makes the two
    # angles exactly equal, and round-off must not flip the frame choice
    # between a cloud and its rigidly moved copy.
    swap = np.abs(dot_q) > np.abs(dot_p) + 1e-9

    u = np.where(swap[:, None], n_q, n_p)
    n_other = np.where(swap[:, None], n_p, n_q)
    d_src = np.where(swap[:, None], -d_unit, d_unit)
    phi = np.where(swap, -dot_q, dot_p)

    v = np.cross(d_src, u)
    v_norm = np.linalg.norm(v, axis=1)
    v_norm = np.maximum(v_norm, 1e-300)
    v /= v_norm[:, None]
    w = np.cross(u, v)

    alpha = np.einsum("ij,ij->i", v, n_other)
    theta = np.arctan2(np.einsum("ij,ij->i", w, n_other), np.einsum("ij,ij->i", u, n_other))
    return alpha, phi, theta


def _bin_triplet(alpha, phi, theta) -> NDArray[np.int64]:
    """Bin each angle feature into [0, 11) and offset per 11-bin block."""
    b_alpha = np.clip(((alpha + 1.0) * 0.5 * FPFH_BINS).astype(np.int64), 0, FPFH_BINS - 1)
    b_phi = np.clip(((phi + 1.0) * 0.5 * FPFH_BINS).astype(np.int64), 0, FPFH_BINS - 1)
    b_theta = np.clip(
        (((theta + np.pi) / (2.0 * np.pi)) * FPFH_BINS).astype(np.int64), 0, FPFH_BINS - 1
    )
    return b_alpha, b_phi + FPFH_BINS, b_theta + 2 * FPFH_BINS


def fpfh(pc: PointCloud, radius: float) -> DescriptorSet:
    """33-bin fast point feature histograms over a fixed search radius.

    Simplified point histograms are accumulated per point, then blended
    with inverse-distance-weighted neighbor histograms and L1-normalized
    per 11-bin block. Points with no neighbor inside ``radius`` get a
    zero descriptor and an isolation flag instead of an error.
    """
    if pc.normals is None:
        raise ValueError("fpfh requires normals; run estimate_normals first")
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(pc)
    ia, jb, dist = radius_pairs(pc.points, pc.points, radius)
    keep = ia < jb  # one record per unordered pair
    ia, jb, dist = ia[keep], jb[keep], dist[keep]

    spfh = np.zeros((n, FPFH_DIM))
    counts = np.zeros(n)
    if len(ia):
        alpha, phi, theta = _pair_angle_features(
            pc.points[ia], pc.normals[ia], pc.points[jb], pc.normals[jb]
        )
        for bins in _bin_triplet(alpha, phi, theta):
            np.add.at(spfh, (ia, bins), 1.0)
            np.add.at(spfh, (jb, bins), 1.0)
        np.add.at(counts, ia, 1.0)
        np.add.at(counts, jb, 1.0)

    fused = spfh.copy()
    if len(ia):
        w = 1.0 / np.maximum(dist, 1e-12)
        np.add.at(fused, ia, (w / counts[ia])[:, None] * spfh[jb])
        np.add.at(fused, jb, (w / counts[jb])[:, None] * spfh[ia])

    isolated = counts == 0
    vectors = np.zeros((n, FPFH_DIM))
    for block in range(3):
        sl = slice(block * FPFH_BINS, (block + 1) * FPFH_BINS)
        mass = fused[:, sl].sum(axis=1)
        ok = mass > 0
        vectors[ok, sl] = fused[ok, sl] / mass[ok, None]
    vectors[isolated] = 0.0
    return DescriptorSet(vectors, isolated)


def score_map(fx: DescriptorSet, fy: DescriptorSet) -> ScoreMap:
    """Cosine-similarity score map; zero descriptors score 0 everywhere."""
    if fx.dim != fy.dim:
        raise ValueError(f"descriptor dims differ: {fx.dim} vs {fy.dim}")

    def unit(v):
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        return np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)

    return unit(fx.vectors) @ unit(fy.vectors).T
