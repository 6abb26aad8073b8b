"""Pose solving: weighted Procrustes, ICP, the full registration pipeline,
and the SVD-derivative instability probe.

The 3x3 SVD is computed from a cyclic-Jacobi eigen-decomposition of
H^T H, with the left factor rebuilt by re-orthonormalization; this keeps
the solver dependency-free, bit-deterministic, and accurate to well
below the 1e-9 exactness contract at this matrix size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .descriptors import estimate_normals, fpfh, score_map
from .errors import (
    DegenerateConfigurationError,
    NoCorrespondencesError,
    TooFewCorrespondencesError,
)
from .geometry import RigidTransform, invert, make_rng, rotation_error, transform_points
from .matching import (
    CorrespondenceSet,
    select_hard,
    select_weighted,
    sinkhorn,
    softmax_rows,
)
from .mesh import TriangleMesh, sample_surface
from .neighbors import nearest_neighbors
from .pointcloud import PointCloud
from .preprocess import (
    NormalizationRecord,
    VoxelParams,
    denormalize_pose,
    enforce_count_ratio,
    normalize_pair,
    voxel_downsample,
)

F64: TypeAlias = np.float64
Mat3: TypeAlias = NDArray[F64]

_RANK_TOL = 1e-12


# ---------------------------------------------------------------------------
# 3x3 SVD via Jacobi rotations
# ---------------------------------------------------------------------------

def _jacobi_eigh3(a: Mat3) -> tuple[NDArray[F64], Mat3]:
    """Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.

    Returns (eigenvalues, eigenvectors-as-columns), unsorted. Converges to
    machine precision in a handful of sweeps at this size.
    """
    a = np.array(a, dtype=np.float64)
    v = np.eye(3)
    scale = np.abs(a).max()
    if scale == 0.0:
        return np.zeros(3), v
    for _ in range(30):
        off = abs(a[0, 1]) + abs(a[0, 2]) + abs(a[1, 2])
        if off <= 1e-18 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) <= 1e-20 * scale:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    return np.diag(a).copy(), v


def _svd3(h: Mat3) -> tuple[Mat3, NDArray[F64], Mat3]:
    """SVD of a 3x3 matrix: returns (U, sigma, V) with h = U @ diag(sigma) @ V.T.

    Singular values are non-negative and sorted non-increasing. U is
    completed by Gram-Schmidt plus a cross product so it stays orthonormal
    even when h is rank-deficient; the sign of the last right vector is
    chosen so the factorization identity holds.
    """
    h = np.asarray(h, dtype=np.float64)
    eigvals, vecs = _jacobi_eigh3(h.T @ h)
    order = np.argsort(eigvals)[::-1]
    v = vecs[:, order]

    hv = h @ v
    sigma = np.linalg.norm(hv, axis=0)

    u = np.zeros((3, 3))
    if sigma[0] <= 0.0:
        return np.eye(3), np.zeros(3), v
    u[:, 0] = hv[:, 0] / sigma[0]

    u1 = hv[:, 1] - (u[:, 0] @ hv[:, 1]) * u[:, 0]
    n1 = np.linalg.norm(u1)
    if n1 > _RANK_TOL * sigma[0]:
        u[:, 1] = u1 / n1
    else:
        # Rank 1: any unit vector orthogonal to u0 completes the basis.
        pick = np.eye(3)[np.argmin(np.abs(u[:, 0]))]
        u1 = pick - (u[:, 0] @ pick) * u[:, 0]
        u[:, 1] = u1 / np.linalg.norm(u1)
    u[:, 2] = np.cross(u[:, 0], u[:, 1])

    if u[:, 2] @ hv[:, 2] < 0.0:
        v[:, 2] = -v[:, 2]  # keep sigma[2] >= 0 in h = U S V^T
    sigma[1] = min(sigma[1], sigma[0])
    sigma[2] = min(sigma[2], sigma[1])
    return u, sigma, v


# ---------------------------------------------------------------------------
# Procrustes
# ---------------------------------------------------------------------------

def procrustes(
    corr: CorrespondenceSet, source: PointCloud, target: PointCloud
) -> RigidTransform:
    """Weighted least-squares rigid alignment from correspondences.

    Minimizes sum_k w_k |R x_k + t - y_k|^2 via the SVD of the weighted
    cross-covariance; the determinant correction guarantees a proper
    rotation even for reflection-dominant configurations.
    """
    if len(corr) < 3:
        raise TooFewCorrespondencesError(f"need >= 3 correspondences, got {len(corr)}")
    w = corr.weights
    if np.any(w <= 0):
        raise ValueError("correspondence weights must be positive")
    x = source.points[corr.source_indices]
    y = target.points[corr.target_indices]

    w_sum = float(w.sum())
    x_bar = (w[:, None] * x).sum(axis=0) / w_sum
    y_bar = (w[:, None] * y).sum(axis=0) / w_sum
    h = ((w[:, None] * (x - x_bar)).T @ (y - y_bar)) / w_sum

    u, sigma, v = _svd3(h)
    if sigma[0] <= 0.0 or sigma[1] <= _RANK_TOL * sigma[0]:
        raise DegenerateConfigurationError(
            "correspondences are collinear or coincident; rotation is unconstrained"
        )
    d = math.copysign(1.0, float(np.linalg.det(v @ u.T)))
    r = (v * np.array([1.0, 1.0, d])) @ u.T
    return RigidTransform(r, y_bar - r @ x_bar)


# ---------------------------------------------------------------------------
# Registration results and ICP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistrationResult:
    """Solved pose plus the context needed to audit or re-run the solve."""

    pose: RigidTransform
    normalized_pose: RigidTransform
    correspondence_count: int
    inlier_rms: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def _pose_delta(a: RigidTransform, b: RigidTransform) -> float:
    rot = math.radians(rotation_error(a.rotation, b.rotation))
    return rot + float(np.linalg.norm(a.translation - b.translation))


def _icp_keep(dist: NDArray[F64], trim_factor: float | None) -> NDArray[np.int64]:
    """Indices of correspondences kept this iteration.

    With a trim factor, pairs beyond ``trim_factor * median(distance)``
    are dropped; on partial overlap this stops no-counterpart points from
    dragging the fit. Falls back to everything when too few pairs remain.
    """
    if trim_factor is None:
        return np.arange(len(dist), dtype=np.int64)
    cutoff = trim_factor * max(float(np.median(dist)), 1e-12)
    keep = np.nonzero(dist <= cutoff)[0]
    if len(keep) < max(3, len(dist) // 5):
        return np.arange(len(dist), dtype=np.int64)
    return keep


def icp(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform | None = None,
    max_iters: int = 50,
    tol: float = 1e-6,
    trim_factor: float | None = None,
) -> RegistrationResult:
    """Point-to-point ICP: nearest-neighbor matching + Procrustes updates.

    Stops when the pose update (rotation angle in radians plus translation
    norm) falls below ``tol``. Convergence to a wrong basin is possible
    and intentional to expose; ``inlier_rms`` reveals bad fits.
    ``trim_factor`` enables the standard max-correspondence-distance
    rejection (relative to the median) needed on partial-overlap pairs.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("icp needs non-empty clouds")
    pose = init if init is not None else RigidTransform.identity()

    converged = False
    iterations = 0
    kept = len(source)
    for iterations in range(1, max_iters + 1):
        moved = transform_points(pose, source.points)
        nn_idx, dist = nearest_neighbors(moved, target.points)
        keep = _icp_keep(dist, trim_factor)
        kept = len(keep)
        corr = CorrespondenceSet(keep, nn_idx[keep], np.ones(kept))
        new_pose = procrustes(corr, source, target)
        delta = _pose_delta(new_pose, pose)
        pose = new_pose
        if delta < tol:
            converged = True
            break

    moved = transform_points(pose, source.points)
    _, dist = nearest_neighbors(moved, target.points)
    keep = _icp_keep(dist, trim_factor)
    rms = float(np.sqrt(np.mean(dist[keep] ** 2)))
    return RegistrationResult(
        pose=pose,
        normalized_pose=pose,
        correspondence_count=len(keep),
        inlier_rms=rms,
        converged=converged,
        diagnostics={"iterations": iterations, "tol": tol, "trim_factor": trim_factor},
    )


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegisterConfig:
    """Pipeline toggles and parameters; every field lands in diagnostics.

    The toggles map to the recipe's guidelines: scale normalization,
    same-voxel-size downsampling for correspondence bijection, Sinkhorn
    outlier rejection with hard selection, and ICP refinement. The
    consensus stage re-weights hard-selected pairs by rigidity agreement
    before the Procrustes solve; histogram descriptors at desk-scale
    densities need it, learned descriptors would not.
    """

    normalize: bool = True
    voxel: bool = True
    voxel_size: float = 0.05
    target_ratio: float = 0.75
    normal_k: int = 16
    fpfh_radius: float | None = None  # defaults to 5 * voxel_size
    matcher: str = "sinkhorn"  # "sinkhorn" | "softmax"
    selection: str = "hard"  # "hard" | "weighted"
    bin_score: float = 0.0
    sinkhorn_iters: int = 100
    epsilon: float = 0.1
    softmax_temperature: float = 0.05
    hard_threshold: float = 0.5
    consensus: bool = True  # rigidity-consensus mode selection (hard path only)
    consensus_tau: float | None = None  # defaults to 3 * voxel_size
    consensus_seeds: int = 5
    consensus_min_size: int = 8
    icp_refine: bool = True
    icp_max_iters: int = 30
    icp_tol: float = 1e-6
    icp_trim_factor: float | None = 2.5
    n_sample: int = 1024  # surface samples when the source is a mesh
    target_is_scan: bool = False  # orient target normals toward the sensor origin
    seed: int = 0

    def __post_init__(self):
        if self.matcher not in ("sinkhorn", "softmax"):
            raise ValueError(f"unknown matcher '{self.matcher}'")
        if self.selection not in ("hard", "weighted"):
            raise ValueError(f"unknown selection '{self.selection}'")

    @property
    def descriptor_radius(self) -> float:
        return self.fpfh_radius if self.fpfh_radius is not None else 5.0 * self.voxel_size

    @property
    def consensus_tolerance(self) -> float:
        # correspondence positions are only voxel-accurate, so rigidity
        # agreement must allow roughly two quantization steps per side
        return self.consensus_tau if self.consensus_tau is not None else 3.0 * self.voxel_size

    def to_dict(self) -> dict:
        return {
            "normalize": self.normalize,
            "voxel": self.voxel,
            "voxel_size": self.voxel_size,
            "target_ratio": self.target_ratio,
            "normal_k": self.normal_k,
            "fpfh_radius": self.descriptor_radius,
            "matcher": self.matcher,
            "selection": self.selection,
            "bin_score": self.bin_score,
            "sinkhorn_iters": self.sinkhorn_iters,
            "epsilon": self.epsilon,
            "softmax_temperature": self.softmax_temperature,
            "hard_threshold": self.hard_threshold,
            "consensus": self.consensus,
            "consensus_tau": self.consensus_tolerance,
            "consensus_seeds": self.consensus_seeds,
            "consensus_min_size": self.consensus_min_size,
            "icp_refine": self.icp_refine,
            "icp_max_iters": self.icp_max_iters,
            "icp_tol": self.icp_tol,
            "icp_trim_factor": self.icp_trim_factor,
            "n_sample": self.n_sample,
            "target_is_scan": self.target_is_scan,
            "seed": self.seed,
        }


def _consensus_modes(
    corr: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    tau: float,
    n_seeds: int,
    min_size: int,
) -> list[NDArray[np.int64]]:
    """Candidate mutually-rigid subsets of a correspondence set.

    Pairwise length preservation (|d_source - d_target| < tau) partitions
    the pairs into rigid hypotheses; each of the top-voted seeds greedily
    grows one. Coherent wrong hypotheses (flips onto a quasi-symmetry,
    slides along a face) are themselves rigid, so several modes can
    emerge; the caller disambiguates them by alignment quality.
    """
    n = len(corr)
    if n < min_size:
        return []
    xs = source.points[corr.source_indices]
    ys = target.points[corr.target_indices]
    dx = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=2)
    dy = np.linalg.norm(ys[:, None, :] - ys[None, :, :], axis=2)
    consistent = np.abs(dx - dy) < tau
    votes = consistent.sum(axis=1)
    order = np.lexsort((np.arange(n), -votes))

    modes: list[NDArray[np.int64]] = []
    fallback: list[NDArray[np.int64]] = []
    seen: set[tuple[int, ...]] = set()
    for seed_idx in order[:n_seeds]:
        chosen = [int(seed_idx)]
        for cand in order:
            if cand == seed_idx:
                continue
            if consistent[cand, chosen].mean() >= 0.8:
                chosen.append(int(cand))
        key = tuple(sorted(chosen))
        if key in seen:
            continue
        seen.add(key)
        if len(chosen) >= min_size:
            modes.append(np.array(key, dtype=np.int64))
        elif len(chosen) >= 3:
            fallback.append(np.array(key, dtype=np.int64))
    if not modes and fallback:
        # no hypothesis reached quorum; verify the largest small ones instead
        fallback.sort(key=len, reverse=True)
        return fallback[:2]
    return modes


def register(
    source: PointCloud | TriangleMesh,
    target: PointCloud,
    config: RegisterConfig = RegisterConfig(),
) -> RegistrationResult:
    """Descriptor-based registration following the best-practice recipe.

    Stages: normalize -> voxel downsample (same size) -> count ratio ->
    normals -> histogram descriptors -> score map -> matcher -> selection
    -> Procrustes -> optional ICP refinement -> denormalize. Raises
    NoCorrespondencesError when hard selection rejects everything.
    """
    rng = make_rng(config.seed)
    if isinstance(source, TriangleMesh):
        source = sample_surface(source, config.n_sample, rng)

    if config.normalize:
        src_norm, tgt_norm, rec = normalize_pair(source, target)
    else:
        src_norm, tgt_norm, rec = source, target, NormalizationRecord.identity()

    src_work, tgt_work = src_norm, tgt_norm
    if config.voxel:
        src_work = voxel_downsample(src_work, config.voxel_size)
        tgt_work = voxel_downsample(tgt_work, config.voxel_size)
    params = VoxelParams(config.voxel_size, config.target_ratio)
    src_work, tgt_work = enforce_count_ratio(src_work, tgt_work, params, rng)

    k_src = min(config.normal_k, len(src_work) - 1)
    k_tgt = min(config.normal_k, len(tgt_work) - 1)
    src_n, _ = estimate_normals(src_work, k=k_src)
    scan_origin = -rec.scale * rec.target_offset if config.target_is_scan else None
    tgt_n, _ = estimate_normals(tgt_work, k=k_tgt, viewpoint=scan_origin)

    radius = config.descriptor_radius
    scores = score_map(fpfh(src_n, radius), fpfh(tgt_n, radius))

    if config.matcher == "sinkhorn":
        plan = sinkhorn(scores, config.bin_score, config.sinkhorn_iters, config.epsilon)
    else:
        plan = softmax_rows(scores, config.softmax_temperature)

    if config.selection == "hard":
        corr = select_hard(plan, config.hard_threshold)
    else:
        corr = select_weighted(plan)
    if len(corr) < 3:
        raise NoCorrespondencesError(
            f"selection kept {len(corr)} pair(s), need at least 3; the pair appears unregistrable"
        )

    def refine(cloud_a: PointCloud, cloud_b: PointCloud, init: RigidTransform, iters: int) -> RegistrationResult:
        # For scan targets the scan side moves: every scan point has a model
        # counterpart, so median-relative trimming stays meaningful even
        # when half the model is unobserved.
        if config.target_is_scan:
            inner = icp(
                cloud_b, cloud_a, init=invert(init), max_iters=iters,
                tol=config.icp_tol, trim_factor=config.icp_trim_factor,
            )
            return RegistrationResult(
                pose=invert(inner.pose),
                normalized_pose=invert(inner.pose),
                correspondence_count=inner.correspondence_count,
                inlier_rms=inner.inlier_rms,
                converged=inner.converged,
                diagnostics=inner.diagnostics,
            )
        return icp(
            cloud_a, cloud_b, init=init, max_iters=iters,
            tol=config.icp_tol, trim_factor=config.icp_trim_factor,
        )

    solve_diag: dict = {}
    if config.consensus and config.selection == "hard":
        modes = _consensus_modes(
            corr, src_n, tgt_n, config.consensus_tolerance, config.consensus_seeds, config.consensus_min_size
        )
        best: tuple[float, RigidTransform, RigidTransform, NDArray[np.int64]] | None = None
        for mode in modes:
            subset = CorrespondenceSet(
                corr.source_indices[mode], corr.target_indices[mode], corr.weights[mode]
            )
            try:
                coarse = procrustes(subset, src_n, tgt_n)
                probe = refine(src_work, tgt_work, coarse, 12)
            except (DegenerateConfigurationError, TooFewCorrespondencesError):
                continue
            if best is None or probe.inlier_rms < best[0]:
                best = (probe.inlier_rms, coarse, probe.pose, mode)
        if best is not None:
            # the probe only verifies modes; without ICP refinement the
            # reported pose stays the winning mode's closed-form solve
            normalized_pose = best[2] if config.icp_refine else best[1]
            solve_diag = {"consensus_modes": len(modes), "consensus_size": int(len(best[3]))}
        else:
            normalized_pose = procrustes(corr, src_n, tgt_n)
            solve_diag = {"consensus_modes": 0, "consensus_size": 0}
    else:
        normalized_pose = procrustes(corr, src_n, tgt_n)

    icp_diag: dict = {}
    converged = True
    if config.icp_refine:
        refined = refine(
            src_norm.without_normals(),
            tgt_norm.without_normals(),
            normalized_pose,
            config.icp_max_iters,
        )
        normalized_pose = refined.normalized_pose
        converged = refined.converged
        inlier_rms = refined.inlier_rms
        icp_diag = {"icp_iterations": refined.diagnostics["iterations"]}
    else:
        moved = transform_points(normalized_pose, src_work.points)
        _, dist = nearest_neighbors(moved, tgt_work.points)
        inlier_rms = float(np.sqrt(np.mean(dist**2)))

    pose = denormalize_pose(normalized_pose, rec)
    diagnostics = {
        "config": config.to_dict(),
        "working_sizes": [len(src_work), len(tgt_work)],
        "matcher_iterations": plan.iterations,
        "marginal_violation": plan.marginal_violation,
        "matcher_converged": plan.converged,
        "scale": rec.scale,
        **solve_diag,
        **icp_diag,
    }
    return RegistrationResult(
        pose=pose,
        normalized_pose=normalized_pose,
        correspondence_count=len(corr),
        inlier_rms=inlier_rms,
        converged=converged,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# SVD-derivative instability probe
# ---------------------------------------------------------------------------

DEFAULT_PROBE_DIRECTION = np.array(
    [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
) / math.sqrt(2.0)


@dataclass(frozen=True)
class SvdGradientReport:
    """Gradient magnitudes of a rotation-output loss through a 3x3 SVD.

    ``analytic_gradient_norm`` measures the factor-wise chain-rule terms
    (the quantities scaled by 1/(sigma_j^2 - sigma_i^2)); this is the
    object that blows up as singular values collide. ``total_gradient``
    is their assembled sum, which is what a finite-difference probe of
    the loss observes.
    """

    singular_values: NDArray[F64]
    singular_gap: float
    analytic_gradient_norm: float
    finite_difference_norm: float
    total_gradient: NDArray[F64]
    factor_gradient_u: NDArray[F64]
    factor_gradient_v: NDArray[F64]
    unbounded: bool


def _polar_loss(a: Mat3, direction: Mat3) -> float:
    u, _, v = _svd3(a)
    return float(np.sum((v @ u.T) * direction))


def svd_gradient_probe(matrix, loss_direction=None) -> SvdGradientReport:
    """Differentiate <V U^T, G> through the SVD factor formulas.

    Uses the standard differential with off-diagonal 1/(sigma_j^2 -
    sigma_i^2) coefficients, assembled separately for the U-path and the
    V-path over the 9 canonical input directions. Exactly repeated
    singular values make those coefficients undefined: the report flags
    the case as unbounded while the central finite difference (h = 1e-6)
    of the loss itself is still returned.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError("probe expects a 3x3 matrix")
    g = (
        np.asarray(loss_direction, dtype=np.float64)
        if loss_direction is not None
        else DEFAULT_PROBE_DIRECTION
    )
    u, sigma, v = _svd3(a)
    if sigma[2] <= _RANK_TOL * max(sigma[0], 1.0):
        raise ValueError("probe requires a full-rank matrix")

    gaps = [abs(sigma[i] - sigma[j]) for i in range(3) for j in range(i + 1, 3)]
    gap = float(min(gaps))
    sq_gaps = np.array(
        [sigma[j] ** 2 - sigma[i] ** 2 for i in range(3) for j in range(i + 1, 3)]
    )
    unbounded = bool(np.any(sq_gaps == 0.0))

    h = 1e-6
    fd = np.zeros((3, 3))
    for r in range(3):
        for c in range(3):
            step = np.zeros((3, 3))
            step[r, c] = h
            fd[r, c] = (_polar_loss(a + step, g) - _polar_loss(a - step, g)) / (2.0 * h)
    fd_norm = float(np.linalg.norm(fd))

    if unbounded:
        nan = np.full((3, 3), np.nan)
        return SvdGradientReport(
            singular_values=sigma,
            singular_gap=gap,
            analytic_gradient_norm=math.inf,
            finite_difference_norm=fd_norm,
            total_gradient=nan,
            factor_gradient_u=nan.copy(),
            factor_gradient_v=nan.copy(),
            unbounded=True,
        )

    m = u.T @ g.T @ v  # appears in tr(G^T V Omega U^T) = tr((U^T G^T V) Omega)
    grad_u = np.zeros((3, 3))
    grad_v = np.zeros((3, 3))
    for r in range(3):
        for c in range(3):
            e = np.zeros((3, 3))
            e[r, c] = 1.0
            p = u.T @ e @ v
            omega_u = np.zeros((3, 3))
            omega_v = np.zeros((3, 3))
            for i in range(3):
                for j in range(3):
                    if i == j:
                        continue
                    denom = sigma[j] ** 2 - sigma[i] ** 2
                    omega_u[i, j] = (sigma[j] * p[i, j] + sigma[i] * p[j, i]) / denom
                    omega_v[i, j] = (sigma[i] * p[i, j] + sigma[j] * p[j, i]) / denom
            grad_u[r, c] = -float(np.sum(m.T * omega_u))
            grad_v[r, c] = float(np.sum(m.T * omega_v))

    total = grad_u + grad_v
    analytic_norm = math.hypot(float(np.linalg.norm(grad_u)), float(np.linalg.norm(grad_v)))
    return SvdGradientReport(
        singular_values=sigma,
        singular_gap=gap,
        analytic_gradient_norm=analytic_norm,
        finite_difference_norm=fd_norm,
        total_gradient=total,
        factor_gradient_u=grad_u,
        factor_gradient_v=grad_v,
        unbounded=False,
    )


def gap_probe_matrix(delta: float) -> Mat3:
    """Diagonal probe instance with a controlled sigma_1/sigma_2 collision."""
    return np.diag([1.0, 1.0 - float(delta), 0.5])


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])
