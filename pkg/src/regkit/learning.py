"""Training-side recipe at toy scale: ground-truth assignments, NLL loss
over the bin-augmented plan, batch-normalization modes, and a linear
encoder trained with hand-derived gradients through an unrolled Sinkhorn.

The encoder is deliberately minimal (one linear map over fixed geometric
point features): it exercises the supervision recipe, not representation
learning. Gradients are backpropagated by hand through NLL, the
fixed-depth Sinkhorn unroll, the cosine score map, batch normalization,
and the linear layer; a finite-difference check pins them to 1e-4.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from .descriptors import estimate_normals, fpfh
from .errors import TrainingDivergedError
from .geometry import RigidTransform, make_rng, transform_points
from .matching import (
    AssignmentPlan,
    _logsumexp_cols_sorted,
    _logsumexp_rows,
    augment_scores,
    bin_marginals,
)
from .pointcloud import PointCloud

F64: TypeAlias = np.float64

NLL_EPS = 1e-9
BN_EPS = 1e-7
POINT_FEATURE_DIM = 3 + 3 + 33  # coordinates + normal + histogram descriptor


# ---------------------------------------------------------------------------
# Ground-truth assignment construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthAssignment:
    """Binary (M+1)x(N+1) matrix; bins mark points without a counterpart."""

    matrix: NDArray[F64]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
            raise ValueError("assignment must be (M+1, N+1)")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("assignment entries must be 0 or 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_ones(self) -> int:
        return int(self.matrix.sum())

    @property
    def interior(self) -> NDArray[F64]:
        return self.matrix[:-1, :-1]


def build_gt_assignment(
    source: PointCloud,
    target: PointCloud,
    gt: RigidTransform,
    threshold: float = 0.05,
) -> GroundTruthAssignment:
    """Distance-thresholded correspondence matrix with outlier bins.

    The source is moved by the ground-truth pose, pairs closer than
    ``threshold`` become candidates, and a forward-backward (mutual
    nearest, ties broken toward the lower index) check enforces a
    bijection. Unmatched points light up their bin entry instead.
    """
    moved = transform_points(gt, source.points)
    diff = moved[:, None, :] - target.points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    fwd = dist.argmin(axis=1)  # argmin resolves ties toward the lower index
    bwd = dist.argmin(axis=0)
    rows = np.arange(len(source))
    mutual = bwd[fwd] == rows
    close = dist[rows, fwd] < threshold
    matched = mutual & close

    m = np.zeros((len(source) + 1, len(target) + 1))
    m[rows[matched], fwd[matched]] = 1.0
    m[rows[~matched], -1] = 1.0
    unmatched_cols = np.setdiff1d(np.arange(len(target)), fwd[matched])
    m[-1, unmatched_cols] = 1.0
    return GroundTruthAssignment(m)


def nll_loss(plan: AssignmentPlan | NDArray[F64], gt: GroundTruthAssignment | NDArray[F64]) -> float:
    """Mean negative log likelihood of the plan at the ground-truth cells."""
    p = plan.matrix if isinstance(plan, AssignmentPlan) else np.asarray(plan, dtype=np.float64)
    g = gt.matrix if isinstance(gt, GroundTruthAssignment) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"plan shape {p.shape} != assignment shape {g.shape}")
    if np.any(p < 0):
        raise ValueError("plan entries must be non-negative")
    ones = g > 0
    count = int(ones.sum())
    if count == 0:
        raise ValueError("assignment has no ground-truth cells")
    return float(-(np.log(p[ones] + NLL_EPS)).sum() / count)


# ---------------------------------------------------------------------------
# Batch normalization with selectable statistics mode
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-feature statistics; mode picks current-batch vs running stats."""

    mode: str = "current"  # "current" | "running"
    momentum: float = 0.1
    running_mean: NDArray[F64] | None = None
    running_var: NDArray[F64] | None = None

    def __post_init__(self):
        if self.mode not in ("current", "running"):
            raise ValueError(f"unknown batchnorm mode '{self.mode}'")


def batchnorm_forward(x: NDArray[F64], state: BatchNormState, training: bool) -> NDArray[F64]:
    """Normalize a (batch, features) array per feature.

    Current mode uses this batch's mean and population variance in both
    training and evaluation. Running mode normalizes with batch stats
    during training (updating the running estimates by ``momentum``) and
    with the running estimates during evaluation.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("batchnorm expects a (batch, features) array")
    use_batch_stats = state.mode == "current" or training
    if use_batch_stats and len(x) < 2:
        raise ValueError("batch statistics need a batch size of at least 2")

    if state.mode == "running" and state.running_mean is None:
        state.running_mean = np.zeros(x.shape[1])
        state.running_var = np.ones(x.shape[1])

    if use_batch_stats:
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # population form
        if state.mode == "running" and training:
            m = state.momentum
            state.running_mean = (1.0 - m) * state.running_mean + m * mean
            state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean
        var = state.running_var
    return (x - mean) / np.sqrt(var + BN_EPS)


def _batchnorm_backward(x: NDArray[F64], d_out: NDArray[F64]) -> NDArray[F64]:
    """Gradient through current-batch normalization (population variance)."""
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    std = np.sqrt(var + BN_EPS)
    xhat = (x - mean) / std
    return (d_out - d_out.mean(axis=0) - xhat * (d_out * xhat).mean(axis=0)) / std


# ---------------------------------------------------------------------------
# Differentiable building blocks (forward caches for hand-written backprop)
# ---------------------------------------------------------------------------

def _unit_rows_forward(x: NDArray[F64]) -> tuple[NDArray[F64], NDArray[F64]]:
    norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-30)
    return x / norms, norms


def _unit_rows_backward(unit, norms, d_unit) -> NDArray[F64]:
    return (d_unit - unit * (unit * d_unit).sum(axis=1, keepdims=True)) / norms


def sinkhorn_unrolled_forward(
    scores: NDArray[F64], bin_score: float, iters: int, epsilon: float
) -> tuple[NDArray[F64], dict]:
    """Fixed-depth log-domain Sinkhorn, caching per-step inputs for backprop.

    Matches :func:`regkit.matching.sinkhorn` step for step (same helpers,
    same marginals) but never stops early, which keeps the computation a
    smooth, fixed composition suitable for exact differentiation.
    """
    m_dim, n_dim = scores.shape
    a, b = bin_marginals(m_dim, n_dim)
    log_a, log_b = np.log(a), np.log(b)
    z = augment_scores(scores, bin_score) / epsilon

    steps = []
    for _ in range(iters):
        row_lse = _logsumexp_rows(z)
        z_pre_col = z - (row_lse - log_a)[:, None]
        col_lse = _logsumexp_cols_sorted(z_pre_col)
        z_next = z_pre_col - (col_lse - log_b)[None, :]
        steps.append((z, row_lse, z_pre_col, col_lse))
        z = z_next
    plan = np.exp(z)
    cache = {"steps": steps, "plan": plan, "epsilon": epsilon, "shape": (m_dim, n_dim)}
    return plan, cache


def sinkhorn_unrolled_backward(cache: dict, d_plan: NDArray[F64]) -> NDArray[F64]:
    """Gradient of the unrolled Sinkhorn w.r.t. the interior score map."""
    dz = d_plan * cache["plan"]
    for z_pre_row, row_lse, z_pre_col, col_lse in reversed(cache["steps"]):
        p_col = np.exp(z_pre_col - col_lse[None, :])
        dz = dz - p_col * dz.sum(axis=0, keepdims=True)
        p_row = np.exp(z_pre_row - row_lse[:, None])
        dz = dz - p_row * dz.sum(axis=1, keepdims=True)
    m_dim, n_dim = cache["shape"]
    return dz[:m_dim, :n_dim] / cache["epsilon"]


# ---------------------------------------------------------------------------
# Toy encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyEncoderConfig:
    embed_dim: int = 8
    learning_rate: float = 2.0
    epochs: int = 50
    sinkhorn_iters: int = 15
    epsilon: float = 0.05
    bin_score: float = 0.0
    gt_threshold: float = 0.05
    batchnorm_mode: str = "current"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "sinkhorn_iters": self.sinkhorn_iters,
            "epsilon": self.epsilon,
            "bin_score": self.bin_score,
            "gt_threshold": self.gt_threshold,
            "batchnorm_mode": self.batchnorm_mode,
            "seed": self.seed,
        }

    def content_hash(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


@dataclass
class ToyEncoder:
    """Linear map from fixed geometric point features to an embedding."""

    weight: NDArray[F64]  # (feature_dim, embed_dim)
    bn: BatchNormState
    config: ToyEncoderConfig
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)

    def embed_pair(
        self, feats_x: NDArray[F64], feats_y: NDArray[F64], training: bool = False
    ) -> tuple[NDArray[F64], NDArray[F64]]:
        """Unit-norm embeddings; batch statistics span both clouds jointly."""
        stacked = np.vstack([feats_x, feats_y]) @ self.weight
        normed = batchnorm_forward(stacked, self.bn, training)
        unit, _ = _unit_rows_forward(normed)
        return unit[: len(feats_x)], unit[len(feats_x):]


def build_point_features(
    cloud: PointCloud, normal_k: int = 8, fpfh_radius: float = 0.3
) -> NDArray[F64]:
    """Fixed per-point geometric feature: coordinate, normal, histogram."""
    k = min(normal_k, len(cloud) - 1)
    with_normals, _ = estimate_normals(cloud, k=k)
    descr = fpfh(with_normals, fpfh_radius)
    return np.hstack([with_normals.points, with_normals.normals, descr.vectors])


def pair_loss_and_grad(
    weight: NDArray[F64],
    feats_x: NDArray[F64],
    feats_y: NDArray[F64],
    gt: GroundTruthAssignment,
    config: ToyEncoderConfig,
) -> tuple[float, NDArray[F64]]:
    """NLL of one pair and its hand-derived gradient w.r.t. the weights.

    Forward: linear -> batchnorm (current stats) -> unit rows -> cosine
    score map -> unrolled Sinkhorn -> NLL against the bin-augmented
    ground truth. The backward pass mirrors each stage exactly.
    """
    n_x = len(feats_x)
    stacked_feats = np.vstack([feats_x, feats_y])
    pre_bn = stacked_feats @ weight
    post_bn = batchnorm_forward(pre_bn, BatchNormState(mode="current"), training=True)
    unit, norms = _unit_rows_forward(post_bn)
    ex, ey = unit[:n_x], unit[n_x:]
    scores = ex @ ey.T

    plan, cache = sinkhorn_unrolled_forward(
        scores, config.bin_score, config.sinkhorn_iters, config.epsilon
    )
    ones = gt.matrix > 0
    count = int(ones.sum())
    loss = float(-(np.log(plan[ones] + NLL_EPS)).sum() / count)

    d_plan = np.where(ones, -1.0 / (count * (plan + NLL_EPS)), 0.0)
    d_scores = sinkhorn_unrolled_backward(cache, d_plan)
    d_ex = d_scores @ ey
    d_ey = d_scores.T @ ex
    d_unit = np.vstack([d_ex, d_ey])
    d_post_bn = _unit_rows_backward(unit, norms, d_unit)
    d_pre_bn = _batchnorm_backward(pre_bn, d_post_bn)
    d_weight = stacked_feats.T @ d_pre_bn
    return loss, d_weight


def train_toy_encoder(
    pairs: list[tuple[PointCloud, PointCloud, RigidTransform]],
    config: ToyEncoderConfig = ToyEncoderConfig(),
    encoder: ToyEncoder | None = None,
    normal_k: int = 8,
    fpfh_radius: float = 0.3,
) -> ToyEncoder:
    """Full-batch gradient descent on the matching NLL.

    Deterministic under the config seed; a non-finite loss aborts with the
    last finite value preserved. Passing ``encoder`` resumes from its
    recorded epoch. The returned encoder carries the per-epoch loss
    history.
    """
    if not pairs:
        raise ValueError("need at least one training pair")

    prepared = []
    for source, target, gt in pairs:
        fx = build_point_features(source, normal_k, fpfh_radius)
        fy = build_point_features(target, normal_k, fpfh_radius)
        assignment = build_gt_assignment(source, target, gt, config.gt_threshold)
        prepared.append((fx, fy, assignment))

    feature_dim = prepared[0][0].shape[1]
    if encoder is None:
        rng = make_rng(config.seed)
        weight = rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(feature_dim, config.embed_dim))
        encoder = ToyEncoder(weight=weight, bn=BatchNormState(mode=config.batchnorm_mode), config=config)

    history = encoder.loss_history

    def diverged(reason: str) -> TrainingDivergedError:
        last = history[-1] if history else float("nan")
        return TrainingDivergedError(reason, last, list(history))

    for _ in range(config.epochs):
        if not np.all(np.isfinite(encoder.weight)):
            raise diverged("encoder weights became non-finite")
        total_loss = 0.0
        total_grad = np.zeros_like(encoder.weight)
        for fx, fy, assignment in prepared:
            try:
                loss, grad = pair_loss_and_grad(encoder.weight, fx, fy, assignment, config)
            except ValueError as exc:  # finite-value checks tripped mid-forward
                raise diverged(f"forward pass became non-finite: {exc}") from exc
            total_loss += loss
            total_grad += grad
        mean_loss = total_loss / len(prepared)
        if not np.isfinite(mean_loss):
            raise diverged("training loss became non-finite")
        history.append(mean_loss)
        encoder.weight = encoder.weight - (config.learning_rate / len(prepared)) * total_grad
        encoder.epoch += 1
    return encoder


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_encoder(encoder: ToyEncoder, path: str | Path) -> None:
    from . import __version__

    state = {
        "version": __version__,
        "config": encoder.config.to_dict(),
        "config_hash": encoder.config.content_hash(),
        "epoch": encoder.epoch,
        "weight": encoder.weight.tolist(),
        "batchnorm": {
            "mode": encoder.bn.mode,
            "momentum": encoder.bn.momentum,
            "running_mean": None if encoder.bn.running_mean is None else encoder.bn.running_mean.tolist(),
            "running_var": None if encoder.bn.running_var is None else encoder.bn.running_var.tolist(),
        },
        "loss_history": encoder.loss_history,
    }
    Path(path).write_text(json.dumps(state, sort_keys=True, indent=2) + "\n")


def load_encoder(path: str | Path) -> ToyEncoder:
    state = json.loads(Path(path).read_text())
    config = ToyEncoderConfig(**state["config"])
    bn_state = state["batchnorm"]
    bn = BatchNormState(
        mode=bn_state["mode"],
        momentum=bn_state["momentum"],
        running_mean=None if bn_state["running_mean"] is None else np.array(bn_state["running_mean"]),
        running_var=None if bn_state["running_var"] is None else np.array(bn_state["running_var"]),
    )
    return ToyEncoder(
        weight=np.array(state["weight"]),
        bn=bn,
        config=config,
        epoch=int(state["epoch"]),
        loss_history=[float(v) for v in state["loss_history"]],
    )
