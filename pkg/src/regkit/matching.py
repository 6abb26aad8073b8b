"""Score map to correspondences: softmax, Sinkhorn with outlier bin, selection.

Marginal convention for the (M+1)x(N+1) transport plan: every interior
row and interior column carries unit budget, the extra row and column
(the outlier bins) carry the slack (N and M respectively), so interior
plan entries read directly as match confidence in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

F64: TypeAlias = np.float64
ScoreMap: TypeAlias = NDArray[F64]

CONVERGENCE_TOL = 1e-6
WEIGHT_CUTOFF = 1e-6


@dataclass(frozen=True)
class AssignmentPlan:
    """Bin-augmented transport plan with solver diagnostics.

    ``matrix`` is (M+1, N+1); the last row/column are the outlier bins.
    ``marginal_violation`` is the max deviation of interior row/column
    sums from 1 at the reported iteration count.
    """

    matrix: NDArray[F64]
    iterations: int = 0
    marginal_violation: float = 0.0
    converged: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
            raise ValueError(f"plan must be (M+1, N+1) with M, N >= 1, got {m.shape}")
        if not np.all(np.isfinite(m)) or m.min() < 0:
            raise ValueError("plan entries must be finite and non-negative")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def interior(self) -> NDArray[F64]:
        return self.matrix[:-1, :-1]


@dataclass(frozen=True)
class CorrespondenceSet:
    """Index pairs with confidence weights, ready for pose solving."""

    source_indices: NDArray[np.int64]
    target_indices: NDArray[np.int64]
    weights: NDArray[F64]

    def __post_init__(self):
        si = np.asarray(self.source_indices, dtype=np.int64)
        ti = np.asarray(self.target_indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if not (si.shape == ti.shape == w.shape) or si.ndim != 1:
            raise ValueError("correspondence arrays must be 1-D and equal length")
        object.__setattr__(self, "source_indices", si)
        object.__setattr__(self, "target_indices", ti)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.source_indices)

    def pairs(self) -> list[tuple[int, int, float]]:
        return list(zip(self.source_indices.tolist(), self.target_indices.tolist(), self.weights.tolist()))


def _check_scores(s) -> NDArray[F64]:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise ValueError(f"score map must be (M, N) with M, N >= 1, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("score map entries must be finite")
    return s


def softmax_rows(s: ScoreMap, temperature: float = 1.0) -> AssignmentPlan:
    """Row-wise softmax plan; outlier bins stay zero."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = _check_scores(s)
    z = s / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    plan = np.zeros((s.shape[0] + 1, s.shape[1] + 1))
    plan[:-1, :-1] = e / e.sum(axis=1, keepdims=True)
    return AssignmentPlan(plan)


def augment_scores(s: ScoreMap, bin_score: float) -> NDArray[F64]:
    """Append the outlier-bin row and column filled with ``bin_score``."""
    s = _check_scores(s)
    out = np.full((s.shape[0] + 1, s.shape[1] + 1), float(bin_score))
    out[:-1, :-1] = s
    return out


def bin_marginals(m: int, n: int) -> tuple[NDArray[F64], NDArray[F64]]:
    """Row and column marginal budgets: interiors 1, bins take the slack."""
    a = np.ones(m + 1)
    a[-1] = float(n)
    b = np.ones(n + 1)
    b[-1] = float(m)
    return a, b


def _logsumexp_rows(z: NDArray[F64]) -> NDArray[F64]:
    """Per-row logsumexp; rows with no mass yield -inf."""
    with np.errstate(invalid="ignore", divide="ignore"):
        m = z.max(axis=1)
        safe = np.where(np.isfinite(m), m, 0.0)
        out = safe + np.log(np.exp(z - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(m), out, -np.inf)


def _logsumexp_cols_sorted(z: NDArray[F64]) -> NDArray[F64]:
    """Per-column logsumexp with value-sorted summation.

    Sorting makes the reduction a function of each column's multiset of
    values, so permuting score-map rows permutes the plan bit-for-bit
    (the permutation-equivariance contract).
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        m = z.max(axis=0)
        safe = np.where(np.isfinite(m), m, 0.0)
        e = np.exp(z - safe[None, :])
        out = safe + np.log(np.sort(e, axis=0).sum(axis=0))
    return np.where(np.isfinite(m), out, -np.inf)


def sinkhorn(
    s: ScoreMap,
    bin_score: float = 0.0,
    iters: int = 100,
    epsilon: float = 0.1,
) -> AssignmentPlan:
    """Log-domain Sinkhorn over the bin-augmented score map.

    Alternates row and column normalization of ``exp(augmented / epsilon)``
    toward the bin marginals, stopping once the max interior-marginal
    violation drops below 1e-6 or ``iters`` passes complete.
    Non-convergence is reported in the result, never raised. A row or
    column with no mass at all (e.g. a -inf bin score on a 1x1 map) is
    left unnormalized rather than producing NaNs.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    s = _check_scores(s)
    m_dim, n_dim = s.shape
    a, b = bin_marginals(m_dim, n_dim)
    log_a, log_b = np.log(a), np.log(b)

    z = np.full((m_dim + 1, n_dim + 1), float(bin_score) / epsilon)
    z[:-1, :-1] = s / epsilon

    completed = 0
    converged = False
    violation = np.inf
    for _ in range(iters):
        row_lse = _logsumexp_rows(z)
        # After the previous column pass the columns sit exactly on their
        # marginals, so the row residual is the full violation.
        violation = float(np.abs(np.exp(row_lse[:-1]) - 1.0).max()) if completed else np.inf
        if completed and violation < CONVERGENCE_TOL:
            converged = True
            break
        shift_r = np.where(np.isfinite(row_lse), row_lse - log_a, 0.0)
        z -= shift_r[:, None]
        col_lse = _logsumexp_cols_sorted(z)
        shift_c = np.where(np.isfinite(col_lse), col_lse - log_b, 0.0)
        z -= shift_c[None, :]
        completed += 1

    plan = np.exp(z)
    if not converged:
        row_sum = plan[:-1].sum(axis=1)
        col_sum = np.sort(plan[:, :-1], axis=0).sum(axis=0)
        violation = float(
            max(np.abs(row_sum - 1.0).max(), np.abs(col_sum - 1.0).max())
        )
    return AssignmentPlan(plan, iterations=completed, marginal_violation=violation, converged=converged)


def select_weighted(plan: AssignmentPlan, cutoff: float = WEIGHT_CUTOFF) -> CorrespondenceSet:
    """Every interior pair above the weight cutoff; duplicates allowed.

    Feeding all weighted pairs to a weighted least-squares pose solve is
    equivalent to matching each source point to its row-weighted target
    barycenter, which is the soft-assignment strategy.
    """
    interior = plan.interior
    si, ti = np.nonzero(interior > cutoff)
    return CorrespondenceSet(si, ti, interior[si, ti])


def select_hard(plan: AssignmentPlan, threshold: float = 0.5) -> CorrespondenceSet:
    """Mutual-best, above-threshold, non-bin pairs; one-to-one by construction.

    A pair (i, j) survives only if it is the argmax of interior row i and
    of interior column j (the forward-backward check), beats both bin
    entries competing for i and j, and carries at least ``threshold``
    mass. An empty result is legal and signals an unregistrable pair.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    interior = plan.interior
    rows = np.arange(interior.shape[0])
    best_j = interior.argmax(axis=1)
    mutual = interior.argmax(axis=0)[best_j] == rows
    value = interior[rows, best_j]
    keep = (
        mutual
        & (value >= threshold)
        & (value > plan.matrix[:-1, -1])  # beats the source row's bin entry
        & (value > plan.matrix[-1, :-1][best_j])  # beats the target column's bin entry
    )
    si = rows[keep]
    return CorrespondenceSet(si, best_j[keep], value[keep])
