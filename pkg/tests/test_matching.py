import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regkit.matching import (
    AssignmentPlan,
    CorrespondenceSet,
    augment_scores,
    bin_marginals,
    select_hard,
    select_weighted,
    sinkhorn,
    softmax_rows,
)


def naive_sinkhorn(scores, bin_score, passes, epsilon):
    """Straightforward probability-domain alternating scaling oracle."""
    m, n = scores.shape
    a, b = bin_marginals(m, n)
    p = np.exp(augment_scores(scores, bin_score) / epsilon)
    for _ in range(passes):
        rs = p.sum(axis=1)
        scale = np.where(rs > 0, a / np.where(rs > 0, rs, 1.0), 1.0)
        p *= scale[:, None]
        cs = p.sum(axis=0)
        scale = np.where(cs > 0, b / np.where(cs > 0, cs, 1.0), 1.0)
        p *= scale[None, :]
    return p


# ---------------------------------------------------------------------------
# softmax rows
# ---------------------------------------------------------------------------

def test_softmax_uniform_row():
    plan = softmax_rows(np.zeros((2, 5)))
    assert np.allclose(plan.interior, 0.2)
    assert np.all(plan.matrix[:, -1] == 0.0)
    assert np.all(plan.matrix[-1, :] == 0.0)


def test_softmax_dominant_entry():
    s = np.full((1, 4), -10.0)
    s[0, 2] = 10.0
    plan = softmax_rows(s, temperature=1.0)
    assert plan.interior[0, 2] > 0.999


def test_softmax_high_temperature_recovers_uniform():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(3, 7))
    plan = softmax_rows(s, temperature=1e9)
    assert np.abs(plan.interior - 1.0 / 7.0).max() < 1e-6


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ValueError):
        softmax_rows(np.zeros((2, 2)), temperature=0.0)


# ---------------------------------------------------------------------------
# sinkhorn
# ---------------------------------------------------------------------------

def test_sinkhorn_1x1_forced_match():
    plan = sinkhorn(np.array([[2.0]]), bin_score=-np.inf, iters=10)
    assert plan.matrix[0, 0] == pytest.approx(1.0)
    assert plan.matrix[0, 1] == 0.0
    assert plan.matrix[1, 0] == 0.0


def test_sinkhorn_symmetric_2x2():
    plan = sinkhorn(np.zeros((2, 2)), bin_score=0.0, iters=100)
    m = plan.matrix
    assert np.abs(m[0, 0] - m[1, 1]).max() < 1e-12
    assert np.abs(m[0, 1] - m[1, 0]).max() < 1e-12


def test_sinkhorn_matches_naive_oracle_3x3():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(3, 3))
    plan = sinkhorn(s, bin_score=0.0, iters=200, epsilon=0.1)
    oracle = naive_sinkhorn(s, 0.0, plan.iterations, 0.1)
    assert np.abs(plan.matrix - oracle).max() < 1e-8


def test_sinkhorn_marginals_on_random_64x64():
    # Convergence to 1e-6 within 300 passes holds at the protocol epsilon
    # (0.1); sharper temperatures converge but much more slowly on this
    # problem class, so they are exercised by the structural test below.
    rng = np.random.default_rng(2)
    for _ in range(5):
        s = rng.uniform(0, 1, size=(64, 64))
        plan = sinkhorn(s, bin_score=0.0, iters=300, epsilon=0.1)
        assert plan.converged
        assert plan.marginal_violation < 1e-6
        # verify against actual sums
        assert np.abs(plan.matrix[:-1].sum(axis=1) - 1.0).max() < 1e-6
        assert np.abs(plan.matrix[:, :-1].sum(axis=0) - 1.0).max() < 2e-6


def test_sinkhorn_sharp_epsilon_structure():
    rng = np.random.default_rng(12)
    s = rng.uniform(0, 1, size=(64, 64))
    plan = sinkhorn(s, bin_score=0.0, iters=300, epsilon=0.05)
    m = plan.matrix
    tol = max(plan.marginal_violation, 1e-6) * 1.01
    assert np.abs(m[:-1].sum(axis=1) - 1.0).max() <= tol
    assert np.abs(m[:, :-1].sum(axis=0) - 1.0).max() <= tol


def test_sinkhorn_rectangular_marginals():
    # Rectangular maps converge slowly at this size; the invariant under
    # test is the marginal structure at the reported violation, not speed.
    rng = np.random.default_rng(3)
    s = rng.normal(size=(12, 7))
    plan = sinkhorn(s, bin_score=0.0, iters=300, epsilon=0.1)
    m = plan.matrix
    tol = max(plan.marginal_violation, 1e-6) * 1.01
    assert np.abs(m[:-1].sum(axis=1) - 1.0).max() <= tol  # interior rows
    assert np.abs(m[:, :-1].sum(axis=0) - 1.0).max() <= tol  # interior cols
    # bins absorb the slack
    assert m[:-1, -1].sum() + m[-1, -1] == pytest.approx(12.0, abs=20 * tol)
    assert m[-1, :-1].sum() + m[-1, -1] == pytest.approx(7.0, abs=20 * tol)


def test_sinkhorn_permutation_equivariant_bitwise():
    rng = np.random.default_rng(4)
    for _ in range(10):
        s = rng.normal(size=(13, 9))
        perm = rng.permutation(13)
        a = sinkhorn(s, 0.0, iters=80, epsilon=0.1)
        b = sinkhorn(s[perm], 0.0, iters=80, epsilon=0.1)
        full = np.concatenate([perm, [13]])
        assert a.iterations == b.iterations
        assert np.array_equal(a.matrix[full], b.matrix)


def test_sinkhorn_reports_nonconvergence():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(16, 16))
    plan = sinkhorn(s, bin_score=0.0, iters=2, epsilon=0.01)
    assert not plan.converged
    assert plan.iterations == 2
    assert np.isfinite(plan.marginal_violation)


def test_sinkhorn_parameter_validation():
    with pytest.raises(ValueError):
        sinkhorn(np.zeros((2, 2)), iters=0)
    with pytest.raises(ValueError):
        sinkhorn(np.zeros((2, 2)), epsilon=-1.0)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def permutation_plan(n=4, value=0.9):
    m = np.zeros((n + 1, n + 1))
    for i in range(n):
        m[i, (i + 1) % n] = value
        m[i, :n] += (1.0 - value) / n  # small uniform leak
        m[i, (i + 1) % n] -= (1.0 - value) / n
    return AssignmentPlan(np.abs(m))


def test_select_weighted_identity_plan():
    plan = permutation_plan()
    corr = select_weighted(plan)
    picked = {(i, j) for i, j, _ in corr.pairs()}
    assert {(i, (i + 1) % 4) for i in range(4)} <= picked


def test_select_weighted_split_row():
    m = np.zeros((2, 3))
    m[0, 0] = m[0, 1] = 0.5
    plan = AssignmentPlan(m)
    corr = select_weighted(plan)
    assert set(corr.pairs()) == {(0, 0, 0.5), (0, 1, 0.5)}


def test_select_weighted_all_mass_in_bins():
    m = np.zeros((3, 3))
    m[:-1, -1] = 1.0
    m[-1, :-1] = 1.0
    plan = AssignmentPlan(m)
    assert len(select_weighted(plan)) == 0


def test_select_hard_permutation():
    corr = select_hard(permutation_plan(), threshold=0.3)
    assert sorted(zip(corr.source_indices, corr.target_indices)) == [
        (0, 1), (1, 2), (2, 3), (3, 0),
    ]


def test_select_hard_bin_dominated_row_unmatched():
    m = np.zeros((3, 3))
    m[0, 0] = 0.9
    m[1, 1] = 0.4
    m[1, -1] = 0.6  # bin beats the best interior value of row 1
    plan = AssignmentPlan(m)
    corr = select_hard(plan, threshold=0.3)
    assert list(corr.source_indices) == [0]


def test_select_hard_mutual_only():
    # both sources prefer target 0; only the mutual pair survives
    m = np.zeros((3, 3))
    m[0, 0] = 0.8
    m[1, 0] = 0.7
    m[1, 1] = 0.6
    plan = AssignmentPlan(m)
    corr = select_hard(plan, threshold=0.5)
    assert list(zip(corr.source_indices, corr.target_indices)) == [(0, 0)]


def test_select_hard_threshold_bounds():
    with pytest.raises(ValueError):
        select_hard(permutation_plan(), threshold=0.0)
    with pytest.raises(ValueError):
        select_hard(permutation_plan(), threshold=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_hard_injective_and_monotone(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(8, 6))
    plan = sinkhorn(s, 0.0, iters=60, epsilon=0.1)
    previous = None
    for threshold in (0.1, 0.3, 0.5, 0.7):
        corr = select_hard(plan, threshold)
        assert len(set(corr.source_indices)) == len(corr)
        assert len(set(corr.target_indices)) == len(corr)
        pairs = set(zip(corr.source_indices, corr.target_indices))
        if previous is not None:
            assert pairs <= previous  # raising threshold never adds pairs
        previous = pairs


# ---------------------------------------------------------------------------
# outlier rejection on synthetic score maps
# ---------------------------------------------------------------------------

def synthetic_outlier_problem(rng, n=60, outlier_fraction=0.3, margin=1.0, noise=0.2):
    """Score map with a known inlier permutation and strongly negative
    outlier rows; mirrors the score distribution the selection stage sees."""
    n_out = int(round(outlier_fraction * n))
    n_in = n - n_out
    perm = rng.permutation(n)
    scores = rng.normal(0.0, noise, size=(n, n))
    for i in range(n_in):
        scores[i, perm[i]] = margin + abs(rng.normal(0.0, noise))
    scores[n_in:, :] -= 5.0  # injected outlier rows
    return scores, perm, n_in


def test_hard_selection_recall_and_outlier_rejection():
    rng = np.random.default_rng(7)
    recalls, leaks = [], []
    for _ in range(20):
        scores, perm, n_in = synthetic_outlier_problem(rng)
        plan = sinkhorn(scores, bin_score=0.0, iters=200, epsilon=0.1)
        corr = select_hard(plan, threshold=0.5)
        got = dict(zip(corr.source_indices, corr.target_indices))
        hits = sum(1 for i in range(n_in) if got.get(i) == perm[i])
        recalls.append(hits / n_in)
        leaks.append(sum(1 for i in corr.source_indices if i >= n_in) / max(1, len(scores) - n_in))
    assert np.mean(recalls) >= 0.95
    assert np.mean(leaks) <= 0.05
