import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sparselqr.errors import BadRadius, PartitionMismatch, WrongKind
from sparselqr.sparsity import (Ball, BallKind, BlockPartition, Regularizer, RegKind,
                                ball_value, g_value, log_penalty, nnz, project, project_block,
                                project_l0, project_l1, prox, shrink, shrink_block,
                                shrink_block_weighted, shrink_weighted, update_weights)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
ROW_PAIR = BlockPartition((1,), (2, 2))


def vectors(max_size=12):
    return st.integers(1, max_size).flatmap(lambda k: arrays(np.float64, (1, k), elements=finite))


# -- partition ------------------------------------------------------------------

def test_partition_basics():
    part = BlockPartition.uniform(2, 2, 3)
    assert part.shape == (4, 6) and part.grid_shape == (2, 2)
    K = np.arange(24.0).reshape(4, 6)
    norms = part.block_norms(K)
    for i, j in itertools.product(range(2), range(2)):
        assert norms[i, j] == pytest.approx(np.linalg.norm(K[part.block_slices(i, j)]))
    mask = part.diagonal_mask()
    assert mask.sum() == 12 and mask[0, 0] and not mask[0, 3]
    with pytest.raises(PartitionMismatch):
        part.block_norms(np.ones((3, 6)))
    with pytest.raises(PartitionMismatch):
        BlockPartition((0,), (1,))


# -- regularizer values -----------------------------------------------------------

def test_g_value_examples():
    K = np.array([[2.0, -0.5]])
    assert g_value(K, Regularizer(RegKind.L1)) == 2.5
    assert g_value(np.array([[3.0, 0.0, 0.0, 1.0]]), Regularizer(RegKind.BLOCK_L1),
                   ROW_PAIR) == 4.0
    ones = Regularizer(RegKind.WEIGHTED_L1, weights=np.ones((1, 2)))
    assert g_value(K, ones) == 2.5
    assert g_value(np.zeros((2, 2)), Regularizer()) == 0.0
    with pytest.raises(PartitionMismatch):
        g_value(K, Regularizer(RegKind.BLOCK_L1))


def test_log_penalty_is_majorized_by_weighted_norm():
    rng = np.random.default_rng(0)
    reg = Regularizer(RegKind.WEIGHTED_L1, epsilon=1e-2)
    for _ in range(50):
        K = rng.standard_normal((3, 4)) * (rng.random((3, 4)) > 0.3)
        K2 = K + 0.3 * rng.standard_normal(K.shape)
        w = update_weights(K, reg)
        lhs = log_penalty(K2, reg) - log_penalty(K, reg)
        rhs = g_value(K2, w) - g_value(K, w)
        assert lhs <= rhs + 1e-12


# -- shrinkage --------------------------------------------------------------------

@pytest.mark.parametrize("x, a, expected", [
    ([2.0, -0.5, 1.0], 1.0, [1.0, 0.0, 0.0]),
    ([2.0, -0.5, 1.0], 0.0, [2.0, -0.5, 1.0]),
    ([1.25], 0.1, [1.15]),
])
def test_shrink_examples(x, a, expected):
    np.testing.assert_allclose(shrink(np.array([x]), a), [expected], atol=1e-15)


@pytest.mark.parametrize("block, a, expected", [
    ([3.0, 0.0], 1.0, [2.0, 0.0]),
    ([0.0, 0.0], 0.7, [0.0, 0.0]),
    ([3.0, 4.0], 5.0, [0.0, 0.0]),
])
def test_shrink_block_examples(block, a, expected):
    part = BlockPartition((1,), (2,))
    out = shrink_block(np.array([block]), a, part)
    np.testing.assert_allclose(out, [expected], atol=1e-15)
    assert np.all(np.isfinite(out))


def test_weighted_shrink_examples():
    K = np.array([[1.0, -2.0, 0.3]])
    np.testing.assert_array_equal(shrink_weighted(K, 0.1, np.ones_like(K)), shrink(K, 0.1))
    out = shrink_weighted(K, 0.01, np.array([[1e4, 1.0, 1.0]]))
    assert out[0, 0] == 0.0 and out[0, 1] != 0.0
    reg = update_weights(np.array([[1e3]]), Regularizer(RegKind.WEIGHTED_L1, epsilon=1e-4))
    assert shrink_weighted(np.array([[1e3]]), 1.0, reg.weights)[0, 0] != 0.0
    part = BlockPartition((1,), (2, 1))
    Kb = np.array([[3.0, 4.0, 1.0]])
    np.testing.assert_allclose(shrink_block_weighted(Kb, 1.0, np.ones((1, 2)), part),
                               shrink_block(Kb, 1.0, part))


def test_update_weights():
    reg = Regularizer(RegKind.WEIGHTED_L1, epsilon=1e-4)
    W = update_weights(np.array([[1.0, 0.0]]), reg).weights
    np.testing.assert_allclose(W, [[1 / 1.0001, 1e4]])
    W0 = update_weights(np.zeros((2, 2)), reg).weights
    np.testing.assert_array_equal(W0, np.full((2, 2), 1e4))
    W1 = update_weights(np.array([[2.0, 0.5]]), reg).weights
    assert not np.array_equal(W1, update_weights(np.array([[1.0, 0.5]]), reg).weights)
    assert reg.weights is None  # the input value is not mutated
    with pytest.raises(WrongKind):
        update_weights(np.ones((1, 1)), Regularizer(RegKind.L1))
    blk = update_weights(np.array([[3.0, 4.0, 0.0, 0.0]]),
                         Regularizer(RegKind.WEIGHTED_BLOCK_L1, epsilon=1e-4), ROW_PAIR)
    np.testing.assert_allclose(blk.weights, [[1 / 5.0001, 1e4]])


@settings(max_examples=60, deadline=None)
@given(x=finite, a=st.floats(0, 10))
def test_shrink_is_prox_of_scaled_abs(x, a):
    # grid oracle: argmin_z 0.5 (z - x)^2 + a |z|
    z = shrink(np.array([[x]]), a)[0, 0]
    grid = np.linspace(x - a - 1, x + a + 1, 20001)
    obj = lambda t: 0.5 * (t - x) ** 2 + a * np.abs(t)
    assert obj(z) <= obj(grid).min() + 1e-9


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 4), elements=finite), st.floats(0, 5))
def test_prox_dispatch(K, t):
    part = BlockPartition((1, 1), (2, 2))
    np.testing.assert_array_equal(prox(K, t, Regularizer(RegKind.L1)), shrink(K, t))
    np.testing.assert_array_equal(prox(K, t, Regularizer(RegKind.BLOCK_L1), part),
                                  shrink_block(K, t, part))


# -- projections -------------------------------------------------------------------

def test_l0_examples():
    np.testing.assert_array_equal(project_l0(np.array([[3.0, -1.0, 2.0]]), 2), [[3.0, 0.0, 2.0]])
    K = np.array([[0.0, 5.0, 0.0, -1.0]])
    np.testing.assert_array_equal(project_l0(K, 3), K)
    # ties go to the lowest row-major index
    np.testing.assert_array_equal(project_l0(np.array([[1.0, -1.0, 1.0]]), 2),
                                  [[1.0, -1.0, 0.0]])
    with pytest.raises(BadRadius):
        project_l0(K, 0)
    with pytest.raises(BadRadius):
        project_l0(K, 5)


def test_l0_mask_counts_only_marked_entries():
    K = np.array([[5.0, 1.0, 2.0, 3.0]])
    mask = np.array([[False, True, True, True]])
    np.testing.assert_array_equal(project_l0(K, 1, mask), [[5.0, 0.0, 0.0, 3.0]])


@pytest.mark.parametrize("x, s, expected", [
    ([3.0, 1.0], 2.0, [2.0, 0.0]),
    ([0.5, 0.3], 2.0, [0.5, 0.3]),
    ([2.0, 2.0], 2.0, [1.0, 1.0]),
    ([-2.0, 1.0], 3.0, [-2.0, 1.0]),
])
def test_l1_examples(x, s, expected):
    np.testing.assert_allclose(project_l1(np.array([x]), s), [expected], atol=1e-15)


def test_block_examples():
    out = project_block(np.array([[3.0, 0.0, 0.0, 1.0]]), 2.0, ROW_PAIR)
    np.testing.assert_allclose(out, [[2.0, 0.0, 0.0, 0.0]], atol=1e-15)
    K = np.array([[0.3, 0.4, 0.0, 0.1]])
    np.testing.assert_array_equal(project_block(K, 1.0, ROW_PAIR), K)
    with pytest.raises(BadRadius):
        project_block(K, 0.0, ROW_PAIR)


def test_ball_validation_and_dispatch():
    with pytest.raises(BadRadius):
        Ball(BallKind.L0, 2.5)
    with pytest.raises(BadRadius):
        Ball(BallKind.L1, -1.0)
    K = np.array([[3.0, -1.0, 2.0, 0.5]])
    assert ball_value(K, Ball("l0", 2)) == 4
    np.testing.assert_array_equal(project(K, Ball("l0", 2)), project_l0(K, 2))
    np.testing.assert_array_equal(project(K, Ball("l1", 2.0)), project_l1(K, 2.0))
    np.testing.assert_array_equal(project(K, Ball("block_l1", 2.0), ROW_PAIR),
                                  project_block(K, 2.0, ROW_PAIR))


def test_boundary_input_returned_unchanged():
    K = np.array([[1.5, -0.5]])
    np.testing.assert_array_equal(project_l1(K, 2.0), K)
    np.testing.assert_array_equal(project_block(np.array([[3.0, 4.0, 0, 0]]), 5.0, ROW_PAIR),
                                  [[3.0, 4.0, 0, 0]])


@settings(max_examples=100, deadline=None)
@given(vectors(), st.floats(0.01, 100))
def test_l1_projection_properties(x, s):
    p = project_l1(x, s)
    assert np.abs(p).sum() <= s + 1e-10 * max(1.0, s)
    if np.abs(x).sum() > s:
        assert np.abs(p).sum() == pytest.approx(s, rel=1e-10, abs=1e-10)
    np.testing.assert_allclose(project_l1(p, s), p, atol=1e-12)
    assert np.all(p * x >= 0)


@settings(max_examples=100, deadline=None)
@given(vectors(), vectors(), st.floats(0.01, 100))
def test_l1_nonexpansive(x, y, s):
    if x.shape != y.shape:
        return
    d = np.linalg.norm(project_l1(x, s) - project_l1(y, s))
    assert d <= np.linalg.norm(x - y) + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 4), elements=finite), arrays(np.float64, (2, 4), elements=finite),
       st.floats(0.01, 50))
def test_block_projection_properties(x, y, s):
    part = BlockPartition((1, 1), (2, 2))
    px = project_block(x, s, part)
    assert part.block_norms(px).sum() <= s + 1e-10 * max(1.0, s)
    np.testing.assert_allclose(project_block(px, s, part), px, atol=1e-12)
    assert np.linalg.norm(px - project_block(y, s, part)) <= np.linalg.norm(x - y) + 1e-12
    # each block is a non-negative multiple of its input block
    for i, j in itertools.product(range(2), range(2)):
        b, pb = x[part.block_slices(i, j)], px[part.block_slices(i, j)]
        assert np.all(b * pb >= 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), st.integers(1, 6))
def test_l0_projection_properties(x, s):
    p = project_l0(x, s)
    assert nnz(p) <= s
    kept = p != 0
    np.testing.assert_array_equal(p[kept], x[kept])
    np.testing.assert_array_equal(project_l0(p, s), p)


def test_l1_local_optimality():
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.standard_normal((1, 8)) * 3
        s = 0.5 * np.abs(x).sum()
        p = project_l1(x, s)
        base = np.linalg.norm(p - x)
        for _ in range(10):
            q = p + 1e-3 * rng.standard_normal(p.shape)
            if np.abs(q).sum() <= s:
                assert np.linalg.norm(q - x) >= base - 1e-15
