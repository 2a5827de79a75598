"""Sparsity-promoting regularizers, shrinkage operators and ball projections.

All operators act on a gain matrix ``K`` of shape ``(m, n)``. Block variants
take a :class:`BlockPartition` that splits rows by agent input dimension and
columns by agent state dimension.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import BadRadius, PartitionMismatch, WrongKind, DimensionMismatch

DEFAULT_EPSILON = 1e-4

__all__ = [
    "BlockPartition",
    "RegKind",
    "Regularizer",
    "BallKind",
    "Ball",
    "g_value",
    "log_penalty",
    "shrink",
    "shrink_block",
    "shrink_weighted",
    "shrink_block_weighted",
    "prox",
    "update_weights",
    "project_l0",
    "project_l1",
    "project_block",
    "project",
    "ball_value",
    "nnz",
]


@dataclass(frozen=True)
class BlockPartition:
    """Agent block structure of a gain matrix.

    ``row_sizes[i]`` is the input dimension of agent ``i`` and
    ``col_sizes[j]`` the state dimension of agent ``j``.
    """
    row_sizes: tuple
    col_sizes: tuple

    def __post_init__(self):
        rows = tuple(int(r) for r in self.row_sizes)
        cols = tuple(int(c) for c in self.col_sizes)
        if not rows or not cols or min(rows) < 1 or min(cols) < 1:
            raise PartitionMismatch("block sizes must all be >= 1")
        object.__setattr__(self, "row_sizes", rows)
        object.__setattr__(self, "col_sizes", cols)

    @classmethod
    def elementwise(cls, m, n):
        return cls((1,) * m, (1,) * n)

    @classmethod
    def uniform(cls, agents, inputs_per_agent, states_per_agent):
        return cls((inputs_per_agent,) * agents, (states_per_agent,) * agents)

    @property
    def shape(self):
        return (sum(self.row_sizes), sum(self.col_sizes))

    @property
    def grid_shape(self):
        return (len(self.row_sizes), len(self.col_sizes))

    def check(self, K):
        if K.shape != self.shape:
            raise PartitionMismatch(
                f"partition covers {self.shape} but matrix has shape {K.shape}")

    def _starts(self):
        r = np.concatenate(([0], np.cumsum(self.row_sizes)[:-1]))
        c = np.concatenate(([0], np.cumsum(self.col_sizes)[:-1]))
        return r, c

    def block_norms(self, K):
        """Frobenius norm of every block, as a ``grid_shape`` array."""
        self.check(K)
        r, c = self._starts()
        sq = np.add.reduceat(np.add.reduceat(K * K, r, axis=0), c, axis=1)
        return np.sqrt(sq)

    def expand(self, grid):
        """Broadcast a per-block array back to the full matrix shape."""
        grid = np.asarray(grid, dtype=float)
        if grid.shape != self.grid_shape:
            raise PartitionMismatch(
                f"block grid has shape {grid.shape}, expected {self.grid_shape}")
        return np.repeat(np.repeat(grid, self.row_sizes, axis=0), self.col_sizes, axis=1)

    def block_slices(self, i, j):
        r0 = sum(self.row_sizes[:i])
        c0 = sum(self.col_sizes[:j])
        return (slice(r0, r0 + self.row_sizes[i]), slice(c0, c0 + self.col_sizes[j]))

    def diagonal_mask(self):
        """Boolean matrix marking entries inside diagonal blocks (i == j)."""
        p, q = self.grid_shape
        return self.expand(np.eye(p, q)).astype(bool)

    def to_dict(self):
        return {"row_sizes": list(self.row_sizes), "col_sizes": list(self.col_sizes)}


class RegKind(str, Enum):
    L1 = "l1"
    WEIGHTED_L1 = "weighted_l1"
    BLOCK_L1 = "block_l1"
    WEIGHTED_BLOCK_L1 = "weighted_block_l1"

    @property
    def weighted(self):
        return self in (RegKind.WEIGHTED_L1, RegKind.WEIGHTED_BLOCK_L1)

    @property
    def blockwise(self):
        return self in (RegKind.BLOCK_L1, RegKind.WEIGHTED_BLOCK_L1)


@dataclass(frozen=True)
class Regularizer:
    """Sparsity-promoting function G(K).

    For the weighted kinds ``weights`` is an ``(m, n)`` matrix (elementwise)
    or a per-block grid; it is refreshed from the current iterate by
    :func:`update_weights` and never mutated in place.
    """
    kind: RegKind = RegKind.L1
    epsilon: float = DEFAULT_EPSILON
    weights: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be positive and finite")
            object.__setattr__(self, "weights", w)

    def _require_weights(self):
        if self.weights is None:
            raise ValueError(f"{self.kind.value} regularizer has no weights set")
        return self.weights


class BallKind(str, Enum):
    L0 = "l0"
    L1 = "l1"
    BLOCK_L1 = "block_l1"


@dataclass(frozen=True)
class Ball:
    """Constraint set ``{K : G(K) <= radius}``.

    ``mask`` (L0 only) restricts counting and pruning to the marked entries;
    unmarked entries are free.
    """
    kind: BallKind
    radius: float
    mask: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", BallKind(self.kind))
        if not self.radius > 0:
            raise BadRadius("ball radius must be positive")
        if self.kind is BallKind.L0:
            if float(self.radius) != int(self.radius):
                raise BadRadius("l0 radius must be an integer count")
            object.__setattr__(self, "radius", int(self.radius))
        elif self.mask is not None:
            raise ValueError("mask is only supported for l0 balls")


def nnz(K):
    return int(np.count_nonzero(K))


# -- regularizer values -------------------------------------------------------

def g_value(K, regularizer, partition=None):
    """Value of the sparsity-promoting function G(K)."""
    K = np.asarray(K, dtype=float)
    kind = regularizer.kind
    if kind is RegKind.L1:
        return float(np.abs(K).sum())
    if kind is RegKind.WEIGHTED_L1:
        W = regularizer._require_weights()
        if W.shape != K.shape:
            raise DimensionMismatch("weight matrix shape does not match K")
        return float((W * np.abs(K)).sum())
    if partition is None:
        raise PartitionMismatch("block regularizers need a partition")
    norms = partition.block_norms(K)
    if kind is RegKind.BLOCK_L1:
        return float(norms.sum())
    W = regularizer._require_weights()
    if W.shape != norms.shape:
        raise PartitionMismatch("weight grid shape does not match the partition")
    return float((W * norms).sum())


def log_penalty(K, regularizer, partition=None):
    """Concave penalty majorized by the reweighted norms.

    ``sum log(1 + |K_lk| / eps)`` (or over block norms). Its tangent at the
    current iterate is the weighted norm with ``W = 1 / (|K| + eps)``, so a
    reweighted step that decreases ``J + gamma * G_W`` also decreases
    ``J + gamma * log_penalty``.
    """
    eps = regularizer.epsilon
    if regularizer.kind.blockwise:
        if partition is None:
            raise PartitionMismatch("block regularizers need a partition")
        mags = partition.block_norms(np.asarray(K, dtype=float))
    else:
        mags = np.abs(K)
    return float(np.log1p(mags / eps).sum())


# -- shrinkage ------------------------------------------------------------------

def shrink(K, a):
    """Soft threshold ``sgn(x) max(|x| - a, 0)``; ``a`` may be an array."""
    K = np.asarray(K, dtype=float)
    return np.sign(K) * np.maximum(np.abs(K) - a, 0.0)


def _rescale_blocks(K, partition, norms, new_norms):
    # Zero-norm blocks stay zero (the 0/0 limit).
    safe = np.where(norms > 0, norms, 1.0)
    direction = K / partition.expand(safe)
    return direction * partition.expand(np.where(norms > 0, new_norms, 0.0))


def shrink_block(K, a, partition):
    """Block soft threshold: each block's Frobenius norm is reduced by ``a``."""
    K = np.asarray(K, dtype=float)
    norms = partition.block_norms(K)
    return _rescale_blocks(K, partition, norms, np.maximum(norms - a, 0.0))


def shrink_weighted(K, gamma_over_rho, weights):
    K = np.asarray(K, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != K.shape:
        raise DimensionMismatch("weights must match K in shape")
    return shrink(K, gamma_over_rho * weights)


def shrink_block_weighted(K, gamma_over_rho, weights, partition):
    K = np.asarray(K, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != partition.grid_shape:
        raise PartitionMismatch("weight grid must match the partition")
    norms = partition.block_norms(K)
    return _rescale_blocks(K, partition, norms,
                           np.maximum(norms - gamma_over_rho * weights, 0.0))


def prox(V, threshold, regularizer, partition=None):
    """Proximal map of ``threshold * G`` at ``V`` for any regularizer kind."""
    kind = regularizer.kind
    if kind is RegKind.L1:
        return shrink(V, threshold)
    if kind is RegKind.WEIGHTED_L1:
        return shrink_weighted(V, threshold, regularizer._require_weights())
    if partition is None:
        raise PartitionMismatch("block regularizers need a partition")
    if kind is RegKind.BLOCK_L1:
        return shrink_block(V, threshold, partition)
    return shrink_block_weighted(V, threshold, regularizer._require_weights(), partition)


def update_weights(K, regularizer, partition=None):
    """Return a copy of ``regularizer`` with weights ``1 / (|K| + eps)``."""
    if not regularizer.kind.weighted:
        raise WrongKind(f"{regularizer.kind.value} has no weights to update")
    K = np.asarray(K, dtype=float)
    eps = regularizer.epsilon
    if regularizer.kind is RegKind.WEIGHTED_L1:
        W = 1.0 / (np.abs(K) + eps)
    else:
        if partition is None:
            raise PartitionMismatch("block regularizers need a partition")
        W = 1.0 / (partition.block_norms(K) + eps)
    return replace(regularizer, weights=W)


# -- projections ----------------------------------------------------------------

def _simplex_threshold(u, s):
    """Threshold ``lam`` with ``sum(max(u - lam, 0)) = s`` for ``u >= 0``.

    Sort-based rule: the number of survivors is the largest ``j`` with
    ``u_(j) - (sum_{i<=j} u_(i) - s) / j > 0``.
    """
    srt = np.sort(u, axis=None)[::-1]
    csum = np.cumsum(srt)
    j = np.arange(1, srt.size + 1)
    active = srt - (csum - s) / j > 0
    count = int(j[active][-1])
    return (csum[count - 1] - s) / count


def _keep_largest(K, s, mask=None):
    # Zero all but the s largest-magnitude counted entries; ties go to the
    # lowest row-major index.
    flat = K.ravel()
    idx = np.arange(flat.size) if mask is None else np.flatnonzero(mask.ravel())
    out = flat.copy()
    if s >= idx.size:
        return out.reshape(K.shape)
    order = np.argsort(-np.abs(flat[idx]), kind="stable")
    out[idx[order[s:]]] = 0.0
    return out.reshape(K.shape)


def project_l0(K, s, mask=None):
    """Euclidean projection onto ``{||K||_0 <= s}`` (keep the ``s`` largest)."""
    K = np.asarray(K, dtype=float)
    total = K.size if mask is None else int(np.count_nonzero(mask))
    if float(s) != int(s) or not 1 <= int(s) <= total:
        raise BadRadius(f"l0 radius must be an integer in [1, {total}], got {s}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != K.shape:
            raise DimensionMismatch("mask must match K in shape")
    return _keep_largest(K, int(s), mask)


def project_l1(K, s):
    """Euclidean projection onto ``{||K||_1 <= s}``."""
    K = np.asarray(K, dtype=float)
    if not s > 0:
        raise BadRadius("l1 radius must be positive")
    U = np.abs(K)
    if U.sum() <= s:
        return K.copy()
    lam = _simplex_threshold(U, s)
    return np.sign(K) * np.maximum(U - lam, 0.0)


def project_block(K, s, partition):
    """Euclidean projection onto ``{sum_ij ||K_ij||_F <= s}``."""
    K = np.asarray(K, dtype=float)
    if not s > 0:
        raise BadRadius("block radius must be positive")
    norms = partition.block_norms(K)
    if norms.sum() <= s:
        return K.copy()
    lam = _simplex_threshold(norms, s)
    return _rescale_blocks(K, partition, norms, np.maximum(norms - lam, 0.0))


def project(K, ball, partition=None):
    if ball.kind is BallKind.L0:
        return project_l0(K, ball.radius, ball.mask)
    if ball.kind is BallKind.L1:
        return project_l1(K, ball.radius)
    if partition is None:
        raise PartitionMismatch("block ball needs a partition")
    return project_block(K, ball.radius, partition)


def ball_value(K, ball, partition=None):
    """G(K) measured the way ``ball`` measures it."""
    K = np.asarray(K, dtype=float)
    if ball.kind is BallKind.L0:
        return nnz(K if ball.mask is None else K[np.asarray(ball.mask, dtype=bool)])
    if ball.kind is BallKind.L1:
        return float(np.abs(K).sum())
    return float(partition.block_norms(K).sum())
