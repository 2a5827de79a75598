"""Reference methods for comparison: ADMM with l1-type penalties, and GraSP for l0 budgets.

Both return the same :class:`~sparselqr.solvers.SolveResult` / trace
schema as the proximal solvers so sweeps can treat all algorithms alike.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import (BacktrackExhausted, BadRadius, FeasibilityNotFound, InnerSolveFailed,
                     NotStabilizing, WrongKind)
from .objective import Gain, LQRPoint, SolveCounter
from .sparsity import Ball, BallKind, Regularizer, RegKind, g_value, nnz, prox
from .solvers import SolveResult, SolveTrace, Status, TraceRecord, ispa_find_feasible, start_point

__all__ = ["AdmmConfig", "GraspConfig", "admm_solve", "grasp_solve", "grasp_count_mask"]


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings.

    The K-minimization is an inner gradient loop on the augmented
    Lagrangian with curvature backtracking (starting at ``rho + inner_rho0``,
    grown by ``inner_alpha``) and a stability check on every candidate.
    """
    gamma: float = 1.0
    rho: float = 100.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 1000
    inner_steps: int = 50
    inner_tol: float = 1e-6
    inner_rho0: float = 100.0
    inner_alpha: float = 1.5
    inner_backtracks: int = 60
    regularizer: Regularizer = Regularizer(RegKind.L1)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not (self.eps_abs > 0 and self.eps_rel > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if self.regularizer.kind not in (RegKind.L1, RegKind.BLOCK_L1):
            raise WrongKind("ADMM supports the l1 and block l1 regularizers")


@dataclass(frozen=True)
class GraspConfig:
    """GraSP settings.

    ``s`` bounds the number of counted nonzeros: entries outside the
    diagonal blocks when ``exempt_diagonal`` is set, all entries otherwise.
    ``count_mode`` chooses whether elements or whole blocks are counted.
    """
    s: int
    tol: float = 1e-4
    max_iter: int = 500
    inner_steps: int = 25
    step0: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 40
    exempt_diagonal: bool = True
    count_mode: str = "elements"
    repair_bisections: int = 40

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 0:
            raise ValueError("s must be a non-negative integer")
        if self.count_mode not in ("elements", "blocks"):
            raise ValueError("count_mode must be 'elements' or 'blocks'")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


# -- ADMM -----------------------------------------------------------------------

def _admm_k_step(point, V, cfg):
    """Approximately minimize ``J(K) + rho/2 ||K - V||^2`` from ``point``."""
    rho = cfg.rho
    backtracks = 0
    for inner in range(cfg.inner_steps):
        D0 = point.K - V
        grad = point.grad + rho * D0
        eta = rho + cfg.inner_rho0
        accepted = None
        for k in range(cfg.inner_backtracks + 1):
            if k:
                eta *= cfg.inner_alpha
            cand = point.K - grad / eta
            new, dJ = point.move(cand)
            if new is None:
                continue
            D = cand - point.K
            # exact change of the quadratic term plus the change in J
            dphi = dJ + rho * float(np.sum(D * D0)) + 0.5 * rho * float(np.sum(D * D))
            if dphi <= float(np.sum(grad * D)) + 0.5 * eta * float(np.sum(D * D)):
                accepted = new
                backtracks += k
                break
        if accepted is None:
            if inner == 0:
                raise InnerSolveFailed("no acceptable step in the ADMM K-minimization")
            break
        step = float(np.linalg.norm(accepted.K - point.K))
        point = accepted
        if step < cfg.inner_tol:
            break
    return point, backtracks


def admm_solve(plant, K0, config=None):
    """ADMM on ``J(K) + gamma G(F)`` subject to ``K = F``.

    Updates: an inexact K-minimization of the augmented Lagrangian, the
    closed-form ``F = prox_{(gamma/rho) G}(K + Lambda/rho)``, then
    ``Lambda += rho (K - F)``. Stops when the primal residual ``||K - F||``
    and dual residual ``rho ||F - F_prev||`` meet the usual absolute and
    relative tolerances. The returned gain is ``F`` when it is stabilizing
    and ``K`` otherwise.

    Raises
    ------
    InitNotStabilizing, InnerSolveFailed
    """
    cfg = config if config is not None else AdmmConfig()
    counter = SolveCounter()
    point = start_point(plant, K0, counter)
    part = plant.partition
    reg = cfg.regularizer
    rho = cfg.rho
    F = point.K.copy()
    Lam = np.zeros_like(F)
    root = math.sqrt(F.size)
    trace = SolveTrace(algorithm="admm")

    def record(it, backtracks):
        G = g_value(F, reg, part)
        return TraceRecord(iter=it, F=point.J + cfg.gamma * G, J=point.J, G=G, rho=rho,
                           nnz=nnz(F), abscissa=point.abscissa, backtracks=backtracks)

    trace.records.append(record(0, 0))
    status = Status.MAX_ITER
    for it in range(1, cfg.max_iter + 1):
        point, backtracks = _admm_k_step(point, F - Lam / rho, cfg)
        F_prev = F
        F = prox(point.K + Lam / rho, cfg.gamma / rho, reg, part)
        Lam = Lam + rho * (point.K - F)
        trace.records.append(record(it, backtracks))
        r_pri = float(np.linalg.norm(point.K - F))
        r_dual = rho * float(np.linalg.norm(F - F_prev))
        eps_pri = root * cfg.eps_abs + cfg.eps_rel * max(np.linalg.norm(point.K),
                                                         np.linalg.norm(F))
        eps_dual = root * cfg.eps_abs + cfg.eps_rel * float(np.linalg.norm(Lam))
        if r_pri <= eps_pri and r_dual <= eps_dual:
            status = Status.CONVERGED
            break

    final = point
    try:
        final = LQRPoint(plant, F, counter)
    except NotStabilizing:  # F destabilizes the loop; fall back to K
        final = point
    trace.status = status
    trace.lyap_solves = counter.lyap
    return SolveResult(K_final=Gain(K=final.K, abscissa=final.abscissa, J=final.J),
                       trace=trace, G=g_value(final.K, reg, part))


# -- GraSP ----------------------------------------------------------------------

def grasp_count_mask(plant, cfg):
    """Boolean mask of the entries that count against the budget."""
    part = plant.partition
    if cfg.exempt_diagonal:
        return ~part.diagonal_mask()
    return np.ones((plant.m, plant.n), dtype=bool)


class _Counter:
    """Budget arithmetic for element or block counting."""

    def __init__(self, plant, cfg):
        self.part = plant.partition
        self.blocks = cfg.count_mode == "blocks"
        self.mask = grasp_count_mask(plant, cfg)
        if self.blocks:
            self.grid_mask = self.part.block_norms(self.mask.astype(float)) > 0

    def magnitudes(self, X):
        return self.part.block_norms(X) if self.blocks else np.abs(X)

    def grid(self):
        return self.grid_mask if self.blocks else self.mask

    def to_entries(self, sel):
        return self.part.expand(sel.astype(float)) > 0 if self.blocks else sel

    def count(self, K):
        return int(np.count_nonzero((self.magnitudes(K) > 0) & self.grid()))

    def largest(self, X, s):
        """Selection (grid-shaped) of the ``s`` largest counted magnitudes."""
        mags = self.magnitudes(X)
        grid = self.grid()
        idx = np.flatnonzero(grid.ravel())
        order = np.argsort(-mags.ravel()[idx], kind="stable")
        sel = np.zeros(grid.size, dtype=bool)
        sel[idx[order[:s]]] = True
        return sel.reshape(grid.shape)

    def prune(self, X, s):
        keep = self.to_entries(self.largest(X, s)) | ~self.mask
        return np.where(keep, X, 0.0)


def _restricted_descent(point, free, cfg):
    """Armijo gradient steps on the entries marked ``free``."""
    backtracks = 0
    for _ in range(cfg.inner_steps):
        g = np.where(free, point.grad, 0.0)
        gg = float(np.sum(g * g))
        if gg == 0.0:
            break
        t = cfg.step0
        accepted = None
        for k in range(cfg.max_backtracks + 1):
            if k:
                t *= cfg.shrink
            new, dJ = point.move(point.K - t * g)
            if new is not None and dJ <= -cfg.armijo_c * t * gg:
                accepted = new
                backtracks += k
                break
        if accepted is None:
            break
        moved = t * math.sqrt(gg)
        point = accepted
        if moved < 0.1 * cfg.tol:
            break
    return point, backtracks


def _repair(plant, pruned, prev, counter, cfg):
    """Stabilizing point on the segment from ``prev`` to ``pruned`` (on pruned's support)."""
    try:
        return LQRPoint(plant, pruned, counter)
    except NotStabilizing:
        pass
    support = pruned != 0
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(cfg.repair_bisections):
        theta = 0.5 * (lo + hi)
        K = np.where(support, theta * pruned + (1.0 - theta) * prev, 0.0)
        try:
            best = LQRPoint(plant, K, counter)
            lo = theta
        except NotStabilizing:
            hi = theta
    return best


def grasp_solve(plant, K0, config):
    """Gradient support pursuit under an l0 budget.

    Each iteration merges the current support with the ``s`` largest
    gradient entries, runs backtracking gradient descent restricted to the
    merged set, and prunes back to the ``s`` largest counted entries. If
    pruning destabilizes the loop, the gain is moved back toward the
    previous iterate by bisection.

    Raises
    ------
    InitNotStabilizing, BacktrackExhausted
    """
    cfg = config
    counter = SolveCounter()
    start = start_point(plant, K0, counter)
    cnt = _Counter(plant, cfg)
    s = int(cfg.s)

    point = _repair(plant, cnt.prune(start.K, s), start.K, counter, cfg)
    if point is None or cnt.count(point.K) > s:
        if s == 0:
            point = None
        else:
            mask = cnt.mask if not cnt.blocks else None
            try:
                ball = Ball(BallKind.L0, s, mask=mask)
                feas = ispa_find_feasible(plant, start.K, ball)
                point = LQRPoint(plant, cnt.prune(feas.K, s), counter)
            except (FeasibilityNotFound, BadRadius):
                point = None
    if point is None:
        raise BacktrackExhausted("could not reach a stabilizing gain within the budget")

    trace = SolveTrace(algorithm="grasp")

    def record(it, pt, backtracks, dK=math.nan):
        G = float(cnt.count(pt.K))
        return TraceRecord(iter=it, F=pt.J, J=pt.J, G=G, rho=cfg.step0, nnz=nnz(pt.K),
                           abscissa=pt.abscissa, backtracks=backtracks, dK=dK)

    trace.records.append(record(0, point, 0))
    status = Status.MAX_ITER
    for it in range(1, cfg.max_iter + 1):
        g = point.grad
        Z = cnt.to_entries(cnt.largest(g, s)) if s else np.zeros_like(cnt.mask)
        free = Z | (point.K != 0) | ~cnt.mask
        b, backtracks = _restricted_descent(point, free, cfg)
        nxt = _repair(plant, cnt.prune(b.K, s), point.K, counter, cfg)
        if nxt is None:
            nxt = point
        dK = float(np.linalg.norm(nxt.K - point.K))
        point = nxt
        trace.records.append(record(it, point, backtracks, dK))
        if dK < cfg.tol:
            status = Status.CONVERGED
            break
    trace.status = status
    trace.lyap_solves = counter.lyap
    return SolveResult(K_final=Gain(K=point.K, abscissa=point.abscissa, J=point.J),
                       trace=trace, G=float(cnt.count(point.K)))
