"""Proximal-gradient (ISTA, FISTA) and projected-gradient (ISPA) sparse LQR solvers.

All three keep every accepted iterate stabilizing: a candidate gain is
accepted only after its closed loop has been checked, and the step is
shrunk (the curvature ``rho`` grown, or the step size cut) until it is.
"""
import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import FeasibilityNotFound, InitNotStabilizing, NotStabilizing
from .objective import Gain, LQRPoint, SolveCounter
from .sparsity import (Ball, BallKind, Regularizer, RegKind, ball_value, g_value,
                       log_penalty, nnz, project, prox, update_weights)

__all__ = [
    "Status",
    "IstaConfig",
    "IspaConfig",
    "TraceRecord",
    "SolveTrace",
    "SolveResult",
    "TRACE_COLUMNS",
    "merit_G",
    "start_point",
    "ista_step",
    "ista_solve",
    "fista_alphas",
    "fista_solve",
    "ispa_find_feasible",
    "ispa_solve",
]

TRACE_COLUMNS = ("iter", "F", "J", "G", "rho", "nnz", "abscissa", "backtracks")

# Absolute slack on the surrogate test, relative to J; keeps round-off in
# J(K+) - J(K) from rejecting steps that are exact in real arithmetic.
_SURROGATE_RTOL = 1e-13


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter_reached"
    STALLED = "stalled"


@dataclass(frozen=True)
class IstaConfig:
    """Settings shared by :func:`ista_solve` and :func:`fista_solve`.

    ``rho`` starts at ``rho0`` in every outer iteration and is multiplied by
    ``alpha`` on each rejected candidate. With ``strict_acceptance`` a
    candidate is rejected when it is unstable or violates the quadratic
    upper bound; otherwise only instability rejects it.
    """
    gamma: float = 1.0
    rho0: float = 100.0
    alpha: float = 1.5
    tol: float = 1e-4
    max_iter: int = 10000
    max_backtracks: int = 60
    regularizer: Regularizer = field(default_factory=Regularizer)
    strict_acceptance: bool = True

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be > 0")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 0 or self.max_backtracks < 0:
            raise ValueError("iteration caps must be non-negative")


@dataclass(frozen=True)
class IspaConfig:
    """Settings for :func:`ispa_solve`.

    ``rho0`` is the initial gradient step size; it is multiplied by
    ``alpha`` (< 1) on each rejected candidate.
    """
    radius: Ball
    rho0: float = 1.0
    alpha: float = 0.7
    armijo_c: float = 1e-4
    tol: float = 1e-4
    max_iter: int = 10000
    max_backtracks: int = 60
    homotopy_doublings: int = 60

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be > 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    F: float
    J: float
    G: float
    rho: float
    nnz: int
    abscissa: float
    backtracks: int
    J_bound: float = math.nan
    dK: float = math.nan

    def row(self):
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass(eq=False)
class SolveTrace:
    records: list = field(default_factory=list)
    status: Status = Status.MAX_ITER
    lyap_solves: int = 0
    algorithm: str = ""

    @property
    def iterations(self):
        return max(len(self.records) - 1, 0)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path=None):
        """CSV text with a header row; floats at 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(v) for v in r.row()])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


@dataclass(eq=False)
class SolveResult:
    K_final: Gain
    trace: SolveTrace
    G: float = math.nan

    @property
    def K(self):
        return self.K_final.K

    @property
    def J(self):
        return self.K_final.J

    @property
    def converged(self):
        return self.trace.status is Status.CONVERGED


def merit_G(K, regularizer, partition=None):
    """Penalty reported in traces and used for monotonicity.

    Plain and block l1 report ``G(K)`` itself. The reweighted kinds report
    the log penalty whose majorizer they minimize, since the weighted norm
    changes from one iteration to the next.
    """
    if regularizer.kind.weighted:
        return log_penalty(K, regularizer, partition)
    return g_value(K, regularizer, partition)


def start_point(plant, K0, counter=None):
    try:
        return LQRPoint(plant, K0, counter)
    except NotStabilizing as exc:
        raise InitNotStabilizing(f"initial gain is not stabilizing: {exc}") from None


def ista_step(plant, K_t, rho, gamma, regularizer):
    """One shrinkage step ``prox_{(gamma/rho) G}(K_t - grad J(K_t) / rho)``.

    The result is a candidate only; its stability is not checked.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    point = K_t if isinstance(K_t, LQRPoint) else LQRPoint(plant, K_t)
    if regularizer.kind.weighted and regularizer.weights is None:
        regularizer = update_weights(point.K, regularizer, plant.partition)
    return _shrink_step(point, rho, gamma, regularizer)


def _shrink_step(point, rho, gamma, regularizer):
    step = 1.0 / rho
    return prox(point.K - step * point.grad, gamma / rho, regularizer, point.plant.partition)


def _prox_backtrack(point, cfg, regularizer):
    """Accepted ``(point, rho, backtracks, J_bound)`` or ``None`` on exhaustion."""
    rho = cfg.rho0
    g = point.grad
    scale = _SURROGATE_RTOL * (1.0 + abs(point.J))
    for k in range(cfg.max_backtracks + 1):
        if k:
            rho *= cfg.alpha
        cand = _shrink_step(point, rho, cfg.gamma, regularizer)
        new, dJ = point.move(cand)
        if new is None:
            continue
        D = cand - point.K
        model = float(np.sum(D * g)) + 0.5 * rho * float(np.sum(D * D))
        if cfg.strict_acceptance and dJ > model + scale:
            continue
        return new, rho, k, point.J + model
    return None


def _record(it, point, cfg, rho, backtracks, J_bound=math.nan, dK=math.nan):
    G = merit_G(point.K, cfg.regularizer, point.plant.partition)
    return TraceRecord(iter=it, F=point.J + cfg.gamma * G, J=point.J, G=G, rho=rho,
                       nnz=nnz(point.K), abscissa=point.abscissa, backtracks=backtracks,
                       J_bound=J_bound, dK=dK)


def _weights_at(point, regularizer):
    if regularizer.kind.weighted:
        return update_weights(point.K, regularizer, point.plant.partition)
    return regularizer


def _prox_gradient_solve(plant, K0, cfg, momentum_scale, algorithm):
    counter = SolveCounter()
    x = start_point(plant, K0, counter)
    trace = SolveTrace(algorithm=algorithm)
    trace.records.append(_record(0, x, cfg, cfg.rho0, 0))
    alpha_t = 1.0
    y = x
    exhausted = 0
    status = Status.MAX_ITER
    for it in range(1, cfg.max_iter + 1):
        reg = _weights_at(x, cfg.regularizer)
        step_from = y
        step = _prox_backtrack(y, cfg, reg)
        if step is None and y is not x:
            # the extrapolated point admits no acceptable step: plain step from x
            step_from = x
            step = _prox_backtrack(x, cfg, reg)
        if step is None:
            exhausted += 1
            trace.records.append(_record(it, x, cfg, cfg.rho0 * cfg.alpha ** cfg.max_backtracks,
                                         cfg.max_backtracks, dK=0.0))
            y = x
            if exhausted >= 2:
                status = Status.STALLED
                break
            continue
        exhausted = 0
        new, rho, backtracks, J_bound = step
        dK = float(np.linalg.norm(new.K - x.K))
        trace.records.append(_record(it, new, cfg, rho, backtracks, J_bound, dK))
        # Stop on the length of the proximal step itself. Without momentum this
        # is ||K_{t+1} - K_t||; with momentum it is measured from the
        # extrapolated point, which stays large at turning points where
        # consecutive iterates happen to be close.
        if float(np.linalg.norm(new.K - step_from.K)) < cfg.tol:
            x = new
            status = Status.CONVERGED
            break
        alpha_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * alpha_t * alpha_t))
        beta = momentum_scale * (alpha_t - 1.0) / alpha_next
        alpha_t = alpha_next
        y = new
        if beta != 0.0:
            try:
                y = LQRPoint(plant, new.K + beta * (new.K - x.K), counter)
            except NotStabilizing:
                y = new
        x = new
    trace.status = status
    trace.lyap_solves = counter.lyap
    K_final = Gain(K=x.K, abscissa=x.abscissa, J=x.J)
    return SolveResult(K_final=K_final, trace=trace,
                       G=merit_G(x.K, cfg.regularizer, plant.partition))


def ista_solve(plant, K0, config=None):
    """Proximal gradient with stability-aware backtracking.

    Every accepted candidate is stabilizing and satisfies the quadratic
    upper bound at the accepted ``rho``, so ``F = J + gamma * G`` never
    increases along the trace. The solve stops when consecutive iterates
    are within ``config.tol`` in Frobenius norm.

    Parameters
    ----------
    plant : Plant
    K0 : (m, n) array_like
        Stabilizing initial gain, typically :func:`~sparselqr.objective.lqr_gain`.
    config : IstaConfig, optional

    Returns
    -------
    SolveResult
        ``trace.records[0]`` describes ``K0``; record ``t`` describes the
        iterate after outer iteration ``t``.

    Raises
    ------
    InitNotStabilizing
    """
    cfg = config if config is not None else IstaConfig()
    return _prox_gradient_solve(plant, K0, cfg, 0.0, "ista")


def fista_alphas(count):
    """First ``count`` terms of ``a_1 = 1``, ``a_{t+1} = (1 + sqrt(1 + 4 a_t^2)) / 2``."""
    out = []
    a = 1.0
    for _ in range(count):
        out.append(a)
        a = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * a * a))
    return out


def fista_solve(plant, K0, config=None, momentum_scale=1.0):
    """Accelerated variant of :func:`ista_solve`.

    The gradient step is taken from ``Y = K_t + b_t (K_t - K_{t-1})`` with
    ``b_t = (a_t - 1) / a_{t+1}``. If ``Y`` is not stabilizing, or no step
    from it is acceptable, the plain step from ``K_t`` is used instead.
    ``momentum_scale`` multiplies every ``b_t``; at 0 the iteration is
    exactly ISTA. ``F`` is not guaranteed to be monotone.
    """
    cfg = config if config is not None else IstaConfig()
    return _prox_gradient_solve(plant, K0, cfg, float(momentum_scale), "fista")


# -- ISPA -----------------------------------------------------------------------

_HOMOTOPY_REG = {
    BallKind.L0: RegKind.L1,
    BallKind.L1: RegKind.L1,
    BallKind.BLOCK_L1: RegKind.BLOCK_L1,
}


def _ball_tol(ball):
    if ball.kind is BallKind.L0:
        return 0.0
    return 1e-10 * max(1.0, float(ball.radius))


def _inside(K, ball, partition):
    return ball_value(K, ball, partition) <= ball.radius + _ball_tol(ball)


def _stable_gain(plant, K):
    try:
        pt = LQRPoint(plant, K)
    except NotStabilizing:
        return None
    return Gain(K=pt.K, abscissa=pt.abscissa)


def ispa_find_feasible(plant, K0, ball, max_doublings=60, ista_config=None):
    """Stabilizing gain inside ``ball``, reached from ``K0``.

    Tries, in order: ``K0`` itself, the projection of ``K0`` onto the ball,
    and then a continuation in ``gamma`` (1, 2, 4, ...) of shrinkage solves
    warm-started from the previous result, where both each result and its
    projection are tested.

    Raises
    ------
    InitNotStabilizing, FeasibilityNotFound
    """
    part = plant.partition
    start = start_point(plant, K0)
    if _inside(start.K, ball, part):
        return Gain(K=start.K, abscissa=start.abscissa)
    g = _stable_gain(plant, project(start.K, ball, part))
    if g is not None:
        return g
    base = ista_config if ista_config is not None else IstaConfig(max_iter=500)
    reg = Regularizer(_HOMOTOPY_REG[ball.kind])
    K = start.K
    gamma = 1.0
    for _ in range(max_doublings + 1):
        res = ista_solve(plant, K, replace(base, gamma=gamma, regularizer=reg))
        K = res.K
        if _inside(K, ball, part):
            return Gain(K=K, abscissa=res.K_final.abscissa)
        g = _stable_gain(plant, project(K, ball, part))
        if g is not None:
            return g
        gamma *= 2.0
    raise FeasibilityNotFound(
        f"no stabilizing gain with {ball.kind.value} value <= {ball.radius} found")


def ispa_solve(plant, K0, config):
    """Projected gradient descent onto a sparsity ball.

    Each candidate is ``Proj(K - step * grad J(K))``. It is accepted when it
    is stabilizing and satisfies the sufficient-decrease test
    ``J(K+) <= J(K) + c <grad J(K), K+ - K>``; otherwise ``step`` is
    multiplied by ``alpha``. When the projection is inactive the test reads
    ``J(K+) <= J(K) - c * step * ||grad J(K)||^2``.

    Raises
    ------
    InitNotStabilizing, FeasibilityNotFound
    """
    cfg = config
    ball = cfg.radius
    part = plant.partition
    start = start_point(plant, K0)
    counter = SolveCounter()
    feas = ispa_find_feasible(plant, start.K, ball, cfg.homotopy_doublings)
    x = LQRPoint(plant, feas.K, counter, _abscissa=feas.abscissa)
    trace = SolveTrace(algorithm="ispa")

    def record(it, pt, step, backtracks, dK=math.nan):
        G = ball_value(pt.K, ball, part)
        return TraceRecord(iter=it, F=pt.J, J=pt.J, G=float(G), rho=step, nnz=nnz(pt.K),
                           abscissa=pt.abscissa, backtracks=backtracks, dK=dK)

    trace.records.append(record(0, x, cfg.rho0, 0))
    exhausted = 0
    status = Status.MAX_ITER
    for it in range(1, cfg.max_iter + 1):
        g = x.grad
        step = cfg.rho0
        accepted = None
        for k in range(cfg.max_backtracks + 1):
            if k:
                step *= cfg.alpha
            cand = project(x.K - step * g, ball, part)
            new, dJ = x.move(cand)
            if new is None:
                continue
            if dJ <= cfg.armijo_c * float(np.sum(g * (cand - x.K))):
                accepted = (new, step, k)
                break
        if accepted is None:
            exhausted += 1
            trace.records.append(record(it, x, step, cfg.max_backtracks, 0.0))
            if exhausted >= 2:
                status = Status.STALLED
                break
            continue
        exhausted = 0
        new, step, k = accepted
        dK = float(np.linalg.norm(new.K - x.K))
        trace.records.append(record(it, new, step, k, dK))
        x = new
        if dK < cfg.tol:
            status = Status.CONVERGED
            break
    trace.status = status
    trace.lyap_solves = counter.lyap
    return SolveResult(K_final=Gain(K=x.K, abscissa=x.abscissa, J=x.J), trace=trace,
                       G=float(ball_value(x.K, ball, part)))
