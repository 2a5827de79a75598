"""LQR cost J(K), its gradient, the quadratic surrogate and F = J + gamma*G.

The closed loop ``A - B1 K`` must be Hurwitz for any of these to exist;
a gain whose spectral abscissa is not below ``-STABILITY_MARGIN`` raises
:class:`~sparselqr.errors.NotStabilizing`.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidWeights, NotStabilizing, SingularSystem
from .linalg import abscissa, solve_care, solve_dual_lyapunov, solve_lyapunov
from .sparsity import BlockPartition, g_value

STABILITY_MARGIN = 1e-12
_WEIGHT_TOL = 1e-10

__all__ = [
    "Plant",
    "Gain",
    "LyapunovPair",
    "SolveCounter",
    "LQRPoint",
    "closed_loop",
    "eval_P",
    "eval_L",
    "lyapunov_pair",
    "cost_J",
    "grad_J",
    "surrogate_J",
    "objective_F",
    "lqr_gain",
]


def _matrix(x, name):
    x = np.array(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


@dataclass(eq=False)
class Plant:
    """Continuous-time plant ``dx = A x + B1 u + B2 w`` with LQR weights.

    ``partition`` groups inputs (rows of K) and states (columns of K) by
    agent; it defaults to one block per entry.
    """
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    partition: BlockPartition = None
    name: str = ""

    def __post_init__(self):
        self.A = _matrix(self.A, "A")
        self.B1 = _matrix(self.B1, "B1")
        self.B2 = _matrix(self.B2, "B2")
        self.Q = _matrix(self.Q, "Q")
        self.R = _matrix(self.R, "R")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if self.B1.shape[0] != n or self.B2.shape[0] != n:
            raise DimensionMismatch("B1 and B2 must have n rows")
        m = self.B1.shape[1]
        if self.Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be {n}x{n}")
        if self.R.shape != (m, m):
            raise DimensionMismatch(f"R must be {m}x{m}")
        _check_weight(self.Q, "Q", definite=False)
        _check_weight(self.R, "R", definite=True)
        if self.partition is None:
            self.partition = BlockPartition.elementwise(m, n)
        elif self.partition.shape != (m, n):
            raise DimensionMismatch(
                f"partition covers {self.partition.shape}, gain is {(m, n)}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]

    @property
    def l(self):
        return self.B2.shape[1]

    def with_matrices(self, **changes):
        fields = dict(A=self.A, B1=self.B1, B2=self.B2, Q=self.Q, R=self.R,
                      partition=self.partition, name=self.name)
        fields.update(changes)
        return Plant(**fields)


def _check_weight(W, name, definite):
    scale = max(1.0, float(np.linalg.norm(W)))
    if np.linalg.norm(W - W.T) > _WEIGHT_TOL * scale:
        raise InvalidWeights(f"{name} is not symmetric")
    lo = float(np.min(np.linalg.eigvalsh(0.5 * (W + W.T))))
    if definite and not lo > _WEIGHT_TOL * scale:
        raise InvalidWeights(f"{name} is not positive definite (min eig {lo:.3e})")
    if not definite and lo < -_WEIGHT_TOL * scale:
        raise InvalidWeights(f"{name} is not positive semidefinite (min eig {lo:.3e})")


@dataclass(eq=False)
class Gain:
    K: np.ndarray
    abscissa: float
    J: float = None

    @classmethod
    def of(cls, plant, K, with_cost=True):
        point = LQRPoint(plant, K)
        return cls(K=point.K, abscissa=point.abscissa, J=point.J if with_cost else None)


@dataclass(eq=False)
class LyapunovPair:
    P: np.ndarray
    L: np.ndarray


class SolveCounter:
    """Mutable tally of Lyapunov solves, shared by the points of one solve."""

    __slots__ = ("lyap",)

    def __init__(self):
        self.lyap = 0


def closed_loop(plant, K):
    K = np.asarray(K, dtype=float)
    if K.shape != (plant.m, plant.n):
        raise DimensionMismatch(f"K has shape {K.shape}, expected {(plant.m, plant.n)}")
    return plant.A - plant.B1 @ K


class LQRPoint:
    """Objective data at one stabilizing gain, computed lazily and cached.

    ``P`` and ``L`` are each one Lyapunov solve; ``J`` and ``grad`` reuse
    them. :meth:`move` evaluates a nearby gain through the equation for the
    increment ``P(K_new) - P(K)``, which keeps ``J(K_new) - J(K)`` accurate
    even when the step is tiny.
    """

    def __init__(self, plant, K, counter=None, _abscissa=None, _P=None):
        self.plant = plant
        self.K = np.array(K, dtype=float)
        self.Acl = closed_loop(plant, self.K)
        self.abscissa = abscissa(self.Acl) if _abscissa is None else _abscissa
        if not self.abscissa < -STABILITY_MARGIN:
            raise NotStabilizing(
                f"A - B1 K is not Hurwitz (abscissa={self.abscissa:.3e})")
        self.counter = counter if counter is not None else SolveCounter()
        self._P = _P
        self._L = None
        self._J = None
        self._grad = None

    @property
    def P(self):
        if self._P is None:
            p = self.plant
            self._P = solve_lyapunov(self.Acl, p.Q + self.K.T @ p.R @ self.K, check=False)
            self.counter.lyap += 1
        return self._P

    @property
    def L(self):
        if self._L is None:
            B2 = self.plant.B2
            self._L = solve_dual_lyapunov(self.Acl, B2 @ B2.T, check=False)
            self.counter.lyap += 1
        return self._L

    @property
    def J(self):
        if self._J is None:
            B2 = self.plant.B2
            self._J = float(np.trace(B2.T @ self.P @ B2))
        return self._J

    def _residual_gain(self):
        # R K - B1^T P; the gradient is 2 (R K - B1^T P) L.
        return self.plant.R @ self.K - self.plant.B1.T @ self.P

    @property
    def grad(self):
        if self._grad is None:
            self._grad = 2.0 * self._residual_gain() @ self.L
        return self._grad

    def move(self, K_new):
        """Point at ``K_new`` plus ``J(K_new) - J(K)``, or ``(None, inf)``.

        Returns ``(None, inf)`` when ``K_new`` is not stabilizing (or the
        Lyapunov operator is numerically singular there).
        """
        K_new = np.asarray(K_new, dtype=float)
        Acl = closed_loop(self.plant, K_new)
        a = abscissa(Acl)
        if not a < -STABILITY_MARGIN:
            return None, np.inf
        D = K_new - self.K
        M = self._residual_gain()
        E = D.T @ M
        E = E + E.T + D.T @ self.plant.R @ D
        try:
            dP = solve_lyapunov(Acl, E, check=False)
        except SingularSystem:
            return None, np.inf
        self.counter.lyap += 1
        B2 = self.plant.B2
        dJ = float(np.trace(B2.T @ dP @ B2))
        point = LQRPoint(self.plant, K_new, self.counter, _abscissa=a, _P=self.P + dP)
        point._J = self.J + dJ
        return point, dJ


def eval_P(plant, K):
    return LQRPoint(plant, K).P


def eval_L(plant, K):
    return LQRPoint(plant, K).L


def lyapunov_pair(plant, K):
    pt = LQRPoint(plant, K)
    return LyapunovPair(P=pt.P, L=pt.L)


def cost_J(plant, K):
    """``Tr(B2^T P(K) B2)``."""
    return LQRPoint(plant, K).J


def grad_J(plant, K):
    """Gradient ``2 (R K - B1^T P) L`` of the LQR cost."""
    return LQRPoint(plant, K).grad


def surrogate_J(plant, K, K_prev, rho):
    """Quadratic upper model of J around ``K_prev`` with curvature ``rho``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    pt = LQRPoint(plant, K_prev)
    D = np.asarray(K, dtype=float) - pt.K
    return pt.J + float(np.sum(D * pt.grad)) + 0.5 * rho * float(np.sum(D * D))


def objective_F(plant, K, regularizer, gamma):
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return cost_J(plant, K) + gamma * g_value(K, regularizer, plant.partition)


def lqr_gain(plant):
    """Unregularized LQR optimum ``R^-1 B1^T P`` from the Riccati equation."""
    _, K = solve_care(plant.A, plant.B1, plant.Q, plant.R, return_gain=True)
    return K
