"""Dense linear-algebra kernels: Lyapunov solves, spectral abscissa, CARE.

Everything here is sized for desk-scale plants (state dimension up to
about a hundred). Lyapunov equations are solved through the
Kronecker-vectorized linear system for ``n <= KRON_MAX_N`` and through the
Bartels-Stewart algorithm (``scipy.linalg.solve_continuous_lyapunov``)
above it. The Kronecker system has ``n^2`` unknowns, so its LU costs
``O(n^6)``; at ``n = 15`` it is already ten times slower than the Schur
route.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dgecon

from .errors import NonSquare, NotHurwitz, SingularSystem, NoStabilizingSolution

KRON_MAX_N = 12
RCOND_MIN = 1e-14
# Relative residual above which a Bartels-Stewart solution is treated as
# coming from a numerically singular operator.
RESIDUAL_MAX = 1e-6

__all__ = [
    "SpectralReport",
    "spectral_abscissa",
    "abscissa",
    "solve_lyapunov",
    "solve_dual_lyapunov",
    "lyapunov_residual",
    "solve_care",
    "care_residual",
    "symmetrize",
]


@dataclass(frozen=True)
class SpectralReport:
    abscissa: float
    is_hurwitz: bool


def _square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSquare(f"{name} must be square, got shape {M.shape}")
    return M


def abscissa(M):
    """Largest real part of the eigenvalues of ``M`` (no input checks)."""
    return float(np.max(np.linalg.eigvals(M).real))


def spectral_abscissa(M):
    """Spectral abscissa of a square matrix.

    Uses LAPACK's Hessenberg/Schur eigenvalue path via ``numpy.linalg.eigvals``.

    Examples
    --------
    >>> spectral_abscissa(np.diag([-1.0, -3.0]))
    SpectralReport(abscissa=-1.0, is_hurwitz=True)
    """
    M = _square(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    a = abscissa(M)
    return SpectralReport(abscissa=a, is_hurwitz=bool(a < 0))


def symmetrize(X):
    return 0.5 * (X + X.T)


def _kron_solve(At, rhs):
    # Solves At X + X At^T = rhs for X, column-stacked vec convention.
    n = At.shape[0]
    eye = np.eye(n)
    op = np.kron(eye, At) + np.kron(At, eye)
    with warnings.catch_warnings():
        # an exactly singular factor is reported through rcond below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(op, check_finite=False)
    anorm = np.linalg.norm(op, 1)
    rcond, info = dgecon(lu, anorm, norm="1")
    if info != 0 or rcond < RCOND_MIN:
        raise SingularSystem(
            f"Lyapunov operator is numerically singular (rcond={rcond:.3e})")
    x = sla.lu_solve((lu, piv), rhs.reshape(-1, order="F"), check_finite=False)
    return x.reshape((n, n), order="F")


def _lyap(At, Rhs, check):
    # Core: At X + X At^T + Rhs = 0.
    n = At.shape[0]
    if Rhs.shape != (n, n):
        raise NonSquare(f"right-hand side has shape {Rhs.shape}, expected {(n, n)}")
    if check:
        a = abscissa(At)
        if not a < 0:
            raise NotHurwitz(f"closed-loop matrix is not Hurwitz (abscissa={a:.3e})")
    if n <= KRON_MAX_N:
        X = _kron_solve(At, -Rhs)
    else:
        X = _schur_solve(At, Rhs)
    return symmetrize(X)


def _schur_solve(At, Rhs):
    # Bartels-Stewart has no cheap condition estimate; judge it by the residual.
    try:
        X = sla.solve_continuous_lyapunov(At, -Rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"Bartels-Stewart solve failed: {exc}") from None
    if not np.all(np.isfinite(X)):
        raise SingularSystem("Bartels-Stewart solve produced non-finite values")
    res = np.linalg.norm(At @ X + X @ At.T + Rhs)
    scale = np.linalg.norm(Rhs) + 2.0 * np.linalg.norm(At) * np.linalg.norm(X)
    if res > RESIDUAL_MAX * max(scale, np.finfo(float).tiny):
        raise SingularSystem(f"Lyapunov residual {res:.3e} too large; operator near singular")
    return X


def solve_lyapunov(Acl, Rhs, check=True):
    """Solve ``Acl^T X + X Acl + Rhs = 0`` for symmetric ``X``.

    Parameters
    ----------
    Acl : (n, n) array_like
        Hurwitz matrix.
    Rhs : (n, n) array_like
        Symmetric forcing term.
    check : bool
        Verify that ``Acl`` is Hurwitz first (raises ``NotHurwitz``).
        Callers that already know the abscissa can skip the eigen-solve.

    Raises
    ------
    NotHurwitz, SingularSystem, NonSquare
    """
    Acl = _square(Acl, "Acl")
    Rhs = np.asarray(Rhs, dtype=float)
    return _lyap(Acl.T, Rhs, check)


def solve_dual_lyapunov(Acl, Rhs, check=True):
    """Solve ``Acl X + X Acl^T + Rhs = 0`` (controllability-type equation)."""
    Acl = _square(Acl, "Acl")
    Rhs = np.asarray(Rhs, dtype=float)
    return _lyap(Acl, Rhs, check)


def lyapunov_residual(Acl, X, Rhs, dual=False):
    """Frobenius norm of the Lyapunov residual."""
    if dual:
        R = Acl @ X + X @ Acl.T + Rhs
    else:
        R = Acl.T @ X + X @ Acl + Rhs
    return float(np.linalg.norm(R))


def care_residual(A, B1, Q, R, P):
    G = B1 @ np.linalg.solve(R, B1.T)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q))


def _bass_gain(A, B1):
    # Bass's method: any beta with -(A + beta I) Hurwitz works; K = B1^T Y^{-1}
    # stabilizes whenever (A, B1) is controllable. The smallest admissible
    # beta (plus a unit margin) keeps the first Newton gain small.
    n = A.shape[0]
    beta = max(0.0, -float(np.min(np.linalg.eigvals(A).real))) + 1.0
    Y = solve_dual_lyapunov(-(A + beta * np.eye(n)), 2.0 * B1 @ B1.T, check=False)
    try:
        return np.linalg.solve(Y, B1).T
    except np.linalg.LinAlgError:
        return (np.linalg.pinv(Y) @ B1).T


def solve_care(A, B1, Q, R, max_iter=100, rtol=1e-12, return_gain=False):
    """Stabilizing solution of ``A^T P + P A - P B1 R^-1 B1^T P + Q = 0``.

    Kleinman-Newton iteration started from Bass's stabilizing gain; every
    Newton step is one Lyapunov solve.

    Returns ``P`` (and ``K = R^-1 B1^T P`` when ``return_gain``).
    """
    A = _square(A, "A")
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))

    K = _bass_gain(A, B1)
    P_prev = None
    P = None
    for _ in range(max_iter):
        Acl = A - B1 @ K
        if not abscissa(Acl) < 0:
            raise NoStabilizingSolution(
                "Kleinman iteration produced a non-Hurwitz closed loop")
        Rhs = Q + K.T @ R @ K
        try:
            P = solve_lyapunov(Acl, Rhs, check=False)
        except SingularSystem:
            # Early Newton gains (Bass's in particular, for single-input
            # plants) can be large and leave a very non-normal closed loop.
            # The iteration corrects itself from any stabilizing gain, so an
            # unguarded Schur solve is good enough for an intermediate step.
            P = symmetrize(sla.solve_continuous_lyapunov(Acl.T, -Rhs))
            if not np.all(np.isfinite(P)):
                raise NoStabilizingSolution("Lyapunov solve failed in Kleinman iteration")
        K = np.linalg.solve(R, B1.T @ P)
        if P_prev is not None:
            if np.linalg.norm(P - P_prev) <= rtol * max(np.linalg.norm(P), 1e-300):
                break
        P_prev = P

    if not abscissa(A - B1 @ K) < 0:
        raise NoStabilizingSolution("final Riccati gain is not stabilizing")
    if return_gain:
        return P, K
    return P
