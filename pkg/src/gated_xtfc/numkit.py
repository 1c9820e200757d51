"""Dense numerical kernels: jittered Cholesky, least squares, eigenvalues,
bounded scalar minimization and log-determinants.

LAPACK (through numpy/scipy) does the heavy lifting; this module owns the
safeguards around it (jitter escalation, symmetry checks, error mapping).
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NonFiniteObjective,
    NonPositiveDefinite,
)

SYMMETRY_RTOL = 1e-10
JITTER_START = 1e-12  # times the mean diagonal
JITTER_CAP = 1e-4  # times trace / n


def _check_square_symmetric(A: np.ndarray) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale > 0 and np.max(np.abs(A - A.T)) > SYMMETRY_RTOL * scale:
        raise DimensionMismatch("matrix is not symmetric to relative tolerance 1e-10")


def jittered_cholesky(A, jitter0: float | None = None, check: bool = True):
    """Lower Cholesky factor of ``A + jitter*I``.

    The first attempt uses no jitter.  On failure the jitter starts at
    ``jitter0`` (default ``1e-12 * mean(diag(A))``) and grows tenfold until
    it would exceed ``1e-4 * trace(A) / n``.

    Returns ``(L, jitter)``.
    """
    A = np.asarray(A, dtype=float)
    if check:
        _check_square_symmetric(A)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    diag_mean = float(np.mean(np.diag(A)))
    cap = JITTER_CAP * abs(float(np.trace(A))) / n
    if jitter0 is None:
        jitter0 = JITTER_START * abs(diag_mean)
    if not jitter0 > 0:
        jitter0 = JITTER_START * max(cap, 1.0)
    cap = max(cap, jitter0)

    jitter = 0.0
    while True:
        try:
            if jitter == 0.0:
                L = sla.cholesky(A, lower=True, check_finite=True)
            else:
                L = sla.cholesky(A + jitter * np.eye(n), lower=True, check_finite=True)
            if np.all(np.isfinite(L)):
                return L, jitter
        except (np.linalg.LinAlgError, ValueError):
            pass
        jitter = jitter0 if jitter == 0.0 else jitter * 10.0
        if jitter > cap * (1 + 1e-12):
            raise NonPositiveDefinite(
                f"Cholesky failed for all jitter levels up to {cap:.3e}"
            )


def cholesky_solve_jittered(A, b, jitter0: float | None = None) -> np.ndarray:
    """Solve the symmetric positive definite system ``A x = b``.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_square_symmetric(A)
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != matrix size {A.shape[0]}")
    L, _ = jittered_cholesky(A, jitter0, check=False)
    return sla.cho_solve((L, True), b, check_finite=False)


def qr_lstsq(A, b) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A x ~ b`` for ``rows >= cols``.

    Uses a column-pivoted QR (complete orthogonal decomposition), so rank
    deficient systems still return the minimum-norm minimizer.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise DimensionMismatch(f"need rows >= cols, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != rows {A.shape[0]}")
    x, *_ = sla.lstsq(A, b, lapack_driver="gelsy", check_finite=True)
    return x


def sym_eigvals(A) -> np.ndarray:
    """All eigenvalues of a symmetric matrix in ascending order."""
    A = np.asarray(A, dtype=float)
    _check_square_symmetric(A)
    try:
        return np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc


def logdet_psd(A, jitter0: float | None = None) -> float:
    """``log|A|`` from the (jittered) Cholesky diagonal."""
    L, _ = jittered_cholesky(A, jitter0)
    return float(2.0 * np.sum(np.log(np.diag(L))))


class ScalarMinResult(NamedTuple):
    x: float
    fun: float
    evals: int


_SQRT_EPS = math.sqrt(np.finfo(float).eps)
_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))


def bounded_scalar_min(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol_x: float = 1e-5,
    max_evals: int = 500,
) -> ScalarMinResult:
    """Minimize ``f`` on ``[lo, hi]`` by golden section with parabolic steps.

    This is Brent's bounded minimizer in the form used by ``fminbnd``:
    the bracket shrinks until ``|x - mid| <= 2*tol - (b - a)/2`` with
    ``tol = sqrt(eps)*|x| + tol_x/3``, or until ``max_evals`` calls.  The
    objective is only ever evaluated strictly inside the interval.
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")

    def call(x):
        fx = float(f(x))
        if not math.isfinite(fx):
            raise NonFiniteObjective(f"objective returned {fx} at x={x!r}")
        return fx

    a, b = lo, hi
    xf = v = w = a + _GOLDEN * (b - a)
    d = e = 0.0
    fx = call(xf)
    evals = 1
    fv = fw = fx
    xm = 0.5 * (a + b)
    tol1 = _SQRT_EPS * abs(xf) + tol_x / 3.0
    tol2 = 2.0 * tol1

    while abs(xf - xm) > tol2 - 0.5 * (b - a) and evals < max_evals:
        golden = True
        if abs(e) > tol1:
            r = (xf - w) * (fx - fv)
            q = (xf - v) * (fx - fw)
            p = (xf - v) * q - (xf - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r, e = e, d
            if abs(p) < abs(0.5 * q * r) and q * (a - xf) < p < q * (b - xf):
                d = p / q
                golden = False
                x = xf + d
                if (x - a) < tol2 or (b - x) < tol2:
                    d = tol1 if xm >= xf else -tol1
        if golden:
            e = (a - xf) if xf >= xm else (b - xf)
            d = _GOLDEN * e

        step = max(abs(d), tol1)
        x = xf + (step if d >= 0 else -step)
        x = min(max(x, lo), hi)
        fu = call(x)
        evals += 1

        if fu <= fx:
            if x >= xf:
                a = xf
            else:
                b = xf
            v, fv, w, fw = w, fw, xf, fx
            xf, fx = x, fu
        else:
            if x < xf:
                a = x
            else:
                b = x
            if fu <= fw or w == xf:
                v, fv, w, fw = w, fw, x, fu
            elif fu <= fv or v == xf or v == w:
                v, fv = x, fu
        xm = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(xf) + tol_x / 3.0
        tol2 = 2.0 * tol1

    return ScalarMinResult(xf, fx, evals)
