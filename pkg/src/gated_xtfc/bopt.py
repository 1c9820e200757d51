"""Derivative-free Bayesian optimization over a box.

A Gaussian-process surrogate (squared-exponential ARD kernel on unit-box
inputs, standardized targets) drives an expected-improvement search.  The
"plus" rule swaps a proposal that duplicates an evaluated point for the
candidate of largest predictive variance, which keeps the search exploring
when EI collapses onto the incumbent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize as _scipy_minimize
from scipy.stats import norm, qmc

from . import numkit
from .csvio import write_csv
from .errors import AllEvaluationsFailed, DimensionMismatch, NumericalError, TooFewPoints

log = logging.getLogger(__name__)

N_CANDIDATES = 2048
N_LOCAL = 256
LOCAL_STEP = 0.05
DUPLICATE_TOL = 1e-3
NOISE_JITTER = 1e-6
MAX_INITIAL = 8
LOG_ELL_BOUNDS = (math.log(1e-2), math.log(10.0))
LOG_SF2_BOUNDS = (math.log(1e-2), math.log(1e2))


@dataclass(frozen=True)
class SearchSpace:
    """Box with optional log10 dimensions.

    ``bounds`` are given in natural units; a log10 dimension is searched
    uniformly in ``log10`` of its value.
    """

    bounds: tuple
    log10: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        d = len(bounds)
        log10 = tuple(bool(f) for f in self.log10) or (False,) * d
        names = tuple(self.names) or tuple(f"x{i}" for i in range(d))
        if len(log10) != d or len(names) != d:
            raise DimensionMismatch("bounds, log10 flags and names must have equal length")
        for (lo, hi), lg in zip(bounds, log10):
            if not lo < hi:
                raise ValueError(f"need lo < hi, got ({lo}, {hi})")
            if lg and lo <= 0:
                raise ValueError("log10 dimensions need positive bounds")
        object.__setattr__(self, "log10", log10)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def _search_bounds(self):
        lo = np.array([math.log10(a) if g else a for (a, _), g in zip(self.bounds, self.log10)])
        hi = np.array([math.log10(b) if g else b for (_, b), g in zip(self.bounds, self.log10)])
        return lo, hi

    def from_unit(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        lo, hi = self._search_bounds()
        z = lo + u * (hi - lo)
        flags = np.array(self.log10)
        return np.where(flags, 10.0**z, z)

    def to_unit(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flags = np.array(self.log10)
        z = np.where(flags, np.log10(np.where(flags, x, 1.0)), x)
        lo, hi = self._search_bounds()
        return (z - lo) / (hi - lo)


@dataclass
class BOHistory:
    points: list = field(default_factory=list)  # unit-box coordinates
    values: list = field(default_factory=list)

    def add(self, u, y) -> None:
        self.points.append(np.asarray(u, dtype=float).copy())
        self.values.append(float(y))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def X(self) -> np.ndarray:
        return np.array(self.points)

    @property
    def y(self) -> np.ndarray:
        return np.array(self.values)

    @property
    def incumbent(self) -> int:
        """Index of the best finite value (first on ties), or -1."""
        y = self.y
        finite = np.isfinite(y)
        if not finite.any():
            return -1
        return int(np.argmin(np.where(finite, y, np.inf)))

    def best_so_far(self) -> np.ndarray:
        y = np.where(np.isfinite(self.y), self.y, np.inf)
        return np.minimum.accumulate(y)


def se_ard_kernel(A, B, lengthscales, sf2) -> np.ndarray:
    A = np.atleast_2d(A) / lengthscales
    B = np.atleast_2d(B) / lengthscales
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2 * A @ B.T
    return sf2 * np.exp(-0.5 * np.maximum(d2, 0.0))


@dataclass(eq=False)
class GPSurrogate:
    X: np.ndarray
    y: np.ndarray  # standardized targets
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    sf2: float
    jitter: float
    L: np.ndarray
    alpha: np.ndarray

    def predict(self, Xq):
        """Posterior mean and variance in standardized units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = se_ard_kernel(Xq, self.X, self.lengthscales, self.sf2)
        mu = Ks @ self.alpha
        v = sla.solve_triangular(self.L, Ks.T, lower=True, check_finite=False)
        var = self.sf2 - np.sum(v * v, axis=0)
        return mu, np.maximum(var, 0.0)

    def predict_raw(self, Xq):
        mu, var = self.predict(Xq)
        return self.y_mean + self.y_std * mu, self.y_std**2 * var

    def standardize(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std


def _neg_log_marginal(theta, X, y):
    d = X.shape[1]
    ell = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    K = se_ard_kernel(X, X, ell, sf2)
    K[np.diag_indices_from(K)] += NOISE_JITTER * sf2
    try:
        L, _ = numkit.jittered_cholesky(K, check=False)
    except NumericalError:
        return 1e25
    a = sla.cho_solve((L, True), y, check_finite=False)
    return float(0.5 * y @ a + np.sum(np.log(np.diag(L))) + 0.5 * len(y) * math.log(2 * math.pi))


def _finite_training_set(history: BOHistory):
    X, y = history.X, history.y
    ok = np.isfinite(y)
    if ok.sum() < 2:
        raise TooFewPoints("GP fit needs at least two finite observations")
    # failed evaluations stay in the design at the worst observed level
    y = np.where(ok, y, np.max(y[ok]))
    return X, y


def fit_gp(history: BOHistory) -> GPSurrogate:
    """Fit kernel hyperparameters by marginal likelihood.

    A small grid of isotropic starts seeds bounded quasi-Newton refinement
    of the log length-scales and log signal variance.
    """
    X, y_raw = _finite_training_set(history)
    d = X.shape[1]
    y_mean = float(np.mean(y_raw))
    y_std = float(np.std(y_raw))
    if not y_std > 0:
        y_std = 1.0
    y = (y_raw - y_mean) / y_std

    starts = [
        np.concatenate([np.full(d, math.log(ell)), [math.log(sf2)]])
        for ell in (0.1, 0.3, 1.0)
        for sf2 in (0.5, 1.0, 2.0)
    ]
    scored = sorted(starts, key=lambda t: _neg_log_marginal(t, X, y))
    bounds = [LOG_ELL_BOUNDS] * d + [LOG_SF2_BOUNDS]
    best_theta, best_val = scored[0], _neg_log_marginal(scored[0], X, y)
    for theta0 in scored[:2]:
        res = _scipy_minimize(
            _neg_log_marginal, theta0, args=(X, y), method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 100},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)

    ell = np.exp(best_theta[:d])
    sf2 = math.exp(best_theta[d])
    K = se_ard_kernel(X, X, ell, sf2)
    noise = NOISE_JITTER * sf2
    K[np.diag_indices_from(K)] += noise
    L, extra = numkit.jittered_cholesky(K, jitter0=noise, check=False)
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    return GPSurrogate(X, y, y_mean, y_std, ell, sf2, noise + extra, L, alpha)


def ei_closed_form(mu, s, f_best):
    """``(f_best - mu) Phi(z) + s phi(z)``, ``z = (f_best - mu) / s``; minimization form."""
    scalar = np.ndim(mu) == 0 and np.ndim(s) == 0
    mu, s = np.broadcast_arrays(np.atleast_1d(np.asarray(mu, dtype=float)), np.atleast_1d(np.asarray(s, dtype=float)))
    gap = f_best - mu
    out = np.maximum(gap, 0.0)
    pos = s > 0
    with np.errstate(over="ignore", under="ignore"):
        z = gap[pos] / s[pos]
        out[pos] = np.maximum(gap[pos] * norm.cdf(z) + s[pos] * norm.pdf(z), 0.0)
    return float(out[0]) if scalar else out


def expected_improvement(surrogate: GPSurrogate, points, incumbent: float):
    """EI at ``points`` (unit box) below ``incumbent`` (raw objective units)."""
    mu, var = surrogate.predict(points)
    f_best = float(surrogate.standardize(incumbent))
    return surrogate.y_std * ei_closed_form(mu, np.sqrt(var), f_best)


def _candidates(history: BOHistory, rng: np.random.Generator) -> np.ndarray:
    d = history.X.shape[1]
    sobol = qmc.Sobol(d, scramble=True, seed=rng).random(N_CANDIDATES)
    inc = history.incumbent
    if inc < 0:
        return sobol
    local = history.points[inc] + LOCAL_STEP * rng.standard_normal((N_LOCAL, d))
    return np.vstack([sobol, np.clip(local, 0.0, 1.0)])


def propose_next(
    surrogate: GPSurrogate, history: BOHistory, rng: np.random.Generator, plus: bool = True
) -> np.ndarray:
    """Maximize EI over seeded quasi-random and local candidates."""
    cand = _candidates(history, rng)
    inc = history.incumbent
    ei = expected_improvement(surrogate, cand, history.values[inc])
    best = cand[int(np.argmax(ei))]
    if plus and history.points:
        dist = np.max(np.abs(history.X - best), axis=1)
        if np.min(dist) < DUPLICATE_TOL:
            _, var = surrogate.predict(cand)
            best = cand[int(np.argmax(var))]
    return best


class BOResult(NamedTuple):
    x: np.ndarray
    fun: float
    history: BOHistory


def _safe_eval(objective, x) -> float:
    try:
        y = float(objective(x))
    except NumericalError as exc:
        log.warning("objective failed at %s: %s", x, exc)
        return math.inf
    return y if math.isfinite(y) else math.inf


def minimize(
    objective: Callable[[np.ndarray], float],
    space: SearchSpace,
    budget: int = 30,
    seed: int = 0,
    n_initial: int | None = None,
    initial_points: Sequence | None = None,
    plus: bool = True,
    callback: Callable | None = None,
) -> BOResult:
    """Spend exactly ``budget`` evaluations of ``objective`` (natural units).

    The first evaluations are a Latin hypercube of size ``min(8, budget // 3)``
    (after any user-supplied ``initial_points``); the rest maximize EI.
    Non-finite values and numerical failures count as evaluations.
    """
    d = space.dim
    if budget < d + 2:
        raise ValueError(f"budget must be at least dim + 2 = {d + 2}")
    rng = np.random.default_rng(seed)
    history = BOHistory()

    def run(u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = space.from_unit(u)
        y = _safe_eval(objective, x)
        history.add(u, y)
        if callback is not None:
            callback(len(history), x, y)

    design = [space.to_unit(p) for p in (initial_points or [])]
    if n_initial is None:
        n_initial = min(MAX_INITIAL, budget // 3)
    n_lhs = max(n_initial, 2 - len(design), 0)
    if n_lhs:
        design.extend(qmc.LatinHypercube(d, seed=rng).random(n_lhs))
    for u in design[:budget]:
        run(u)

    while len(history) < budget:
        try:
            gp = fit_gp(history)
            u = propose_next(gp, history, rng, plus=plus)
        except (TooFewPoints, NumericalError):
            u = rng.random(d)
        run(u)

    inc = history.incumbent
    if inc < 0:
        raise AllEvaluationsFailed(f"all {budget} objective evaluations were non-finite")
    return BOResult(space.from_unit(history.points[inc]), history.values[inc], history)


def write_trace_csv(history: BOHistory, space: SearchSpace, path):
    X = np.array([space.from_unit(u) for u in history.points]).reshape(len(history), space.dim)
    cols = [np.arange(1, len(history) + 1)] + [X[:, j] for j in range(space.dim)]
    cols += [history.y, history.best_so_far()]
    return write_csv(path, ["eval", *space.names, "value", "best_so_far"], cols)
