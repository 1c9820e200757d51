"""Operator-conditioned meta-learner for the gate hyperparameters.

Maps ``log10(nu)`` to the optimized split and gate scale through cubic
weighted ridge fits on logit/log10-transformed targets.  Noise is treated as
heteroskedastic: squared residuals are kernel-smoothed into a variance
field and fed back as IRLS weights, with the ridge strength reselected by
weighted GCV on every pass.  Predictions carry delta-method bands that turn
into warm-start boxes for the forward search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from . import numkit
from .csvio import read_csv, read_kv, write_csv, write_kv
from .errors import DimensionMismatch, NumericalError, OutOfAnchorRange, TooFewPoints

log = logging.getLogger(__name__)

A_X, B_X = 0.80, 0.999
NUDGE = 1e-6
NOISE_FLOOR = 1e-10
BANDWIDTH_FRACTION = 0.10
LAMBDA_GRID = np.logspace(-10, 2, 25)
IRLS_PASSES = 3
EPS_CLIP = (10.0, 100.0)
PAD_XS, PAD_EPS = 5e-3, 0.5
DEGREE = 3


# -- transforms -------------------------------------------------------------


def transform(nu, xs, eps, a=A_X, b=B_X, nudge=False):
    """``(log10 nu, logit((xs - a)/(b - a)), log10 eps)``.

    With ``nudge=True`` values on an anchor are moved inward by
    ``1e-6 (b - a)`` instead of raising.
    """
    nu, xs, eps = (np.asarray(v, dtype=float) for v in (nu, xs, eps))
    if np.any(nu <= 0) or np.any(eps <= 0):
        raise ValueError("nu and eps must be positive")
    if nudge:
        d = NUDGE * (b - a)
        xs = np.clip(xs, a + d, b - d)
    if np.any(xs <= a) or np.any(xs >= b):
        raise OutOfAnchorRange(f"split values must lie strictly inside ({a}, {b})")
    return np.log10(nu), logit((xs - a) / (b - a)), np.log10(eps)


def inverse_transform(x, yx, ye, a=A_X, b=B_X):
    return 10.0 ** np.asarray(x, dtype=float), a + (b - a) * expit(yx), 10.0 ** np.asarray(ye, dtype=float)


# -- weighted ridge ---------------------------------------------------------


def design(x) -> np.ndarray:
    """Cubic features ``[1, x, x^2, x^3]``."""
    return np.vander(np.atleast_1d(np.asarray(x, dtype=float)), DEGREE + 1, increasing=True)


def _weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise DimensionMismatch("weights must match the number of samples")
    return w


def fit_weighted_ridge(x, y, w=None, lam: float = 0.0) -> np.ndarray:
    """``(Phi^T W Phi + lam I)^-1 Phi^T W y`` for the cubic design."""
    y = np.asarray(y, dtype=float)
    if len(y) < DEGREE + 1:
        raise TooFewPoints("need at least four samples for a cubic fit")
    P = design(x)
    w = _weights(w, len(y))
    G = P.T @ (P * w[:, None])
    G[np.diag_indices_from(G)] += lam
    return numkit.cholesky_solve_jittered(G, P.T @ (w * y))


def hat_trace(x, w, lam: float) -> float:
    """``tr S_lam`` for ``S_lam = Phi (Phi^T W Phi + lam I)^-1 Phi^T W``."""
    P = design(x)
    G = P.T @ (P * w[:, None])
    G[np.diag_indices_from(G)] += lam
    # tr(P G^-1 P^T W) = tr(G^-1 P^T W P)
    return float(np.trace(numkit.cholesky_solve_jittered(G, P.T @ (P * w[:, None]))))


def gcv_score(x, y, w, lam: float) -> float:
    y = np.asarray(y, dtype=float)
    w = _weights(w, len(y))
    beta = fit_weighted_ridge(x, y, w, lam)
    r = y - design(x) @ beta
    dof = len(y) - hat_trace(x, w, lam)
    return float(np.sum(w * r * r) / dof**2)


def gcv_lambda(x, y, w=None, grid=LAMBDA_GRID) -> float:
    """Grid minimizer of weighted GCV (first on ties)."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    scores = [gcv_score(x, y, w, lam) for lam in grid]
    return float(grid[int(np.argmin(scores))])


# -- noise field ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseField:
    """Gaussian-kernel smoother of squared residuals, floored."""

    knots: np.ndarray
    r2: np.ndarray
    h: float
    floor: float = NOISE_FLOOR

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = (x[:, None] - self.knots[None, :]) / self.h
        # shift exponents so the nearest knot has weight 1 (no 0/0 far away)
        e = -0.5 * t * t
        K = np.exp(e - e.max(axis=1, keepdims=True))
        return np.maximum(K @ self.r2 / K.sum(axis=1), self.floor)


def smooth_variance(x, residuals, h: float, floor: float = NOISE_FLOOR) -> NoiseField:
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    r = np.asarray(residuals, dtype=float)
    return NoiseField(np.asarray(x, dtype=float).copy(), r * r, float(h), floor)


def default_bandwidth(x, fraction: float = BANDWIDTH_FRACTION) -> float:
    span = float(np.ptp(x))
    return fraction * span if span > 0 else 1.0


# -- IRLS fit ---------------------------------------------------------------


@dataclass(eq=False)
class TargetFit:
    beta: np.ndarray
    cov: np.ndarray
    lam: float
    weights: np.ndarray
    noise: NoiseField
    passes: list = field(default_factory=list)  # (lam, beta, weights) per pass

    def mean(self, x) -> np.ndarray:
        return design(x) @ self.beta

    def model_var(self, x) -> np.ndarray:
        P = design(x)
        return np.maximum(np.einsum("ij,jk,ik->i", P, self.cov, P), 0.0)

    def total_var(self, x) -> np.ndarray:
        return self.model_var(x) + self.noise(x)


def sandwich_cov(x, w, lam, sigma2) -> np.ndarray:
    """``G^-1 Phi^T W Sigma W Phi G^-1`` with ``G = Phi^T W Phi + lam I``."""
    P = design(x)
    G = P.T @ (P * w[:, None])
    G[np.diag_indices_from(G)] += lam
    Ginv = numkit.cholesky_solve_jittered(G, np.eye(G.shape[0]))
    meat = P.T @ (P * (w * w * sigma2)[:, None])
    C = Ginv @ meat @ Ginv
    return 0.5 * (C + C.T)


def irls_target(x, y, passes: int = IRLS_PASSES, h: float | None = None, grid=LAMBDA_GRID,
                floor: float = NOISE_FLOOR) -> TargetFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 10:
        raise TooFewPoints("IRLS needs at least ten samples")
    h = default_bandwidth(x) if h is None else h
    w = np.ones(len(y))
    history = []
    for p in range(passes):
        if p:
            w = 1.0 / np.maximum(noise(x), floor)
        lam = gcv_lambda(x, y, w, grid)
        beta = fit_weighted_ridge(x, y, w, lam)
        history.append((lam, beta, w))
        noise = smooth_variance(x, y - design(x) @ beta, h, floor)
    sigma2 = noise(x)
    cov = sandwich_cov(x, w, lam, sigma2)
    return TargetFit(beta=beta, cov=cov, lam=lam, weights=w, noise=noise, passes=history)


@dataclass(frozen=True, eq=False)
class MetaDataset:
    nu: np.ndarray
    xs: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        if not len(self.nu) == len(self.xs) == len(self.eps):
            raise DimensionMismatch("dataset columns differ in length")

    def __len__(self) -> int:
        return len(self.nu)

    def to_csv(self, path):
        return write_csv(path, ["nu", "xs_star", "eps_star"], [self.nu, self.xs, self.eps])

    @classmethod
    def from_csv(cls, path) -> "MetaDataset":
        d = read_csv(path)
        return cls(d["nu"], d["xs_star"], d["eps_star"])


@dataclass(eq=False)
class MetaModel:
    xs_fit: TargetFit
    eps_fit: TargetFit
    a_x: float = A_X
    b_x: float = B_X
    h: float = 1.0

    def to_file(self, path):
        items = [("a_x", self.a_x), ("b_x", self.b_x), ("bandwidth", self.h)]
        for name, fit in (("xs", self.xs_fit), ("eps", self.eps_fit)):
            items += [
                (f"{name}.beta", fit.beta),
                (f"{name}.cov", fit.cov),
                (f"{name}.lambda", fit.lam),
                (f"{name}.noise_floor", fit.noise.floor),
                (f"{name}.noise_knots", fit.noise.knots),
                (f"{name}.noise_r2", fit.noise.r2),
            ]
        return write_kv(path, items)

    @classmethod
    def from_file(cls, path) -> "MetaModel":
        kv = read_kv(path)
        vec = lambda k: np.array([float(v) for v in kv[k].split()])
        h = float(kv["bandwidth"])
        fits = []
        for name in ("xs", "eps"):
            noise = NoiseField(vec(f"{name}.noise_knots"), vec(f"{name}.noise_r2"), h,
                               float(kv[f"{name}.noise_floor"]))
            fits.append(TargetFit(
                beta=vec(f"{name}.beta"), cov=vec(f"{name}.cov").reshape(DEGREE + 1, DEGREE + 1),
                lam=float(kv[f"{name}.lambda"]), weights=np.array([]), noise=noise,
            ))
        return cls(fits[0], fits[1], float(kv["a_x"]), float(kv["b_x"]), h)


def irls_fit(data: MetaDataset, a=A_X, b=B_X, passes: int = IRLS_PASSES, bandwidth_fraction=BANDWIDTH_FRACTION,
             grid=LAMBDA_GRID) -> MetaModel:
    x, yx, ye = transform(data.nu, data.xs, data.eps, a, b, nudge=True)
    h = default_bandwidth(x, bandwidth_fraction)
    return MetaModel(
        xs_fit=irls_target(x, yx, passes, h, grid),
        eps_fit=irls_target(x, ye, passes, h, grid),
        a_x=a, b_x=b, h=h,
    )


# -- prediction ------------------------------------------------------------


@dataclass(frozen=True)
class Bands:
    nu: np.ndarray
    xs_mean: np.ndarray
    xs_lo: np.ndarray
    xs_hi: np.ndarray
    eps_mean: np.ndarray
    eps_lo: np.ndarray
    eps_hi: np.ndarray

    def to_csv(self, path):
        names = ["nu", "xs_mean", "xs_lo", "xs_hi", "eps_mean", "eps_lo", "eps_hi"]
        return write_csv(path, names, [getattr(self, n) for n in names])


def back_transform_bands(mu_x, s_x, mu_e, s_e, a=A_X, b=B_X, alpha=0.05, eps_clip=EPS_CLIP):
    """Delta-method bands in physical units from transformed means and sds."""
    z = norm.ppf(1 - alpha / 2)
    sig = expit(mu_x)
    xs = a + (b - a) * sig
    sd_xs = (b - a) * sig * (1 - sig) * s_x
    eps = 10.0**mu_e
    sd_eps = math.log(10) * eps * s_e
    return (
        xs, np.clip(xs - z * sd_xs, a, b), np.clip(xs + z * sd_xs, a, b),
        eps, np.clip(eps - z * sd_eps, *eps_clip), np.clip(eps + z * sd_eps, *eps_clip),
    )


def predict_bands(model: MetaModel, nu, alpha: float = 0.05) -> Bands:
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    x = np.log10(nu)
    out = back_transform_bands(
        model.xs_fit.mean(x), np.sqrt(model.xs_fit.total_var(x)),
        model.eps_fit.mean(x), np.sqrt(model.eps_fit.total_var(x)),
        model.a_x, model.b_x, alpha,
    )
    return Bands(nu, *out)


@dataclass(frozen=True)
class WarmStartBox:
    xs: tuple  # (start, lo, hi)
    eps: tuple

    @property
    def bounds_xs(self):
        return self.xs[1:]

    @property
    def bounds_eps(self):
        return self.eps[1:]


def _pad_box(mean, lo, hi, pad, glo, ghi):
    lo, hi = max(lo, glo), min(hi, ghi)
    if hi - lo < pad:
        c = min(max(mean, glo), ghi)
        lo, hi = max(c - pad, glo), min(c + pad, ghi)
    start = min(max(mean, lo), hi)
    return (float(start), float(lo), float(hi))


def warm_start_box(model: MetaModel, nu: float, global_xs=(A_X, B_X), global_eps=EPS_CLIP,
                   pads=(PAD_XS, PAD_EPS), alpha: float = 0.05) -> WarmStartBox:
    """95% band intersected with the global box, padded when it collapses."""
    bd = predict_bands(model, nu, alpha)
    return box_from_band(bd.xs_mean[0], bd.xs_lo[0], bd.xs_hi[0], bd.eps_mean[0], bd.eps_lo[0], bd.eps_hi[0],
                         global_xs, global_eps, pads)


def box_from_band(xs_mean, xs_lo, xs_hi, eps_mean, eps_lo, eps_hi, global_xs=(A_X, B_X), global_eps=EPS_CLIP,
                  pads=(PAD_XS, PAD_EPS)) -> WarmStartBox:
    return WarmStartBox(
        xs=_pad_box(xs_mean, xs_lo, xs_hi, pads[0], *global_xs),
        eps=_pad_box(eps_mean, eps_lo, eps_hi, pads[1], *global_eps),
    )


# -- dataset generation -----------------------------------------------------


def _solve_one(args):
    from . import forward
    from .kernels import BoundaryData, convection_diffusion

    nu, bounds_xs, bounds_eps, settings, grids = args
    sol = forward.optimize_gate(
        convection_diffusion(nu), BoundaryData(0.0, 1.0), bounds_xs, bounds_eps,
        grids=grids, settings=settings,
    )
    return sol.gate.splits[0], sol.gate.eps_scale, sol.J_val, sol.n_evals


def generate_dataset(
    nus,
    bounds_xs=(A_X, B_X),
    bounds_eps=EPS_CLIP,
    settings=None,
    grids=None,
    workers: int = 1,
    callback=None,
) -> MetaDataset:
    """Run the forward gate search once per ``nu`` and collect the optima.

    Samples whose search fails are logged and skipped.  Results are ordered
    as ``nus`` regardless of ``workers``.
    """
    nus = [float(v) for v in nus]
    jobs = [(nu, tuple(bounds_xs), tuple(bounds_eps), settings, grids) for nu in nus]
    rows = []

    def collect(nu, res):
        if isinstance(res, Exception):
            log.warning("nu=%g skipped: %s", nu, res)
            return
        rows.append((nu, res[0], res[1]))
        if callback is not None:
            callback(nu, *res)

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            for nu, res in zip(nus, ex.map(_safe_solve, jobs)):
                collect(nu, res)
    else:
        for job in jobs:
            collect(job[0], _safe_solve(job))
    if not rows:
        return MetaDataset(np.array([]), np.array([]), np.array([]))
    nu, xs, eps = (np.array(c) for c in zip(*rows))
    return MetaDataset(nu, xs, eps)


def _safe_solve(job):
    try:
        return _solve_one(job)
    except (NumericalError, ValueError) as exc:
        return exc
