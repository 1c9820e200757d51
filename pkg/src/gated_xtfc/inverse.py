"""Inverse problem: recover the diffusivity from sparse noisy observations.

Data and physics rows are whitened by their precisions and stacked into one
linear-Gaussian model ``y ~ N(Phi c, I)`` with an isotropic prior
``c ~ N(0, eta^-1 I)``.  The prior precision is set by a damped evidence
fixed point, and a Bayesian-optimization loop maximizes the log-evidence
over ``(nu, x_s, eps_scale)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import bopt, numkit
from .csvio import read_csv, write_csv
from .errors import DegenerateModel, DimensionMismatch, TooFewPoints
from .kernels import (
    BoundaryData,
    LinearOperator1D,
    apply_operator_to_g,
    basis_matrix,
    convection_diffusion,
    exact_cd,
    operator_matrix,
)
from .layout import GateConfig, GatedLayout, build_gated_layout

log = logging.getLogger(__name__)

ETA_BOUNDS = (1e-12, 1e-2)
ETA0 = 1e-7
DAMPING = 0.5
ETA_RTOL = 1e-3
ETA_MAX_ITERS = 50
BETA_PDE = 1e2


@dataclass(frozen=True, eq=False)
class Observations:
    x: np.ndarray
    y: np.ndarray
    sigma: float
    p: float = 3.0

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise DimensionMismatch("observation sites and values differ in length")
        if not self.sigma > 0:
            raise ValueError("noise level sigma must be positive")

    def to_csv(self, path):
        return write_csv(path, ["x", "y", "sigma"], [self.x, self.y, np.full(len(self.x), self.sigma)])

    @classmethod
    def from_csv(cls, path, sigma: float | None = None) -> "Observations":
        """Load ``x, y`` and a constant ``sigma`` column (or pass ``sigma``)."""
        d = read_csv(path)
        if "x" not in d or "y" not in d:
            raise ValueError(f"{path}: need columns x and y")
        if sigma is None:
            if "sigma" not in d:
                raise ValueError(f"{path}: no sigma column and no sigma given")
            s = np.asarray(d["sigma"], dtype=float)
            if len(s) == 0 or np.ptp(s) > 0:
                raise ValueError(f"{path}: sigma must be one constant noise level")
            sigma = float(s[0])
        return cls(x=np.asarray(d["x"], dtype=float), y=np.asarray(d["y"], dtype=float), sigma=sigma)


def clustered_sites(n: int, p: float) -> np.ndarray:
    """``1 - (1 - u)^p`` on the endpoint grid ``u = (k-1)/n``."""
    u = np.arange(n) / n
    return 1.0 - (1.0 - u) ** p


def synthesize_observations(
    nu_true: float,
    n_data: int = 50,
    sigma: float = 1e-2,
    p: float = 3.0,
    seed: int = 0,
    exact=exact_cd,
) -> Observations:
    if n_data < 2:
        raise TooFewPoints("need at least two observations")
    x = clustered_sites(n_data, p)
    rng = np.random.default_rng(seed)
    y = exact(x, nu_true) + sigma * rng.standard_normal(n_data)
    # sigma only scales the noise; keep it positive for the data precision
    return Observations(x=x, y=y, sigma=sigma if sigma > 0 else np.finfo(float).tiny, p=p)


@dataclass(frozen=True, eq=False)
class WhitenedModel:
    Phi: np.ndarray
    y: np.ndarray
    beta_data: float
    beta_pde: float
    n_data: int

    @property
    def M(self) -> int:
        return self.Phi.shape[1]

    @property
    def N(self) -> int:
        return self.Phi.shape[0]

    @property
    def gram(self) -> np.ndarray:
        return self.Phi.T @ self.Phi

    @property
    def projected_target(self) -> np.ndarray:
        return self.Phi.T @ self.y


def assemble_whitened(
    obs: Observations,
    layout: GatedLayout,
    op: LinearOperator1D,
    bd: BoundaryData,
    beta_pde: float = BETA_PDE,
) -> WhitenedModel:
    """Stack ``sqrt(beta_data) [H; y - g]`` over ``sqrt(beta_pde) [R; -f]``."""
    beta_data = 1.0 / obs.sigma**2
    m, b = layout.slopes, layout.offsets
    H = basis_matrix(obs.x, m, b)
    xc = layout.collocation
    R = operator_matrix(op, xc, m, b)
    f = apply_operator_to_g(op, bd, xc)
    sd, sp = math.sqrt(beta_data), math.sqrt(beta_pde)
    Phi = np.vstack([sd * H, sp * R])
    y = np.concatenate([sd * (obs.y - bd.g(obs.x)), -sp * f])
    return WhitenedModel(Phi=Phi, y=y, beta_data=beta_data, beta_pde=beta_pde, n_data=len(obs.x))


@dataclass(eq=False)
class PosteriorModel:
    eta: float
    A: np.ndarray
    L: np.ndarray  # lower Cholesky factor of A (plus any jitter)
    mean: np.ndarray
    log_evidence: float
    gamma: float = math.nan
    hyper: dict = field(default_factory=dict)

    @property
    def fixed_point_residual(self) -> float:
        """``|eta ||m||^2 - gamma|``."""
        return abs(self.eta * float(self.mean @ self.mean) - self.gamma)


def _posterior(model: WhitenedModel, eta: float, G=None, b=None, kappa2=None) -> PosteriorModel:
    if not eta > 0:
        raise ValueError("eta must be positive")
    G = model.gram if G is None else G
    b = model.projected_target if b is None else b
    A = G.copy()
    A[np.diag_indices_from(A)] += eta
    L, _ = numkit.jittered_cholesky(A, check=False)
    m = sla.cho_solve((L, True), b, check_finite=False)
    r = model.y - model.Phi @ m
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    ev = (
        0.5 * model.M * math.log(eta)
        - 0.5 * (float(r @ r) + eta * float(m @ m))
        - 0.5 * logdet
        - 0.5 * model.N * math.log(2 * math.pi)
    )
    gamma = float(np.sum(kappa2 / (kappa2 + eta))) if kappa2 is not None else math.nan
    return PosteriorModel(eta=float(eta), A=A, L=L, mean=m, log_evidence=ev, gamma=gamma)


def posterior(model: WhitenedModel, eta: float) -> PosteriorModel:
    """``A = eta I + Phi^T Phi``, ``m_N = A^-1 Phi^T y``."""
    G = model.gram
    return _posterior(model, eta, G, kappa2=np.clip(numkit.sym_eigvals(G), 0.0, None))


def log_evidence(model: WhitenedModel, eta: float) -> float:
    """``(M/2) log eta - (||y - Phi m||^2 + eta ||m||^2)/2 - log|A|/2 - (N/2) log 2 pi``."""
    return _posterior(model, eta).log_evidence


@dataclass(eq=False)
class EtaResult:
    eta: float
    posterior: PosteriorModel
    iterations: int
    converged: bool
    path: list


def optimize_eta(
    model: WhitenedModel,
    eta0: float = ETA0,
    bounds=ETA_BOUNDS,
    damping: float = DAMPING,
    max_iters: int = ETA_MAX_ITERS,
    rtol: float = ETA_RTOL,
) -> EtaResult:
    """Damped evidence fixed point ``eta <- (1-d) eta + d gamma / ||m||^2``.

    ``gamma = sum kappa^2 / (kappa^2 + eta)`` with ``kappa^2`` the
    eigenvalues of ``Phi^T Phi``.  Stops when ``|eta ||m||^2 - gamma| <=
    rtol * gamma`` or when a bound stops the iterate from moving.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    lo, hi = bounds
    G = model.gram
    b = model.projected_target
    kappa2 = np.clip(numkit.sym_eigvals(G), 0.0, None)
    eta = float(np.clip(eta0, lo, hi))
    path = [eta]
    post = _posterior(model, eta, G, b, kappa2)
    for it in range(1, max_iters + 1):
        mm = float(post.mean @ post.mean)
        if mm == 0.0:
            raise DegenerateModel("posterior mean vanished; evidence has no interior optimum")
        if post.fixed_point_residual <= rtol * post.gamma:
            return EtaResult(eta, post, it - 1, True, path)
        new = float(np.clip((1 - damping) * eta + damping * post.gamma / mm, lo, hi))
        if abs(new - eta) <= rtol * eta:
            post = _posterior(model, new, G, b, kappa2)
            path.append(new)
            return EtaResult(new, post, it, True, path)
        eta = new
        path.append(eta)
        post = _posterior(model, eta, G, b, kappa2)
    return EtaResult(eta, post, max_iters, False, path)


def predict_field(post: PosteriorModel, layout: GatedLayout, bd: BoundaryData, x):
    """Posterior mean ``g + h^T m_N`` and model variance ``h^T A^-1 h``."""
    x = np.asarray(x, dtype=float)
    Hx = basis_matrix(x, layout.slopes, layout.offsets)
    mean = bd.g(x) + Hx @ post.mean
    v = sla.solve_triangular(post.L, Hx.T, lower=True, check_finite=False)
    return mean, np.sum(v * v, axis=0)


@dataclass
class InverseSettings:
    n_colloc: int = 400
    n_centers: int = 300
    k: float = 1.5
    beta_pde: float = BETA_PDE
    eta0: float = ETA0
    log10_nu_bounds: tuple = (-3.0, 1.0)
    xs_bounds: tuple = (0.85, 0.995)
    eps_bounds: tuple = (10.0, 100.0)
    budget: int = 30

    def space(self) -> bopt.SearchSpace:
        lo, hi = self.log10_nu_bounds
        return bopt.SearchSpace(
            [(10.0**lo, 10.0**hi), self.xs_bounds, self.eps_bounds],
            log10=(True, False, False),
            names=("nu", "x_s", "eps_scale"),
        )


@dataclass(eq=False)
class InverseResult:
    nu: float
    x_s: float
    eps_scale: float
    eta: float
    posterior: PosteriorModel
    layout: GatedLayout
    boundary: BoundaryData
    trace: list  # (eval#, log10 nu, x_s, eps_scale, log_evidence, eta)
    history: bopt.BOHistory

    def predict(self, x):
        return predict_field(self.posterior, self.layout, self.boundary, x)


def symlog(v: float) -> float:
    """Sign-preserving ``log10(1 + |v|)``."""
    return math.copysign(math.log10(1.0 + abs(v)), v)


class EvidenceObjective:
    """Negative log-evidence at ``(nu, x_s, eps_scale)``, with a trace."""

    def __init__(self, obs, bd, settings: InverseSettings, operator=convection_diffusion):
        self.obs, self.bd, self.settings, self.operator = obs, bd, settings, operator
        self.trace: list = []

    def build(self, nu, x_s, eps_scale):
        s = self.settings
        op = self.operator(float(nu))
        gate = GateConfig.single(float(x_s), float(eps_scale), float(nu), s.k)
        layout = build_gated_layout(gate, s.n_colloc, s.n_centers)
        model = assemble_whitened(self.obs, layout, op, self.bd, s.beta_pde)
        res = optimize_eta(model, s.eta0)
        res.posterior.hyper = {"nu": float(nu), "x_s": float(x_s), "eps_scale": float(eps_scale)}
        return layout, res

    def __call__(self, p) -> float:
        nu, x_s, eps = (float(v) for v in p)
        try:
            _, res = self.build(nu, x_s, eps)
            ev, eta = res.posterior.log_evidence, res.eta
        except Exception:
            self.trace.append((len(self.trace) + 1, math.log10(nu), x_s, eps, -math.inf, math.nan))
            raise
        self.trace.append((len(self.trace) + 1, math.log10(nu), x_s, eps, ev, eta))
        return -ev


def recover(
    obs: Observations,
    bd: BoundaryData | None = None,
    settings: InverseSettings | None = None,
    seed: int = 0,
    operator=convection_diffusion,
) -> InverseResult:
    """Maximize the log-evidence over ``(nu, x_s, eps_scale)`` by BO.

    The surrogate sees ``symlog(-log Z)``, a monotone map with the same
    optimum; the trace keeps the evidence itself.
    """
    bd = bd or BoundaryData(0.0, 1.0)
    settings = settings or InverseSettings()
    objective = EvidenceObjective(obs, bd, settings, operator)
    res = bopt.minimize(lambda p: symlog(objective(p)), settings.space(), budget=settings.budget, seed=seed)
    nu, x_s, eps = (float(v) for v in res.x)
    layout, eta_res = objective.build(nu, x_s, eps)
    log.info("nu_hat=%.6g x_s=%.4f eps_scale=%.2f eta=%.3e logZ=%.6g",
             nu, x_s, eps, eta_res.eta, eta_res.posterior.log_evidence)
    return InverseResult(
        nu=nu, x_s=x_s, eps_scale=eps, eta=eta_res.eta, posterior=eta_res.posterior,
        layout=layout, boundary=bd, trace=objective.trace, history=res.history,
    )


def write_field_csv(result: InverseResult, path, x, exact=None):
    mean, var = result.predict(x)
    half = 1.959963984540054 * np.sqrt(var)
    ue = exact(x) if exact is not None else np.full_like(mean, np.nan)
    return write_csv(path, ["x", "mean", "lo95", "hi95", "exact"], [x, mean, mean - half, mean + half, ue])


def write_trace_csv(trace, path):
    """Columns ``eval, log10nu, x_s, eps_scale, log_evidence, best_so_far``."""
    if trace:
        n, lnu, xs, eps, ev, _ = (np.array(c, dtype=float) for c in zip(*trace))
    else:
        n = lnu = xs = eps = ev = np.array([])
    best = np.maximum.accumulate(np.where(np.isfinite(ev), ev, -np.inf)) if len(ev) else ev
    return write_csv(path, ["eval", "log10nu", "x_s", "eps_scale", "log_evidence", "best_so_far"],
                     [n, lnu, xs, eps, ev, best])
