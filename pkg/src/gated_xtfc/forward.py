"""Forward solver: strong-form residual least squares on a gated layout and
the nested bounded search over the split location and gate scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dsyrk

from . import numkit
from .csvio import write_csv
from .kernels import (
    BoundaryData,
    LinearOperator1D,
    apply_operator_to_g,
    basis_matrix,
    operator_matrix,
)
from .layout import GateConfig, GatedLayout, build_gated_layout, build_multi_split_layout

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_FACTOR = 1e-12
CHUNK = 2048


@dataclass(frozen=True, eq=False)
class RidgeSystem:
    R: np.ndarray
    f: np.ndarray
    w: np.ndarray
    lam: float

    def normal_equations(self):
        """``(R^T W R + lam I, -R^T W f)``."""
        sw = np.sqrt(self.w)
        Rs = self.R * sw[:, None]
        # symmetric rank-k update: half the flops of R^T W R
        L = dsyrk(1.0, Rs, trans=1, lower=1)
        G = L + np.tril(L, -1).T
        G[np.diag_indices_from(G)] += self.lam
        return G, -(Rs.T @ (sw * self.f))

    def objective(self, c) -> float:
        r = self.R @ c + self.f
        return float(np.sum(self.w * r * r) + self.lam * np.dot(c, c))


GOLDEN_OFFSET = (5**0.5 - 1) / 2


@dataclass(frozen=True)
class ProblemGrids:
    validation: np.ndarray
    test: np.ndarray

    @classmethod
    def default(cls, n_val: int = 800, n_test: int = 20_000):
        # golden-ratio offset inside each cell: a midpoint grid lands exactly on
        # collocation points for splits like 0.875 and lets the search overfit
        val = (np.arange(n_val) + GOLDEN_OFFSET) / n_val
        return cls(validation=val, test=np.linspace(0.0, 1.0, n_test))


def assemble(
    layout: GatedLayout,
    op: LinearOperator1D,
    bd: BoundaryData,
    lam: float | None = None,
    lam_factor: float = DEFAULT_LAMBDA_FACTOR,
) -> RidgeSystem:
    """Residual matrix and forcing at the layout's collocation points.

    With ``lam=None`` the ridge is ``lam_factor * trace(R^T W R) / N_s``.
    """
    x = layout.collocation
    R = operator_matrix(op, x, layout.slopes, layout.offsets)
    f = apply_operator_to_g(op, bd, x)
    n = len(x)
    w = np.full(n, 1.0 / n)
    if lam is None:
        lam = lam_factor * float(np.einsum("ij,ij->", R, R)) / n / R.shape[1]
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return RidgeSystem(R=R, f=f, w=w, lam=float(lam))


def solve_coefficients(sys: RidgeSystem, method: str = "cholesky") -> np.ndarray:
    """Minimize ``||R c + f||_W^2 + lam ||c||^2``.

    ``method="cholesky"`` solves the normal equations; ``"qr"`` solves the
    stacked form ``[sqrt(W) R; sqrt(lam) I] c = [-sqrt(W) f; 0]``.
    """
    if method == "cholesky":
        G, rhs = sys.normal_equations()
        return numkit.cholesky_solve_jittered(G, rhs)
    if method == "qr":
        sw = np.sqrt(sys.w)
        n_s = sys.R.shape[1]
        A = np.vstack([sys.R * sw[:, None], np.sqrt(sys.lam) * np.eye(n_s)])
        rhs = np.concatenate([-sw * sys.f, np.zeros(n_s)])
        return numkit.qr_lstsq(A, rhs)
    raise ValueError(f"unknown method {method!r}")


def residual(c, layout: GatedLayout, op: LinearOperator1D, bd: BoundaryData, points) -> np.ndarray:
    """Pointwise PDE residual ``L[u](x)`` of the trial solution."""
    points = np.asarray(points, dtype=float)
    out = np.empty(len(points))
    for s in range(0, len(points), CHUNK):
        p = points[s : s + CHUNK]
        out[s : s + CHUNK] = operator_matrix(op, p, layout.slopes, layout.offsets) @ c
        out[s : s + CHUNK] += apply_operator_to_g(op, bd, p)
    return out


def residual_energy(c, layout, op, bd, points) -> float:
    """Mean squared PDE residual at ``points``."""
    r = residual(c, layout, op, bd, points)
    return float(np.mean(r * r))


def trial_values(c, layout: GatedLayout, bd: BoundaryData, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty(len(x))
    for s in range(0, len(x), CHUNK):
        p = x[s : s + CHUNK]
        out[s : s + CHUNK] = bd.g(p) + basis_matrix(p, layout.slopes, layout.offsets) @ c
    return out


@dataclass(eq=False)
class ForwardSolution:
    coefficients: np.ndarray
    layout: GatedLayout
    boundary: BoundaryData
    gate: GateConfig
    operator: LinearOperator1D
    J_val: float
    trace: list = field(default_factory=list)

    def evaluate(self, x) -> np.ndarray:
        return trial_values(self.coefficients, self.layout, self.boundary, x)

    def residual(self, x) -> np.ndarray:
        return residual(self.coefficients, self.layout, self.operator, self.boundary, x)

    @property
    def n_evals(self) -> int:
        return len(self.trace)


def evaluate(sol: ForwardSolution, x) -> np.ndarray:
    """``u(x) = g(x) + sum_i c_i psi_i(x)``."""
    return sol.evaluate(x)


@dataclass
class SolverSettings:
    n_colloc: int = 1000
    n_centers: int = 1000
    k: float = 1.5
    lam: float | None = None
    lam_factor: float = DEFAULT_LAMBDA_FACTOR
    method: str = "cholesky"
    phys_factor: float = 5.0


def solve_layout(layout, op, bd, settings: SolverSettings):
    sys = assemble(layout, op, bd, lam=settings.lam, lam_factor=settings.lam_factor)
    return solve_coefficients(sys, settings.method)


def solve_fixed(
    op: LinearOperator1D,
    bd: BoundaryData,
    x_s: float,
    eps_scale: float,
    grids: ProblemGrids | None = None,
    settings: SolverSettings | None = None,
) -> ForwardSolution:
    """Single solve at a fixed gate configuration."""
    settings = settings or SolverSettings()
    grids = grids or ProblemGrids.default()
    gate = GateConfig.single(x_s, eps_scale, op.nu, settings.k, settings.phys_factor)
    layout = build_gated_layout(gate, settings.n_colloc, settings.n_centers)
    c = solve_layout(layout, op, bd, settings)
    J = residual_energy(c, layout, op, bd, grids.validation)
    return ForwardSolution(c, layout, bd, gate, op, J, [(1, x_s, eps_scale, J)])


class GateObjective:
    """Validation residual energy as a function of ``(x_s, eps_scale)``.

    Configurations that produce an identical layout (the gate width is
    clamped by the physics floor) share one solve.  Every call is recorded
    in ``trace`` as ``(eval#, x_s, eps_scale, J)``.
    """

    def __init__(self, op, bd, grids, settings):
        self.op, self.bd, self.grids, self.settings = op, bd, grids, settings
        self.trace: list = []
        self._cache: dict = {}
        self.n_solves = 0

    def layout(self, x_s, eps_scale) -> GatedLayout:
        s = self.settings
        gate = GateConfig.single(x_s, eps_scale, self.op.nu, s.k, s.phys_factor)
        return build_gated_layout(gate, s.n_colloc, s.n_centers)

    def solve(self, x_s, eps_scale):
        layout = self.layout(x_s, eps_scale)
        key = (float(x_s), layout.eps_b)
        hit = self._cache.get(key)
        if hit is None:
            c = solve_layout(layout, self.op, self.bd, self.settings)
            J = residual_energy(c, layout, self.op, self.bd, self.grids.validation)
            self.n_solves += 1
            hit = self._cache[key] = (c, J)
        return layout, hit[0], hit[1]

    def __call__(self, x_s, eps_scale) -> float:
        _, _, J = self.solve(x_s, eps_scale)
        self.trace.append((len(self.trace) + 1, float(x_s), float(eps_scale), J))
        return J


def optimize_gate(
    op: LinearOperator1D,
    bd: BoundaryData,
    bounds_xs=(0.80, 0.999),
    bounds_eps=(10.0, 100.0),
    tol_xs: float = 1e-4,
    tol_eps: float = 1e-1,
    grids: ProblemGrids | None = None,
    settings: SolverSettings | None = None,
    max_outer: int = 50,
    max_inner: int = 25,
) -> ForwardSolution:
    """Nested bounded search: ``x_s`` outer, ``eps_scale`` inner.

    Each objective evaluation rebuilds the layout, solves for the
    coefficients and returns the validation residual energy.
    """
    settings = settings or SolverSettings()
    grids = grids or ProblemGrids.default()
    objective = GateObjective(op, bd, grids, settings)
    inner_best: dict = {}

    def outer(x_s):
        res = numkit.bounded_scalar_min(
            lambda e: objective(x_s, e), bounds_eps[0], bounds_eps[1], tol_eps, max_inner
        )
        inner_best[x_s] = res
        return res.fun

    res = numkit.bounded_scalar_min(outer, bounds_xs[0], bounds_xs[1], tol_xs, max_outer)
    x_s = res.x
    eps = inner_best[x_s].x
    layout, c, J = objective.solve(x_s, eps)
    log.info(
        "nu=%g: x_s*=%.6f eps_scale*=%.3f J=%.3e (%d evals, %d solves)",
        op.nu, x_s, eps, J, len(objective.trace), objective.n_solves,
    )
    return ForwardSolution(c, layout, bd, layout.gate, op, J, objective.trace)


TWIN_BOUNDS = ((0.001, 0.2), (0.8, 0.999), (10.0, 100.0))


class SplitObjective:
    """Validation energy over ``(x_s1, ..., x_sm, eps_scale)`` on a multi-split layout.

    ``trace`` rows are ``(eval#, *splits, eps_scale, J)``.
    """

    def __init__(self, op, bd, grids, settings):
        self.op, self.bd, self.grids, self.settings = op, bd, grids, settings
        self.trace: list = []
        self.best: ForwardSolution | None = None

    def solve(self, splits, eps_scale) -> ForwardSolution:
        s = self.settings
        gate = GateConfig(tuple(splits), eps_scale, self.op.nu, s.k, s.phys_factor)
        layout = build_multi_split_layout(gate, s.n_centers, s.n_colloc)
        c = solve_layout(layout, self.op, self.bd, s)
        J = residual_energy(c, layout, self.op, self.bd, self.grids.validation)
        return ForwardSolution(c, layout, self.bd, gate, self.op, J)

    def __call__(self, p) -> float:
        p = [float(v) for v in p]
        sol = self.solve(p[:-1], p[-1])
        self.trace.append((len(self.trace) + 1, *p, sol.J_val))
        if self.best is None or sol.J_val < self.best.J_val:
            self.best = sol
        if not (sol.J_val > 0 and math.isfinite(sol.J_val)):
            return math.inf if not sol.J_val == 0 else -math.inf
        return math.log10(sol.J_val)


def tune_splits(
    op: LinearOperator1D,
    bd: BoundaryData,
    bounds=TWIN_BOUNDS,
    budget: int = 30,
    seed: int = 0,
    grids: ProblemGrids | None = None,
    settings: SolverSettings | None = None,
) -> ForwardSolution:
    """Bayesian search over split locations and gate scale.

    ``bounds`` lists one interval per split followed by the ``eps_scale``
    interval; split intervals must not overlap.  The surrogate sees
    ``log10 J``.
    """
    from . import bopt

    settings = settings or SolverSettings(n_colloc=1200, n_centers=1200)
    grids = grids or ProblemGrids.default()
    split_bounds = bounds[:-1]
    if any(a[1] >= b[0] for a, b in zip(split_bounds, split_bounds[1:])):
        raise ValueError("split intervals must be ordered and disjoint")
    names = tuple(f"x_s{j + 1}" for j in range(len(split_bounds))) + ("eps_scale",)
    objective = SplitObjective(op, bd, grids, settings)
    bopt.minimize(objective, bopt.SearchSpace(bounds, names=names), budget=budget, seed=seed)
    sol = objective.best
    sol.trace = objective.trace
    log.info("splits=%s eps_scale=%.3f J=%.3e", sol.gate.splits, sol.gate.eps_scale, sol.J_val)
    return sol


def write_split_trace_csv(trace, path):
    """Columns ``eval, x_s1..x_sm, eps_scale, J``."""
    m = len(trace[0]) - 3 if trace else 1
    header = ["eval"] + [f"x_s{j + 1}" for j in range(m)] + ["eps_scale", "J"]
    cols = list(zip(*trace)) if trace else [[] for _ in header]
    return write_csv(path, header, [list(c) for c in cols])


def write_solution_csv(sol: ForwardSolution, path, x, exact=None):
    u = sol.evaluate(x)
    ue = exact(x) if exact is not None else np.full_like(u, np.nan)
    return write_csv(path, ["x", "u_pred", "u_exact", "abs_err"], [x, u, ue, np.abs(u - ue)])


def write_residual_csv(sol: ForwardSolution, path, x):
    return write_csv(path, ["x", "residual"], [x, sol.residual(x)])


def write_trace_csv(trace, path):
    cols = list(zip(*trace)) if trace else [[], [], [], []]
    return write_csv(path, ["eval", "x_s", "eps_scale", "J"], [list(c) for c in cols])
