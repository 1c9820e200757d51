"""Command-line entry point.

Every command reads a flat ``key = value`` config file (``--config``) and
per-key flags; flags win over the file, which wins over the defaults.  All
values are validated before any solve.  Exit codes: 0 success, 2
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import forward, inverse, meta, poisson2d
from .csvio import read_kv, write_kv
from .errors import ConfigError, NumericalError
from .kernels import BoundaryData, convection_diffusion, exact_cd, exact_twin, twin_layer

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: object = None
    check: object = None  # predicate on the parsed value
    rule: str = ""
    required: bool = False
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    def parse(self, raw):
        if raw is None or isinstance(raw, self.kind):
            value = raw
        else:
            try:
                value = self.kind(raw)
            except ValueError:
                raise ConfigError(f"{self.name}: cannot parse {raw!r} as {self.kind.__name__}") from None
        if value is not None and self.kind is float and not math.isfinite(value):
            raise ConfigError(f"{self.name}: must be finite")
        if value is not None and self.check is not None and not self.check(value):
            raise ConfigError(f"{self.name}: {value!r} violates {self.rule}")
        return value


def positive(name, default=None, kind=float, **kw):
    return Param(name, kind, default, lambda v: v > 0, "> 0", **kw)


def at_least(name, lo, default=None, kind=int, **kw):
    return Param(name, kind, default, lambda v: v >= lo, f">= {lo}", **kw)


def unit_open(name, default=None, **kw):
    return Param(name, float, default, lambda v: 0 < v < 1, "0 < value < 1", **kw)


def real(name, default=None, **kw):
    return Param(name, float, default, **kw)


def path(name, default=None, **kw):
    return Param(name, str, default, **kw)


COMMON = [at_least("seed", 0, 0), path("out_dir", "out")]

SOLVER = [
    at_least("n_colloc", 10, 1000),
    at_least("n_centers", 2, 1000),
    positive("k", 1.5),
    at_least("n_val", 1, 800),
    positive("lam_factor", forward.DEFAULT_LAMBDA_FACTOR),
]

GATE_SEARCH = [
    unit_open("xs_min", 0.80),
    unit_open("xs_max", 0.999),
    positive("eps_min", 10.0),
    positive("eps_max", 100.0),
    positive("tol_xs", 1e-4),
    positive("tol_eps", 0.1),
]

SCHEMAS = {
    "forward": [
        positive("nu", required=True, help="diffusion coefficient"),
        *SOLVER,
        *GATE_SEARCH,
        at_least("n_test", 2, 20_000),
        unit_open("xs_fixed", help="fixed split; disables the search together with --eps-fixed"),
        positive("eps_fixed"),
    ],
    "inverse": [
        positive("nu_true", help="synthesize observations at this nu"),
        path("obs", help="observation CSV with columns x, y, sigma"),
        at_least("n_data", 2, 50),
        positive("sigma", 1e-2),
        positive("p", 3.0),
        positive("beta_pde", inverse.BETA_PDE),
        at_least("n_colloc", 10, 400),
        at_least("n_centers", 2, 300),
        positive("k", 1.5),
        at_least("budget", 1, 30),
        real("log10_nu_min", -3.0),
        real("log10_nu_max", 1.0),
        unit_open("xs_min", 0.85),
        unit_open("xs_max", 0.995),
        positive("eps_min", 10.0),
        positive("eps_max", 100.0),
        positive("eta0", inverse.ETA0),
        at_least("n_plot", 2, 1001),
    ],
    "meta generate": [
        at_least("n_nu", 1, 100),
        real("log10_nu_min", -4.5),
        real("log10_nu_max", -1.0),
        at_least("workers", 1, 1),
        *SOLVER,
        *GATE_SEARCH,
    ],
    "meta fit": [
        path("dataset", help="dataset CSV; defaults to the shipped sweep"),
        positive("bandwidth_fraction", meta.BANDWIDTH_FRACTION),
        at_least("n_band", 2, 200),
        unit_open("alpha", 0.05),
    ],
    "meta predict": [
        positive("nu", required=True),
        path("model", help="model file from 'meta fit'; defaults to fitting the shipped sweep"),
        path("dataset"),
        unit_open("alpha", 0.05),
        *GATE_SEARCH[:4],
    ],
    "meta bench": [
        positive("nu", 1.2e-4),
        path("model"),
        path("dataset"),
        unit_open("alpha", 0.05),
        *SOLVER,
        *GATE_SEARCH,
        at_least("n_test", 2, 20_000),
    ],
    "twin": [
        positive("nu", 1e-4),
        at_least("n_per_block", 10, 1200),
        positive("k", 1.5),
        at_least("budget", 1, 30),
        unit_open("x1_min", forward.TWIN_BOUNDS[0][0]),
        unit_open("x1_max", forward.TWIN_BOUNDS[0][1]),
        unit_open("x2_min", forward.TWIN_BOUNDS[1][0]),
        unit_open("x2_max", forward.TWIN_BOUNDS[1][1]),
        positive("eps_min", forward.TWIN_BOUNDS[2][0]),
        positive("eps_max", forward.TWIN_BOUNDS[2][1]),
        at_least("n_val", 1, 800),
        at_least("n_test", 2, 20_000),
        positive("lam_factor", forward.DEFAULT_LAMBDA_FACTOR),
    ],
    "poisson2d": [
        positive("nu", 1e-2),
        at_least("n_global", 2, 31),
        Param("alpha_blend", float, 0.5, lambda v: 0 <= v <= 1, "0 <= value <= 1"),
        positive("c_sigma", 5.0),
        at_least("n_in", 7, 200),
        at_least("k", 1, 6),
        at_least("n_colloc", 1, 101),
        at_least("n_val", 1, 41),
        at_least("n_fd", 3, 201),
        at_least("budget", 1, 25),
        unit_open("cx_min", poisson2d.DISK_BOUNDS[0][0]),
        unit_open("cx_max", poisson2d.DISK_BOUNDS[0][1]),
        unit_open("cy_min", poisson2d.DISK_BOUNDS[1][0]),
        unit_open("cy_max", poisson2d.DISK_BOUNDS[1][1]),
        positive("r_min", poisson2d.DISK_BOUNDS[2][0]),
        positive("r_max", poisson2d.DISK_BOUNDS[2][1]),
        positive("lam_factor", forward.DEFAULT_LAMBDA_FACTOR),
    ],
}

ORDERED_PAIRS = [
    ("xs_min", "xs_max"), ("eps_min", "eps_max"), ("log10_nu_min", "log10_nu_max"),
    ("x1_min", "x1_max"), ("x2_min", "x2_max"), ("x1_max", "x2_min"),
    ("cx_min", "cx_max"), ("cy_min", "cy_max"), ("r_min", "r_max"),
]


def schema(command: str) -> list:
    return SCHEMAS[command] + COMMON


def build_config(command: str, file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults, config-file values and overrides, then validate.

    Raises :class:`ConfigError` on unknown keys, unparsable or out-of-domain
    values, missing required keys and inverted bounds.
    """
    params = {p.name: p for p in schema(command)}
    file_values = file_values or {}
    unknown = sorted(set(file_values) - set(params))
    if unknown:
        raise ConfigError(f"unknown config keys for '{command}': {', '.join(unknown)}")
    cfg = {}
    for name, p in params.items():
        raw = p.default
        if name in file_values:
            raw = file_values[name]
        if overrides and overrides.get(name) is not None:
            raw = overrides[name]
        cfg[name] = p.parse(raw)
        if p.required and cfg[name] is None:
            raise ConfigError(f"missing required value: {p.flag}")
    for lo, hi in ORDERED_PAIRS:
        if lo in cfg and hi in cfg and not cfg[lo] < cfg[hi]:
            raise ConfigError(f"{lo} must be below {hi}")
    if command == "forward" and (cfg["xs_fixed"] is None) != (cfg["eps_fixed"] is None):
        raise ConfigError("xs_fixed and eps_fixed must be given together")
    if command == "inverse" and cfg["nu_true"] is None and cfg["obs"] is None:
        raise ConfigError("inverse needs --nu-true or --obs")
    if command == "poisson2d":
        poisson2d.PoissonProblem(**_problem_kwargs(cfg))
        if not (cfg["cx_min"] <= 0.5 <= cfg["cx_max"] and cfg["cy_min"] <= 0.5 <= cfg["cy_max"]):
            raise ConfigError("disk center bounds must contain 0.5")
    return cfg


# -- reports ----------------------------------------------------------------


@dataclass
class RunReport:
    command: str
    metrics: list = field(default_factory=list)  # (name, value)
    artifacts: list = field(default_factory=list)

    def add(self, name, value):
        self.metrics.append((name, value))

    def emit(self, p) -> Path:
        self.artifacts.append(Path(p))
        return Path(p)

    def lines(self) -> list:
        out = [f"{k} = {_show(v)}" for k, v in self.metrics]
        out += [f"artifact = {a}" for a in self.artifacts]
        return out

    def write(self, out_dir) -> Path:
        items = [("command", self.command), *self.metrics]
        items += [("artifacts", " ".join(a.name for a in self.artifacts))]
        return write_kv(Path(out_dir) / "report.txt", items)


def _show(v):
    if isinstance(v, float):
        return format(v, ".6g")
    if isinstance(v, (tuple, list)):
        return " ".join(_show(float(x)) for x in v)
    return str(v)


PLOTS = {
    "solution.csv": "plot '{f}' using 1:2 with lines title 'u', '' using 1:3 with lines title 'exact'",
    "field.csv": "plot '{f}' using 1:2 with lines title 'mean', '' using 1:3:4 with filledcurves title '95%'",
    "trace.csv": "set logscale y; plot '{f}' using 1:(abs($NF)) with linespoints title 'objective'",
    "bands.csv": "set logscale x; plot '{f}' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines",
}


def write_plot_script(report: RunReport, out_dir) -> Path:
    """Gnuplot script plotting the emitted CSVs; no plotting dependency here."""
    lines = ["set datafile separator ','", "set key autotitle columnhead"]
    for a in report.artifacts:
        tmpl = PLOTS.get(a.name, "plot '{f}' using 1:2 with points")
        if a.suffix == ".csv":
            lines += [f"set title '{a.stem}'", tmpl.format(f=a.name), "pause -1", "reset"]
    p = Path(out_dir) / "plot.gp"
    p.write_text("\n".join(lines) + "\n")
    return p


# -- commands ----------------------------------------------------------------


def _grids(cfg):
    return forward.ProblemGrids.default(cfg["n_val"], cfg.get("n_test", 20_000))


def _settings(cfg):
    return forward.SolverSettings(
        n_colloc=cfg["n_colloc"], n_centers=cfg["n_centers"], k=cfg["k"], lam_factor=cfg["lam_factor"]
    )


def _emit_forward(report, sol, cfg, out, exact):
    grids = _grids(cfg)
    x = grids.test
    u = sol.evaluate(x)
    err = np.abs(u - exact(x))
    report.emit(forward.write_solution_csv(sol, out / "solution.csv", x, exact))
    report.emit(forward.write_residual_csv(sol, out / "residual.csv", grids.validation))
    report.emit(sol.layout.to_csv(out / "gate.csv"))
    return u, float(np.max(err))


def cmd_forward(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    nu = cfg["nu"]
    op, bd = convection_diffusion(nu), BoundaryData(0.0, 1.0)
    t0 = time.perf_counter()
    if cfg["xs_fixed"] is not None:
        sol = forward.solve_fixed(op, bd, cfg["xs_fixed"], cfg["eps_fixed"], _grids(cfg), _settings(cfg))
    else:
        sol = forward.optimize_gate(
            op, bd, (cfg["xs_min"], cfg["xs_max"]), (cfg["eps_min"], cfg["eps_max"]),
            cfg["tol_xs"], cfg["tol_eps"], _grids(cfg), _settings(cfg),
        )
    wall = time.perf_counter() - t0
    report = RunReport("forward")
    _, err = _emit_forward(report, sol, cfg, out, lambda x: exact_cd(x, nu))
    report.emit(forward.write_trace_csv(sol.trace, out / "trace.csv"))
    report.add("nu", nu)
    report.add("max_abs_err", err)
    report.add("J_val", sol.J_val)
    report.add("x_s", sol.gate.splits[0])
    report.add("eps_scale", sol.gate.eps_scale)
    report.add("n_evals", sol.n_evals)
    report.add("wall_time_s", wall)
    return report


def cmd_inverse(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    if cfg["obs"] is not None:
        try:
            obs = inverse.Observations.from_csv(cfg["obs"])
        except (OSError, KeyError) as exc:
            raise ConfigError(f"cannot read observations: {exc}") from exc
    else:
        obs = inverse.synthesize_observations(cfg["nu_true"], cfg["n_data"], cfg["sigma"], cfg["p"], cfg["seed"])
    settings = inverse.InverseSettings(
        n_colloc=cfg["n_colloc"], n_centers=cfg["n_centers"], k=cfg["k"], beta_pde=cfg["beta_pde"],
        eta0=cfg["eta0"], log10_nu_bounds=(cfg["log10_nu_min"], cfg["log10_nu_max"]),
        xs_bounds=(cfg["xs_min"], cfg["xs_max"]), eps_bounds=(cfg["eps_min"], cfg["eps_max"]),
        budget=cfg["budget"],
    )
    t0 = time.perf_counter()
    res = inverse.recover(obs, settings=settings, seed=cfg["seed"])
    wall = time.perf_counter() - t0
    report = RunReport("inverse")
    x = np.linspace(0.0, 1.0, cfg["n_plot"])
    nu_true = cfg["nu_true"]
    exact = (lambda s: exact_cd(s, nu_true)) if nu_true is not None else None
    report.emit(obs.to_csv(out / "observations.csv"))
    report.emit(inverse.write_field_csv(res, out / "field.csv", x, exact))
    report.emit(inverse.write_trace_csv(res.trace, out / "trace.csv"))
    report.add("nu_hat", res.nu)
    if nu_true is not None:
        report.add("nu_true", nu_true)
        report.add("rel_err_pct", 100.0 * abs(res.nu - nu_true) / nu_true)
    report.add("x_s", res.x_s)
    report.add("eps_scale", res.eps_scale)
    report.add("eta", res.eta)
    report.add("log_evidence", res.posterior.log_evidence)
    report.add("n_evals", len(res.trace))
    report.add("wall_time_s", wall)
    return report


def shipped_dataset() -> Path:
    return Path(str(resources.files("gated_xtfc") / "data" / "sweep.csv"))


def _load_dataset(p) -> meta.MetaDataset:
    p = Path(p) if p is not None else shipped_dataset()
    try:
        return meta.MetaDataset.from_csv(p)
    except (OSError, KeyError) as exc:
        raise ConfigError(f"cannot read dataset {p}: {exc}") from exc


def _load_model(cfg) -> meta.MetaModel:
    if cfg["model"] is not None:
        try:
            return meta.MetaModel.from_file(cfg["model"])
        except (OSError, KeyError) as exc:
            raise ConfigError(f"cannot read model {cfg['model']}: {exc}") from exc
    return meta.irls_fit(_load_dataset(cfg["dataset"]))


def cmd_meta_generate(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    nus = np.logspace(cfg["log10_nu_min"], cfg["log10_nu_max"], cfg["n_nu"])

    def progress(nu, xs, eps, J, n):
        log.info("nu=%.4g x_s*=%.6f eps*=%.3f J=%.3e evals=%d", nu, xs, eps, J, n)

    t0 = time.perf_counter()
    data = meta.generate_dataset(
        nus, (cfg["xs_min"], cfg["xs_max"]), (cfg["eps_min"], cfg["eps_max"]),
        settings=_settings(cfg), grids=forward.ProblemGrids.default(cfg["n_val"]),
        workers=cfg["workers"], callback=progress,
    )
    report = RunReport("meta generate")
    report.emit(data.to_csv(out / "dataset.csv"))
    report.add("n_samples", len(data))
    report.add("n_failed", len(nus) - len(data))
    report.add("wall_time_s", time.perf_counter() - t0)
    return report


def cmd_meta_fit(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    data = _load_dataset(cfg["dataset"])
    if len(data) < meta.DEGREE + 2:
        raise ConfigError(f"dataset has {len(data)} samples; need at least {meta.DEGREE + 2}")
    model = meta.irls_fit(data, bandwidth_fraction=cfg["bandwidth_fraction"])
    lo, hi = np.log10(np.min(data.nu)), np.log10(np.max(data.nu))
    bands = meta.predict_bands(model, np.logspace(lo, hi, cfg["n_band"]), cfg["alpha"])
    report = RunReport("meta fit")
    report.emit(model.to_file(out / "model.txt"))
    report.emit(bands.to_csv(out / "bands.csv"))
    report.add("n_samples", len(data))
    report.add("xs_lambda", model.xs_fit.lam)
    report.add("eps_lambda", model.eps_fit.lam)
    report.add("bandwidth", model.h)
    return report


def _box(cfg, model):
    return meta.warm_start_box(
        model, cfg["nu"], (cfg["xs_min"], cfg["xs_max"]), (cfg["eps_min"], cfg["eps_max"]), alpha=cfg["alpha"]
    )


def cmd_meta_predict(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    box = _box(cfg, _load_model(cfg))
    report = RunReport("meta predict")
    items = [("nu", cfg["nu"]), ("xs_start", box.xs[0]), ("xs_lo", box.xs[1]), ("xs_hi", box.xs[2]),
             ("eps_start", box.eps[0]), ("eps_lo", box.eps[1]), ("eps_hi", box.eps[2])]
    for k, v in items:
        report.add(k, v)
    report.emit(write_kv(out / "box.txt", items))
    return report


def cmd_meta_bench(cfg) -> RunReport:
    """Nested search on the global box and on the meta box at one ``nu``."""
    out = Path(cfg["out_dir"])
    nu = cfg["nu"]
    box = _box(cfg, _load_model(cfg))
    op, bd = convection_diffusion(nu), BoundaryData(0.0, 1.0)
    report = RunReport("meta bench")
    report.add("nu", nu)
    runs = {}
    for tag, bxs, beps in (
        ("global", (cfg["xs_min"], cfg["xs_max"]), (cfg["eps_min"], cfg["eps_max"])),
        ("meta", box.bounds_xs, box.bounds_eps),
    ):
        t0 = time.perf_counter()
        sol = forward.optimize_gate(op, bd, bxs, beps, cfg["tol_xs"], cfg["tol_eps"], _grids(cfg), _settings(cfg))
        wall = time.perf_counter() - t0
        runs[tag] = sol
        report.emit(forward.write_trace_csv(sol.trace, out / f"trace_{tag}.csv"))
        report.add(f"{tag}_bounds_xs", tuple(bxs))
        report.add(f"{tag}_bounds_eps", tuple(beps))
        report.add(f"{tag}_J", sol.J_val)
        report.add(f"{tag}_n_evals", sol.n_evals)
        report.add(f"{tag}_x_s", sol.gate.splits[0])
        report.add(f"{tag}_eps_scale", sol.gate.eps_scale)
        report.add(f"{tag}_wall_time_s", wall)
    report.add("eval_ratio", runs["meta"].n_evals / runs["global"].n_evals)
    return report


def cmd_twin(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    nu = cfg["nu"]
    n = cfg["n_per_block"]
    settings = forward.SolverSettings(n_colloc=n, n_centers=n, k=cfg["k"], lam_factor=cfg["lam_factor"])
    bounds = ((cfg["x1_min"], cfg["x1_max"]), (cfg["x2_min"], cfg["x2_max"]), (cfg["eps_min"], cfg["eps_max"]))
    t0 = time.perf_counter()
    sol = forward.tune_splits(twin_layer(nu), BoundaryData(1.0, 1.0), bounds, cfg["budget"], cfg["seed"],
                              _grids(cfg), settings)
    wall = time.perf_counter() - t0
    report = RunReport("twin")
    u, err = _emit_forward(report, sol, cfg, out, lambda x: exact_twin(x, nu))
    report.emit(forward.write_split_trace_csv(sol.trace, out / "trace.csv"))
    report.add("nu", nu)
    report.add("max_abs_err", err)
    # the test grid is symmetric, so reversing it samples u(1 - x)
    report.add("symmetry_gap", float(np.max(np.abs(u - u[::-1]))))
    report.add("u_min", float(np.min(u)))
    report.add("u_max", float(np.max(u)))
    report.add("splits", sol.gate.splits)
    report.add("eps_scale", sol.gate.eps_scale)
    report.add("J_val", sol.J_val)
    report.add("n_evals", sol.n_evals)
    report.add("wall_time_s", wall)
    return report


def _problem_kwargs(cfg):
    keys = ("nu", "n_global", "alpha_blend", "c_sigma", "n_in", "k", "n_colloc", "n_val", "lam_factor")
    return {k: cfg[k] for k in keys}


def cmd_poisson2d(cfg) -> RunReport:
    out = Path(cfg["out_dir"])
    problem = poisson2d.PoissonProblem(**_problem_kwargs(cfg))
    bounds = ((cfg["cx_min"], cfg["cx_max"]), (cfg["cy_min"], cfg["cy_max"]), (cfg["r_min"], cfg["r_max"]))
    start = tuple(min(max(v, lo), hi) for v, (lo, hi) in zip(poisson2d.DISK_START, bounds))
    t0 = time.perf_counter()
    sol = poisson2d.tune_disk(problem, bounds, cfg["budget"], cfg["seed"], start)
    wall = time.perf_counter() - t0
    t, U = poisson2d.fd_reference(problem.nu, cfg["n_fd"])
    report = RunReport("poisson2d")
    report.emit(poisson2d.write_field_csv(sol, out / "field.csv", t, U))
    report.emit(poisson2d.write_width_csv(sol, out / "widths.csv"))
    report.emit(poisson2d.write_trace_csv(sol.trace, out / "trace.csv"))
    report.add("nu", problem.nu)
    report.add("rel_l2", poisson2d.relative_l2(sol, t, U))
    report.add("cx", sol.disk.cx)
    report.add("cy", sol.disk.cy)
    report.add("r", sol.disk.r)
    report.add("J_val", sol.J_val)
    report.add("n_evals", len(sol.trace))
    report.add("wall_time_s", wall)
    return report


COMMANDS = {
    "forward": cmd_forward,
    "inverse": cmd_inverse,
    "meta generate": cmd_meta_generate,
    "meta fit": cmd_meta_fit,
    "meta predict": cmd_meta_predict,
    "meta bench": cmd_meta_bench,
    "twin": cmd_twin,
    "poisson2d": cmd_poisson2d,
}


# -- argument parsing -------------------------------------------------------


def _add_params(sub: argparse.ArgumentParser, command: str):
    for p in schema(command):
        sub.add_argument(p.flag, dest=p.name, default=None, metavar=p.kind.__name__.upper(), help=p.help or None)
    sub.add_argument("--config", default=None, help="flat 'key = value' file; flags take precedence")
    sub.add_argument("--plot-scripts", action="store_true", help="also write a gnuplot script for the CSVs")
    sub.add_argument("-v", "--verbose", action="store_true")
    sub.set_defaults(command=command, usage=sub.format_usage())


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gated-xtfc", description=__doc__.splitlines()[0])
    cmds = parser.add_subparsers(dest="group", required=True)
    for name in ("forward", "inverse", "twin", "poisson2d"):
        _add_params(cmds.add_parser(name), name)
    meta_p = cmds.add_parser("meta")
    meta_cmds = meta_p.add_subparsers(dest="sub", required=True)
    for name in ("generate", "fit", "predict", "bench"):
        _add_params(meta_cmds.add_parser(name), f"meta {name}")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)  # exits with code 2 on malformed arguments
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    names = [p.name for p in schema(command)]
    try:
        file_values = read_kv(args.config) if args.config else {}
        cfg = build_config(command, file_values, {n: getattr(args, n) for n in names})
    except (ConfigError, ValueError, OSError) as exc:
        sys.stderr.write(args.usage)
        print(f"gated-xtfc {command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = COMMANDS[command](cfg)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"gated-xtfc {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # domain errors that only surface once the problem is built
        print(f"gated-xtfc {command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report.emit(report.write(cfg["out_dir"]))
    if args.plot_scripts:
        report.emit(write_plot_script(report, cfg["out_dir"]))
    print("\n".join(report.lines()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
