"""Experiment harness: noise generation, the scalar/kernel counterexample,
convergence-rate studies over a noise-level sweep, and structured output.

A rate study is described by plain JSON-able sections (problem, regularizer,
rule, solver, study) so runs are reproducible from a single config document;
rows of the (delta x trial) grid are independent and can be computed in
parallel worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, InfeasibleError, QuasisolError
from .forward import ForwardProblem, KernelProblem, kernel_optimality_p, problem_from_config
from .grids import GridFunction, build_laplacian, function_from_spec, h_minus1_norm, lp_norm
from .param_choice import RhoRule, choose_rho, rule_from_config, verify_theorem1_relations
from .regularizers import L2Shifted, SupShifted, bregman, regularizer_from_config
from .solvers import (
    MisfitS,
    RegSolution,
    SolverOptions,
    ivanov_solve,
    morozov_solve,
    scalar_oracle,
    tikhonov_solve,
)

__all__ = [
    "NoiseModel",
    "make_noisy",
    "RateStudy",
    "RateReport",
    "run_rate_study",
    "verify_rate_bound",
    "run_counterexample",
    "CounterexampleReport",
    "emit_results",
    "solver_options_from_config",
]

CSV_COLUMNS = [
    "study_id",
    "problem",
    "rule",
    "delta",
    "trial",
    "rho_or_alpha",
    "misfit",
    "r_value",
    "error_measure",
    "error_value",
    "converged",
    "iterations",
]


@dataclass(frozen=True)
class NoiseModel:
    """How noisy data is synthesized from exact data.

    scaled-random: y + delta * e / ||e|| with seeded standard-normal e, so
    the misfit distance of the noisy data is exactly delta.
    constant-shift: y + delta entrywise.
    """

    seed: int = 0
    p: float = 2.0
    mode: str = "scaled-random"

    def __post_init__(self):
        if self.mode not in ("scaled-random", "constant-shift"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")


def make_noisy(y: GridFunction, delta: float, model: NoiseModel) -> GridFunction:
    if delta < 0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    if delta == 0.0:
        return y
    if model.mode == "constant-shift":
        return y.with_values(y.values + delta)
    rng = np.random.default_rng(model.seed)
    while True:
        e = rng.standard_normal(y.values.size)
        norm = lp_norm(y.with_values(e), model.p)
        if norm > 0:
            break
    return y.with_values(y.values + (delta / norm) * e)


def solver_options_from_config(cfg: dict | None) -> SolverOptions:
    cfg = cfg or {}
    known = {
        "max_iter",
        "step_init",
        "backtrack",
        "gtol",
        "stagnation_tol",
        "multistart",
        "seed",
        "armijo",
        "step_min",
        "step_max",
    }
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown solver options: {sorted(unknown)}")
    return SolverOptions(**cfg)


# ---------------------------------------------------------------------------
# rate studies


@dataclass(frozen=True)
class RateStudy:
    """Configuration of one delta-sweep study (all sections JSON-able)."""

    problem: dict
    regularizer: dict
    rule: dict
    x_dagger: object
    deltas: tuple
    error_measure: str = "Hminus1"  # "Hminus1" | "Lp" | "Bregman"
    trials: int = 5
    seed: int = 0
    noise_mode: str = "scaled-random"
    misfit_p: float = 2.0
    solver: dict = field(default_factory=dict)
    study_id: str = "study"

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.error_measure not in ("Hminus1", "Lp", "Bregman"):
            raise ConfigError(f"unknown error measure {self.error_measure!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")


@dataclass
class RateReport:
    study_id: str
    rows: tuple
    traces: tuple  # per-row solver trace or None
    relations: tuple  # per-row Theorem1Report dict or None
    per_delta: tuple  # dicts: delta, mean_error, mean_misfit, mean_r, n_ok
    slope: float
    intercept: float
    r_dagger: float
    r_gap_rel: float  # |mean R at smallest delta - R(x_dagger)| / R(x_dagger)
    relation_pass_fraction: float
    n_failures: int

    def to_dict(self, include_trace: bool = False) -> dict:
        rows = [dict(r) for r in self.rows]
        if include_trace:
            for r, t in zip(rows, self.traces):
                r["trace"] = None if t is None else [list(p) for p in t]
        return {
            "study_id": self.study_id,
            "rows": rows,
            "relations": list(self.relations),
            "per_delta": [dict(d) for d in self.per_delta],
            "slope": self.slope,
            "intercept": self.intercept,
            "r_dagger": self.r_dagger,
            "r_gap_rel": self.r_gap_rel,
            "relation_pass_fraction": self.relation_pass_fraction,
            "n_failures": self.n_failures,
        }


def _build_objects(study: RateStudy):
    F = problem_from_config(study.problem)
    loc = F.param_location
    R = regularizer_from_config(study.regularizer, F.param_grid, loc)
    x_dag = function_from_spec(study.x_dagger, F.param_grid, loc)
    F.check_feasible(x_dag)
    y = F.apply(x_dag)
    return F, R, x_dag, y


def _error_evaluator(study: RateStudy, F: ForwardProblem, R, x_dag):
    if study.error_measure == "Hminus1":
        if F.param_location != "node":
            raise ConfigError(
                "the discrete H^-1 error measure needs node-located parameters"
            )
        A = build_laplacian(F.param_grid)
        return lambda x: h_minus1_norm(x - x_dag, A)
    if study.error_measure == "Lp":
        return lambda x: lp_norm(x - x_dag, study.misfit_p)
    if not isinstance(R, L2Shifted):
        raise ConfigError(
            "the Bregman error measure is only defined for the smooth L2 kind; "
            "use Hminus1 or Lp for sup/BV regularizers"
        )
    xi = R.subgradient(x_dag)
    return lambda x: bregman(R, xi, x, x_dag)


def _run_single_row(study: RateStudy, delta_index: int, trial: int):
    """One (delta, trial) cell: synthesize data, choose parameter, solve.

    Returns (row dict, trace, relations dict or None).
    """
    F, R, x_dag, y = _build_objects(study)
    err_of = _error_evaluator(study, F, R, x_dag)
    S = MisfitS(study.misfit_p)
    opts = solver_options_from_config(study.solver)
    delta = study.deltas[delta_index]
    model = NoiseModel(seed=study.seed + trial, p=study.misfit_p, mode=study.noise_mode)
    ydelta = make_noisy(y, delta, model)
    rule_cfg = dict(study.rule)
    if rule_cfg.get("rule") == "I" and rule_cfg.get("rho_known") is None:
        rule_cfg["rho_known"] = R.value(x_dag)
    parsed = rule_from_config(rule_cfg, delta=delta)
    relations = None
    if isinstance(parsed, RhoRule):
        selection = choose_rho(parsed, F, R, ydelta, S, opts)
        sol = selection.solution
        rho_or_alpha = selection.rho_star
        relations = verify_theorem1_relations(
            selection, x_dag, R, S, F, ydelta, parsed.tau, delta
        ).to_dict()
    elif parsed["rule"] == "morozov":
        sol = morozov_solve(F, R, parsed["tau"], delta, ydelta, S, opts)
        rho_or_alpha = sol.param
        relations = verify_theorem1_relations(
            sol, x_dag, R, S, F, ydelta, parsed["tau"], delta
        ).to_dict()
    else:  # tikhonov_discrepancy: largest alpha meeting the discrepancy bound
        target = parsed["tau"] * delta
        sol = None
        for alpha in sorted(parsed["alpha_grid"], reverse=True):
            cand = tikhonov_solve(F, R, alpha, ydelta, S, opts)
            if cand.misfit <= target:
                sol = cand
                break
        if sol is None:
            raise InfeasibleError(
                "no alpha in the grid meets the discrepancy bound"
            )
        rho_or_alpha = sol.param
    row = {
        "study_id": study.study_id,
        "problem": study.problem.get("problem"),
        "rule": study.rule.get("rule"),
        "delta": delta,
        "trial": trial,
        "rho_or_alpha": rho_or_alpha,
        "misfit": sol.misfit,
        "r_value": sol.r_value,
        "error_measure": study.error_measure,
        "error_value": err_of(sol.x),
        "converged": sol.converged,
        "iterations": sol.iterations,
    }
    return row, sol.trace, relations


def _row_worker(args):
    study_kwargs, delta_index, trial = args
    study = RateStudy(**study_kwargs)
    try:
        return _run_single_row(study, delta_index, trial)
    except QuasisolError as exc:
        return ("failure", delta_index, trial, str(exc))


def _failure_row(study: RateStudy, delta_index: int, trial: int) -> dict:
    return {
        "study_id": study.study_id,
        "problem": study.problem.get("problem"),
        "rule": study.rule.get("rule"),
        "delta": study.deltas[delta_index],
        "trial": trial,
        "rho_or_alpha": math.nan,
        "misfit": math.nan,
        "r_value": math.nan,
        "error_measure": study.error_measure,
        "error_value": math.nan,
        "converged": False,
        "iterations": 0,
    }


def run_rate_study(study: RateStudy, jobs: int = 1) -> RateReport:
    """Run the full (delta x trial) grid and fit the log-log error slope.

    Per-row failures are recorded and skipped in the aggregation; more than
    half the rows failing aborts the study.
    """
    ds = study.deltas
    if len(ds) < 4:
        raise DomainError("the delta list needs at least 4 points")
    if any(d2 >= d1 for d1, d2 in zip(ds, ds[1:])):
        raise DomainError(
            "delta list must be strictly decreasing (degenerate abscissa "
            "for the log-log slope fit)"
        )
    _, R, x_dag, _ = _build_objects(study)
    r_dagger = R.value(x_dag)

    tasks = [(di, t) for di in range(len(ds)) for t in range(study.trials)]
    rows, traces, relations = [], [], []
    n_failures = 0
    if jobs > 1:
        kwargs = {f: getattr(study, f) for f in study.__dataclass_fields__}
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_row_worker, [(kwargs, di, t) for di, t in tasks]))
    else:
        results = []
        for di, t in tasks:
            try:
                results.append(_run_single_row(study, di, t))
            except QuasisolError as exc:
                results.append(("failure", di, t, str(exc)))
    for (di, t), result in zip(tasks, results):
        if result[0] == "failure":
            rows.append(_failure_row(study, di, t))
            traces.append(None)
            relations.append(None)
            n_failures += 1
        else:
            row, trace, rel = result
            rows.append(row)
            traces.append(trace)
            relations.append(rel)
    if n_failures > len(tasks) / 2:
        raise QuasisolError(
            f"{n_failures}/{len(tasks)} rows failed; aborting the study"
        )

    per_delta = []
    for di, d in enumerate(ds):
        ok = [
            r
            for r in rows
            if r["delta"] == d and math.isfinite(r["error_value"])
        ]
        per_delta.append(
            {
                "delta": d,
                "mean_error": float(np.mean([r["error_value"] for r in ok])) if ok else math.nan,
                "mean_misfit": float(np.mean([r["misfit"] for r in ok])) if ok else math.nan,
                "mean_r": float(np.mean([r["r_value"] for r in ok])) if ok else math.nan,
                "n_ok": len(ok),
            }
        )
    fit_pts = [
        (p["delta"], p["mean_error"])
        for p in per_delta
        if math.isfinite(p["mean_error"]) and p["mean_error"] > 0
    ]
    if len(fit_pts) >= 2:
        slope, intercept = np.polyfit(
            np.log([d for d, _ in fit_pts]), np.log([e for _, e in fit_pts]), 1
        )
    else:
        slope, intercept = math.nan, math.nan
    rel_dicts = [r for r in relations if r is not None]
    pass_frac = (
        sum(1 for r in rel_dicts if r["passed"]) / len(rel_dicts) if rel_dicts else math.nan
    )
    smallest = per_delta[-1]["mean_r"]
    r_gap = (
        abs(smallest - r_dagger) / max(abs(r_dagger), 1e-30)
        if math.isfinite(smallest)
        else math.nan
    )
    return RateReport(
        study_id=study.study_id,
        rows=tuple(rows),
        traces=tuple(traces),
        relations=tuple(relations),
        per_delta=tuple(per_delta),
        slope=float(slope),
        intercept=float(intercept),
        r_dagger=r_dagger,
        r_gap_rel=r_gap,
        relation_pass_fraction=pass_frac,
        n_failures=n_failures,
    )


def verify_rate_bound(
    report: RateReport, beta: float, phi: dict, C_S: float, tau: float
) -> dict:
    """Check the per-delta rate bound  error <= phi(C_S (tau+1) delta) / (1-beta).

    ``phi`` is the index-function spec {"c": c or None, "kappa": kappa};
    c = None calibrates the constant from the smallest delta.
    """
    if not 0 <= beta < 1:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    kappa = float(phi["kappa"])
    if kappa <= 0:
        raise DomainError("the index-function exponent must be positive")
    usable = [p for p in report.per_delta if math.isfinite(p["mean_error"])]
    if not usable:
        raise DomainError("report has no usable rows")
    c = phi.get("c")
    if c is None:
        p0 = usable[-1]  # smallest delta
        c = p0["mean_error"] * (1 - beta) / (C_S * (tau + 1) * p0["delta"]) ** kappa
    rows = []
    for p in usable:
        bound = c * (C_S * (tau + 1) * p["delta"]) ** kappa / (1 - beta)
        rows.append(
            {
                "delta": p["delta"],
                "error": p["mean_error"],
                "bound": bound,
                "margin": bound - p["mean_error"],
                "ok": p["mean_error"] <= bound * (1 + 1e-12),
            }
        )
    return {
        "kappa": kappa,
        "c": float(c),
        "beta": beta,
        "rows": rows,
        "passed": all(r["ok"] for r in rows),
    }


# ---------------------------------------------------------------------------
# counterexample (constrained vs penalized minimizers)


@dataclass
class CounterexampleReport:
    setting: str
    x0: float
    y: float
    entries: tuple
    curves: tuple

    @property
    def passed(self) -> bool:
        return all(e["passed"] for e in self.entries)

    def to_dict(self, include_curves: bool = True) -> dict:
        out = {
            "setting": self.setting,
            "x0": self.x0,
            "y": self.y,
            "entries": [dict(e) for e in self.entries],
            "passed": self.passed,
        }
        if include_curves:
            out["curves"] = [dict(c) for c in self.curves]
        return out


def _scalar_ivanov_oracle(F, R, rho, ydelta, S, opts):
    """Exact Ivanov solver for the one-node instance, via the scalar oracle."""
    center = float(R._center_values(F.zero_param())[0])
    yd = float(ydelta.values[0])

    def objective(xi):
        return abs((xi - F.x0) ** 3 + F.y - yd)

    if rho < 1e-12:
        xm = center
    else:
        xm, _ = scalar_oracle(objective, center - rho, center + rho)
    x = GridFunction(F.param_grid, np.array([xm]))
    mis = S.value(F.apply(x), ydelta)
    return RegSolution(
        x=x,
        misfit=mis,
        r_value=R.value(x),
        param=rho,
        iterations=1,
        converged=True,
        trace=((mis, R.value(x)),),
    )


def _scalar_counterexample_delta(delta, x0, y, alpha_grid, curve_points):
    from .forward import Kernel
    from .grids import Grid

    # one node, length 2 => quadrature weight exactly 1, misfit = |f(x) - ydelta|
    grid = Grid(1, 1, 2.0)
    F = KernelProblem(grid, Kernel.identity(grid), x0, y)
    R = SupShifted(0.0)
    S = MisfitS(2.0)
    ydelta = GridFunction(grid, np.array([y + delta]))

    def f_scalar(x):
        return (x - x0) ** 3 + y

    ivanov_argmin, ivanov_misfit = scalar_oracle(
        lambda x: abs(f_scalar(x) - (y + delta)), -x0, x0
    )
    mo = morozov_solve(
        F, R, 1.0, delta, ydelta, S, inner_solver=_scalar_ivanov_oracle
    )
    morozov_argmin = float(mo.x.values[0])
    tikhonov = []
    for alpha in alpha_grid:
        argmin, _ = scalar_oracle(
            lambda x: 0.5 * (f_scalar(x) - (y + delta)) ** 2 + alpha * abs(x), -3.0, 3.0
        )
        tikhonov.append((float(alpha), float(argmin), abs(argmin - x0)))
    min_sep = min(sep for _, _, sep in tikhonov)

    xs = np.linspace(-3.0, 3.0, curve_points)
    curve = {
        "delta": delta,
        "x": xs.tolist(),
        "misfit_half_sq": (0.5 * (f_scalar(xs) - (y + delta)) ** 2).tolist(),
        "feasible": (np.abs(xs) <= x0).astype(int).tolist(),
        "tikhonov": {
            repr(float(a)): (0.5 * (f_scalar(xs) - (y + delta)) ** 2 + a * np.abs(xs)).tolist()
            for a in alpha_grid
        },
    }
    return ivanov_argmin, ivanov_misfit, morozov_argmin, mo.r_value, tikhonov, min_sep, curve


def run_counterexample(
    deltas,
    x0: float,
    y: float,
    alpha_grid,
    setting: str = "scalar",
    n: int = 64,
    kernel_sigma: float = 0.05,
    seed: int = 0,
    n_feasible_samples: int = 100,
    tol: float = 1e-6,
    tol_sep: float = 1e-2,
    curve_points: int = 601,
) -> CounterexampleReport:
    """Reproduce the nonconvexity counterexample.

    scalar setting: for each delta the constrained minimizer (radius x0) and
    the residual-method minimizer both sit at x0, while the penalized
    minimizer stays separated from x0 for every alpha in the grid; emits the
    objective curves as plot data.

    kernel setting: on the smoothing-operator lift with constant data
    y + delta, the first-order optimality field p is verified to satisfy
    p >= 3 (x - x0)^2 delta >= 0 on random feasible x, with p == 0 exactly
    at the constant x0.
    """
    deltas = [float(d) for d in deltas]
    alpha_grid = [float(a) for a in alpha_grid]
    for d in deltas:
        if d <= 0 or x0 <= (2 * d) ** (1.0 / 3.0):
            raise DomainError(
                f"need x0 > (2*delta)^(1/3) > 0; violated at delta={d}, x0={x0}"
            )
    if setting not in ("scalar", "kernel"):
        raise ConfigError(f"unknown setting {setting!r}")

    entries = []
    curves = []
    if setting == "scalar":
        if not alpha_grid:
            raise ConfigError("the scalar setting needs a nonempty alpha grid")
        for d in deltas:
            (iv_x, iv_mis, mo_x, mo_r, tikh, min_sep, curve) = _scalar_counterexample_delta(
                d, x0, y, alpha_grid, curve_points
            )
            passed = (
                abs(iv_x - x0) <= tol
                and abs(mo_x - x0) <= tol
                and min_sep >= tol_sep
            )
            entries.append(
                {
                    "delta": d,
                    "ivanov_argmin": iv_x,
                    "ivanov_misfit": iv_mis,
                    "morozov_argmin": mo_x,
                    "morozov_r_value": mo_r,
                    "tikhonov": tikh,
                    "tikhonov_min_separation": min_sep,
                    "passed": passed,
                }
            )
            curves.append(curve)
        return CounterexampleReport("scalar", x0, y, tuple(entries), tuple(curves))

    # kernel setting
    from .forward import Kernel
    from .grids import Grid

    grid = Grid(1, n, 1.0)
    F = KernelProblem(grid, Kernel.gaussian(grid, kernel_sigma), x0, y)
    for d in deltas:
        ydelta = GridFunction.constant(grid, y + d)
        x_flat = GridFunction.constant(grid, x0)
        p_at_x0 = kernel_optimality_p(F, x_flat, ydelta)
        p0_max = float(np.max(np.abs(p_at_x0.values)))
        rng = np.random.default_rng(seed)
        worst_bound = math.inf
        worst_pmin = math.inf
        for _ in range(n_feasible_samples):
            x = GridFunction(grid, rng.uniform(-x0, x0, grid.num_nodes))
            p = kernel_optimality_p(F, x, ydelta).values
            lower = 3.0 * (x.values - x0) ** 2 * d
            worst_bound = min(worst_bound, float(np.min(p - lower)))
            worst_pmin = min(worst_pmin, float(np.min(p)))
        passed = p0_max <= 1e-12 and worst_bound >= -1e-10 and worst_pmin >= -1e-12
        entries.append(
            {
                "delta": d,
                "p_at_x0_max_abs": p0_max,
                "worst_bound_margin": worst_bound,
                "worst_p_min": worst_pmin,
                "n_samples": n_feasible_samples,
                "passed": passed,
            }
        )
    return CounterexampleReport("kernel", x0, y, tuple(entries), tuple(curves))


# ---------------------------------------------------------------------------
# output


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(report, path, fmt: str = "csv", include_trace: bool = False) -> None:
    """Write a report to disk; CSV rows carry the fixed column set, JSON
    mirrors the full report (optionally with per-row solver traces).

    Reruns with the same seed produce byte-identical files.
    """
    try:
        if fmt == "csv":
            if not isinstance(report, RateReport):
                raise ConfigError("CSV output is defined for rate reports only")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for row in report.rows:
                    writer.writerow([_format_cell(row[c]) for c in CSV_COLUMNS])
        elif fmt == "json":
            payload = report.to_dict(include_trace)
            with open(path, "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            raise ConfigError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise QuasisolError(f"cannot write results to {path}: {exc}") from exc
