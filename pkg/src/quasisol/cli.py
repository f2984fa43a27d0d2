"""Command-line entry point.

Subcommands::

    quasisol counterexample --config c.json --out dir/
    quasisol rates          --config r.json --out dir/
    quasisol solve          --config s.json --out dir/

Global flags: --seed (overrides config seeds), --format csv|json, --jobs N.
Exit codes: 0 all assertions passed, 2 assertion failures present,
1 execution error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import QuasisolError
from .experiments import (
    NoiseModel,
    RateStudy,
    emit_results,
    make_noisy,
    run_counterexample,
    run_rate_study,
    solver_options_from_config,
)
from .forward import problem_from_config
from .grids import function_from_spec
from .param_choice import RhoRule, choose_rho, rule_from_config, verify_theorem1_relations
from .regularizers import regularizer_from_config
from .solvers import MisfitS, morozov_solve, tikhonov_solve


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _alpha_grid(spec) -> list:
    if isinstance(spec, dict):
        return np.logspace(
            np.log10(float(spec["lo"])), np.log10(float(spec["hi"])), int(spec["num"])
        ).tolist()
    return [float(a) for a in spec]


def _cmd_counterexample(cfg: dict, out: Path, fmt: str, seed: int | None, jobs: int) -> int:
    section = cfg.get("counterexample", cfg)
    report = run_counterexample(
        deltas=section.get("deltas", [0.5, 0.25, 0.125]),
        x0=float(section.get("x0", 1.2)),
        y=float(section.get("y", 0.0)),
        alpha_grid=_alpha_grid(section.get("alpha_grid", {"lo": 1e-4, "hi": 1e2, "num": 20})),
        setting=section.get("setting", "scalar"),
        n=int(section.get("n", 64)),
        kernel_sigma=float(section.get("kernel_sigma", 0.05)),
        seed=int(section.get("seed", 0) if seed is None else seed),
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "counterexample.json", "w") as fh:
        json.dump(report.to_dict(include_curves=False), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for curve in report.curves:
        path = out / f"figure_curves_delta_{curve['delta']}.csv"
        with open(path, "w") as fh:
            alphas = sorted(curve["tikhonov"], key=float)
            header = ["x", "misfit_half_sq", "feasible"] + [f"tikhonov_alpha_{a}" for a in alphas]
            fh.write(",".join(header) + "\n")
            cols = [curve["x"], curve["misfit_half_sq"], curve["feasible"]]
            cols += [curve["tikhonov"][a] for a in alphas]
            for row in zip(*cols):
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    for entry in report.entries:
        print(f"delta={entry['delta']}: {'PASS' if entry['passed'] else 'FAIL'}")
    return 0 if report.passed else 2


def _cmd_rates(cfg: dict, out: Path, fmt: str, seed: int | None, jobs: int) -> int:
    section = cfg.get("study", {})
    study = RateStudy(
        problem=cfg["problem"],
        regularizer=cfg["regularizer"],
        rule=cfg["rule"],
        x_dagger=section["x_dagger"],
        deltas=section["deltas"],
        error_measure=section.get("error_measure", "Hminus1"),
        trials=int(section.get("trials", 5)),
        seed=int(section.get("seed", 0) if seed is None else seed),
        noise_mode=section.get("noise_mode", "scaled-random"),
        misfit_p=float(section.get("misfit_p", 2.0)),
        solver=cfg.get("solver", {}),
        study_id=section.get("study_id", "study"),
    )
    report = run_rate_study(study, jobs=jobs)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if fmt == "csv" else "json"
    emit_results(report, out / f"rates_{study.study_id}.{suffix}", fmt)
    print(f"slope={report.slope:.4f}  relation_pass={report.relation_pass_fraction:.2%}")
    window = section.get("slope_window")
    ok = report.n_failures == 0 and (
        report.relation_pass_fraction >= 1.0 or math_isnan(report.relation_pass_fraction)
    )
    if window is not None:
        ok = ok and window[0] <= report.slope <= window[1]
        print(f"slope window {window}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def math_isnan(x: float) -> bool:
    return x != x


def _cmd_solve(cfg: dict, out: Path, fmt: str, seed: int | None, jobs: int) -> int:
    F = problem_from_config(cfg["problem"])
    R = regularizer_from_config(cfg["regularizer"], F.param_grid, F.param_location)
    opts = solver_options_from_config(cfg.get("solver"))
    S = MisfitS(float(cfg.get("misfit_p", 2.0)))
    data = cfg["data"]
    delta = float(data.get("delta", 0.0))
    x_dag = None
    if "x_dagger" in data:
        x_dag = function_from_spec(data["x_dagger"], F.param_grid, F.param_location)
        y = F.apply(x_dag)
        model = NoiseModel(
            seed=int(data.get("seed", 0) if seed is None else seed),
            p=S.p,
            mode=data.get("noise", "scaled-random"),
        )
        ydelta = make_noisy(y, delta, model)
    elif "ydelta" in data:
        ydelta = function_from_spec(data["ydelta"], F.data_grid)
    else:
        raise QuasisolError("data section needs x_dagger or ydelta")

    rule_cfg = dict(cfg["rule"])
    if rule_cfg.get("rule") == "I" and rule_cfg.get("rho_known") is None and x_dag is not None:
        rule_cfg["rho_known"] = R.value(x_dag)
    name = rule_cfg.get("rule")
    payload = {}
    if name == "tikhonov":
        sol = tikhonov_solve(F, R, float(rule_cfg["alpha"]), ydelta, S, opts)
    elif name == "morozov":
        sol = morozov_solve(F, R, float(rule_cfg.get("tau", 2.0)), delta, ydelta, S, opts)
    elif name in ("I", "II", "III"):
        rule = rule_from_config(rule_cfg, delta=delta)
        selection = choose_rho(rule, F, R, ydelta, S, opts)
        sol = selection.solution
        payload["rho_star"] = selection.rho_star
        if x_dag is not None:
            payload["relations"] = verify_theorem1_relations(
                selection, x_dag, R, S, F, ydelta, rule.tau, delta
            ).to_dict()
    else:
        raise QuasisolError(f"unknown rule {name!r} for solve")
    payload["solution"] = sol.to_dict()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "solution.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"misfit={sol.misfit:.6e}  r_value={sol.r_value:.6e}  converged={sol.converged}")
    relations = payload.get("relations")
    if relations is not None and not relations["passed"]:
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quasisol")
    parser.add_argument("--seed", type=int, default=None, help="override config seeds")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--jobs", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("counterexample", "rates", "solve"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    handlers = {
        "counterexample": _cmd_counterexample,
        "rates": _cmd_rates,
        "solve": _cmd_solve,
    }
    try:
        cfg = _load_config(args.config)
        code = handlers[args.command](cfg, Path(args.out), args.format, args.seed, args.jobs)
    except QuasisolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
