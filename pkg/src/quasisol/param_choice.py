"""Radius-choice rules for the constrained (quasi-solution) method.

Three variants are supported:

* ``I``   -- radius equal to the known regularizer value of the exact
  solution; the residual then stays below the noise level;
* ``II``  -- smallest radius whose minimal misfit meets the discrepancy
  bound tau*delta, located by monotone bisection;
* ``III`` -- any radius placing the misfit inside (delta, tau*delta];
  accepted as soon as a bisection iterate lands in the band.

``verify_theorem1_relations`` re-checks the guaranteed inequalities
(regularizer bound, discrepancy bound, radius ordering, misfit
monotonicity) on a finished selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, DomainError, InfeasibleError, QuasisolError
from .forward import ForwardProblem, SourceProblem
from .grids import GridFunction
from .regularizers import Regularizer
from .solvers import (
    MOROZOV_DELTA_FLOOR,
    MisfitS,
    RegSolution,
    SolverOptions,
    ivanov_solve,
    smallest_feasible_radius,
)

__all__ = [
    "RhoRule",
    "RhoSelection",
    "choose_rho",
    "verify_theorem1_relations",
    "Theorem1Report",
    "rule_from_config",
]

MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class RhoRule:
    """Specification of the radius-choice rule."""

    variant: str  # "I" | "II" | "III"
    tau: float = 2.0
    delta: float = 0.0
    rho_known: float | None = None
    rho0: float = 0.0
    eps_rho: float = 1e-6

    def __post_init__(self):
        if self.variant not in ("I", "II", "III"):
            raise ConfigError(f"unknown rule variant {self.variant!r}")
        if self.tau < 1:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        if self.variant == "I" and self.rho_known is None:
            raise ConfigError("variant I requires rho_known = R(x_dagger)")
        if self.variant == "III" and self.tau <= 1:
            raise ConfigError(
                "variant III needs tau > 1 so the target band (delta, tau*delta] "
                "is not a single point"
            )
        if self.delta < 0 or self.rho0 < 0 or self.eps_rho <= 0:
            raise DomainError("delta, rho0 must be >= 0 and eps_rho > 0")


@dataclass(frozen=True)
class RhoSelection:
    rho_star: float
    solution: RegSolution
    rule: RhoRule
    bisection_trace: tuple
    monotone_ok: bool
    heuristic: bool

    @property
    def effective_eps(self) -> float:
        scale = self.rule.rho_known if self.rule.rho_known is not None else 1.0
        return self.rule.eps_rho * max(1.0, scale)


def _trace_monotone(trace) -> bool:
    """Misfit non-increasing in rho over the finite trace entries."""
    finite = sorted((r, m) for r, m in trace if math.isfinite(m))
    for (_, m1), (_, m2) in zip(finite, finite[1:]):
        if m2 > m1 + MONOTONE_SLACK * max(1.0, m1):
            return False
    return True


def choose_rho(
    rule: RhoRule,
    F: ForwardProblem,
    R: Regularizer,
    ydelta: GridFunction,
    S: MisfitS = MisfitS(2.0),
    opts: SolverOptions | None = None,
    inner_solver=None,
) -> RhoSelection:
    """Select the constraint radius according to the rule and solve at it."""
    opts = opts or SolverOptions()
    solver = inner_solver or ivanov_solve
    heuristic = not isinstance(F, SourceProblem)
    eps = rule.eps_rho * max(1.0, rule.rho_known or 0.0, rule.rho0)

    def eval_at(rho, x_init):
        local = opts if x_init is None else replace(opts, x_init=x_init)
        return solver(F, R, rho, ydelta, S, local)

    if rule.variant == "I":
        sol = eval_at(rule.rho_known, None)
        if sol.misfit > rule.delta + 1e-8:
            raise QuasisolError(
                f"rule I misfit {sol.misfit:.3e} exceeds delta {rule.delta:.3e}; "
                "rho_known is not the regularizer value of an exact solution "
                "or the inner solver failed"
            )
        trace = ((rule.rho_known, sol.misfit),)
        return RhoSelection(rule.rho_known, sol, rule, trace, True, heuristic)

    target = max(rule.tau * rule.delta, MOROZOV_DELTA_FLOOR)

    if rule.variant == "II":
        rho_star, sol, trace = smallest_feasible_radius(
            eval_at, target, eps, rho0=rule.rho0
        )
        return RhoSelection(
            rho_star, sol, rule, tuple(trace), _trace_monotone(trace), heuristic
        )

    # variant III
    if rule.delta <= 0:
        raise DomainError("variant III requires a positive noise level")
    trace = []
    warm = None

    def evaluate(rho):
        nonlocal warm
        try:
            sol = eval_at(rho, warm)
        except DomainError:
            trace.append((rho, math.inf))
            return None
        warm = sol.x
        trace.append((rho, sol.misfit))
        return sol

    def in_band(sol) -> bool:
        return sol is not None and rule.delta < sol.misfit <= target

    sol0 = evaluate(rule.rho0)
    if sol0 is not None and sol0.misfit <= rule.delta:
        raise DomainError(
            "misfit at rho0 is already <= delta; rule III presumes the start "
            "radius under-fits the data"
        )
    if in_band(sol0):
        return RhoSelection(
            rule.rho0, sol0, rule, tuple(trace), _trace_monotone(trace), heuristic
        )
    # grow an upper bracket with misfit <= tau*delta
    lo = rule.rho0
    hi = max(rule.rho0, eps)
    cap = eps * 2.0**40
    sol_hi = evaluate(hi) if hi > rule.rho0 else sol0
    while not (sol_hi is not None and sol_hi.misfit <= target):
        lo = hi
        hi *= 2.0
        if hi > cap:
            raise InfeasibleError(
                f"no radius up to {cap:.3e} reaches misfit <= {target:.3e}"
            )
        sol_hi = evaluate(hi)
    if in_band(sol_hi):
        return RhoSelection(
            hi, sol_hi, rule, tuple(trace), _trace_monotone(trace), heuristic
        )
    # bisect for an iterate inside the band (hi currently over-fits: misfit <= delta)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        sol_mid = evaluate(mid)
        if in_band(sol_mid):
            return RhoSelection(
                mid, sol_mid, rule, tuple(trace), _trace_monotone(trace), heuristic
            )
        if sol_mid is None or sol_mid.misfit > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    raise InfeasibleError(
        "rule III bisection found no radius with misfit in (delta, tau*delta]; "
        "the value function appears to jump across the band"
    )


@dataclass(frozen=True)
class Theorem1Report:
    """Margins and pass flags for the guaranteed relations of a selection."""

    r_ok: bool
    r_margin: float
    discrepancy_ok: bool
    discrepancy_margin: float
    rho_ok: bool
    rho_margin: float
    monotone_ok: bool

    @property
    def passed(self) -> bool:
        return self.r_ok and self.discrepancy_ok and self.rho_ok and self.monotone_ok

    def to_dict(self) -> dict:
        return {
            "r_ok": self.r_ok,
            "r_margin": self.r_margin,
            "discrepancy_ok": self.discrepancy_ok,
            "discrepancy_margin": self.discrepancy_margin,
            "rho_ok": self.rho_ok,
            "rho_margin": self.rho_margin,
            "monotone_ok": self.monotone_ok,
            "passed": self.passed,
        }


def verify_theorem1_relations(
    selection,
    x_dagger: GridFunction,
    R: Regularizer,
    S: MisfitS,
    F: ForwardProblem,
    ydelta: GridFunction,
    tau: float,
    delta: float,
    tol: float = 1e-6,
) -> Theorem1Report:
    """Check the guaranteed relations against a known exact solution.

    Accepts a RhoSelection (rules I/II/III) or a RegSolution from the
    residual method; the applicable discrepancy bound is delta for rule I
    and tau*delta otherwise.
    """
    r_dagger = R.value(x_dagger)
    if isinstance(selection, RhoSelection):
        sol = selection.solution
        rho_star = selection.rho_star
        bound = delta if selection.rule.variant == "I" else max(
            tau * delta, MOROZOV_DELTA_FLOOR
        )
        eps = selection.effective_eps
        trace = selection.bisection_trace
        monotone = selection.monotone_ok
    else:
        sol = selection
        rho_star = None
        bound = max(tau * delta, MOROZOV_DELTA_FLOOR)
        eps = 1e-6 * max(1.0, r_dagger)
        trace = selection.bisection_trace or ()
        monotone = _trace_monotone(trace) if trace else True

    r_margin = r_dagger + tol - sol.r_value
    s_margin = bound + tol - sol.misfit
    if rho_star is None:
        rho_margin = math.inf
        rho_ok = True
    else:
        rho_margin = r_dagger + eps - rho_star
        rho_ok = rho_margin >= 0
    return Theorem1Report(
        r_ok=r_margin >= 0,
        r_margin=r_margin,
        discrepancy_ok=s_margin >= 0,
        discrepancy_margin=s_margin,
        rho_ok=rho_ok,
        rho_margin=rho_margin,
        monotone_ok=monotone,
    )


def rule_from_config(cfg: dict, delta: float | None = None) -> RhoRule | dict:
    """Parse a rule spec from JSON.

    Variants "I"/"II"/"III" yield a RhoRule; "morozov" and
    "tikhonov_discrepancy" are handled by their own solvers, so those return
    a plain dict with the parsed fields.
    """
    name = cfg.get("rule")
    tau = float(cfg.get("tau", 2.0))
    d = float(cfg.get("delta", 0.0) if delta is None else delta)
    if name in ("I", "II", "III"):
        return RhoRule(
            variant=name,
            tau=tau,
            delta=d,
            rho_known=(None if cfg.get("rho_known") is None else float(cfg["rho_known"])),
            rho0=float(cfg.get("rho0", 0.0)),
            eps_rho=float(cfg.get("eps_rho", 1e-6)),
        )
    if name == "morozov":
        return {"rule": "morozov", "tau": tau, "delta": d}
    if name == "tikhonov_discrepancy":
        grid_cfg = cfg.get("alpha_grid")
        if not grid_cfg:
            raise ConfigError("tikhonov_discrepancy requires an alpha_grid")
        return {
            "rule": "tikhonov_discrepancy",
            "tau": tau,
            "delta": d,
            "alpha_grid": [float(a) for a in grid_cfg],
        }
    raise ConfigError(f"unknown rule {name!r}")
