"""Constrained and penalized solvers for the three regularization methods.

* ``ivanov_solve``    minimize the data misfit over {R <= rho} intersected
  with the operator domain (spectral projected gradient);
* ``tikhonov_solve``  minimize misfit**2/2 + alpha * penalty (proximal
  gradient; the Hilbertian regularizer is penalized in squared form, the
  polyhedral ones by their plain value);
* ``morozov_solve``   minimize R subject to misfit <= tau*delta, realized as
  a bisection over the Ivanov radius, valid by the monotonicity of the
  radius-to-misfit value function;
* ``scalar_oracle``   brute-force grid + golden-section minimizer used to
  certify one-dimensional instances.

Descent always acts on the squared-norm surrogate of the misfit, whose
constrained minimizers coincide with those of the plain norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, InfeasibleError
from .forward import ForwardProblem, SourceProblem
from .grids import GridFunction, lp_norm
from .regularizers import (
    BVIncrements1D,
    L2Shifted,
    Regularizer,
    SupShifted,
    project_l1_ball,
)

__all__ = [
    "MisfitS",
    "SolverOptions",
    "RegSolution",
    "ivanov_solve",
    "tikhonov_solve",
    "morozov_solve",
    "scalar_oracle",
    "smallest_feasible_radius",
]

MOROZOV_DELTA_FLOOR = 1e-12


@dataclass(frozen=True)
class MisfitS:
    """Data misfit S(y1, y2) = h-weighted L^p distance (power fixed to 1).

    As a norm it satisfies the generalized triangle inequality with
    constant 1.
    """

    p: float = 2.0

    def __post_init__(self):
        if self.p != np.inf and self.p < 1:
            raise DomainError(f"p must be >= 1 or inf, got {self.p}")

    def value(self, y1: GridFunction, y2: GridFunction) -> float:
        return lp_norm(y1 - y2, self.p)

    __call__ = value


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 3000
    step_init: float = 1.0
    backtrack: float = 0.5
    gtol: float = 1e-9
    stagnation_tol: float = 1e-14
    multistart: int = 1
    seed: int = 0
    armijo: float = 1e-4
    step_min: float = 1e-16
    step_max: float = 1e10
    x_init: GridFunction | None = None

    def __post_init__(self):
        if self.max_iter <= 0 or self.step_init <= 0 or self.gtol <= 0:
            raise DomainError("max_iter, step_init and gtol must be positive")
        if not 0 < self.backtrack < 1:
            raise DomainError("backtrack factor must lie in (0, 1)")
        if self.multistart < 1:
            raise DomainError("multistart must be >= 1")


@dataclass(frozen=True)
class RegSolution:
    """Result record of one regularized solve."""

    x: GridFunction
    misfit: float
    r_value: float
    param: float
    iterations: int
    converged: bool
    trace: tuple
    stationarity: float = math.nan
    heuristic: bool = False
    bisection_trace: tuple | None = None

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "x": self.x.values.tolist(),
            "misfit": self.misfit,
            "r_value": self.r_value,
            "param": self.param,
            "iterations": self.iterations,
            "converged": self.converged,
            "stationarity": self.stationarity,
            "heuristic": self.heuristic,
        }
        if include_trace:
            out["trace"] = [list(row) for row in self.trace]
            if self.bisection_trace is not None:
                out["bisection_trace"] = [list(row) for row in self.bisection_trace]
        return out


def _wdot(w: float, a: np.ndarray, b: np.ndarray) -> float:
    return w * float(np.dot(a, b))


def _wnorm(w: float, a: np.ndarray) -> float:
    return math.sqrt(max(_wdot(w, a, a), 0.0))


def _dykstra(x: GridFunction, proj_a, proj_b, tol: float = 1e-13, max_iter: int = 2000):
    """Dykstra's alternating projection onto the intersection of two convex
    sets; ends on proj_b so that set is met exactly."""
    y = x
    p = np.zeros_like(x.values)
    q = np.zeros_like(x.values)
    for _ in range(max_iter):
        z = proj_a(y.with_values(y.values + p))
        p = y.values + p - z.values
        y_new = proj_b(z.with_values(z.values + q))
        q = z.values + q - y_new.values
        change = np.max(np.abs(y_new.values - y.values))
        y = y_new
        if change <= tol:
            break
    return y


def make_feasible_projector(F: ForwardProblem, R: Regularizer, rho: float):
    """Projector onto {R <= rho} intersected with D(F).

    Box-with-box intersections are merged exactly; other combinations use
    Dykstra's method.  Raises DomainError if the intersection is empty.
    """
    if rho < 0:
        raise DomainError(f"rho must be nonnegative, got {rho}")
    box = F.domain_box
    if box is None:
        return lambda x: R.project(x, rho)
    if isinstance(R, SupShifted):

        def project(x: GridFunction) -> GridFunction:
            c = R._center_values(x)
            lo = np.maximum(c - rho, box.lower)
            hi = np.minimum(c + rho, box.upper)
            if np.any(lo > hi):
                raise DomainError(
                    "empty intersection of the R-ball with the operator domain"
                )
            return x.with_values(np.clip(x.values, lo, hi))

        return project

    def clip_box(x: GridFunction) -> GridFunction:
        return x.with_values(np.clip(x.values, box.lower, box.upper))

    def project(x: GridFunction) -> GridFunction:
        y = _dykstra(x, lambda v: R.project(v, rho), clip_box)
        if not R.is_feasible(y, rho, tol=1e-9 * max(1.0, rho)):
            raise DomainError(
                "empty intersection of the R-ball with the operator domain"
            )
        return y

    return project


def _prox_spg(fgrad, prox, x0: GridFunction, w: float, opts: SolverOptions, r_of):
    """Monotone proximal spectral-gradient descent.

    ``fgrad(x) -> (smooth value, gradient, misfit)``; ``prox(v, t)`` is the
    scaled proximal map (a plain projection may ignore ``t``); ``r_of(x)``
    supplies the regularizer value recorded in the trace.
    """
    x = prox(x0, 1.0)
    f, g, mis = fgrad(x)
    trace = [(mis, r_of(x))]
    t = opts.step_init
    stagnant = 0
    converged = False
    res = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        z_ref = prox(x.with_values(x.values - g.values), 1.0)
        res = _wnorm(w, z_ref.values - x.values)
        if res <= opts.gtol:
            converged = True
            break
        accepted = False
        while t >= opts.step_min:
            z = prox(x.with_values(x.values - t * g.values), t)
            dz = z.values - x.values
            f_z, g_z, mis_z = fgrad(z)
            bound = f + _wdot(w, g.values, dz) + _wdot(w, dz, dz) / (2 * t)
            if f_z <= bound + 1e-15 * max(1.0, abs(f)):
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            break
        s = z.values - x.values
        yv = g_z.values - g.values
        sty = _wdot(w, s, yv)
        t_acc = t
        if sty > 0:
            t = min(opts.step_max, max(opts.step_min, _wdot(w, s, s) / sty))
        else:
            t = min(opts.step_max, t_acc / opts.backtrack)
        decrease = f - f_z
        x, f, g, mis = z, f_z, g_z, mis_z
        trace.append((mis, r_of(x)))
        if decrease <= opts.stagnation_tol * max(1.0, abs(f)):
            stagnant += 1
            if stagnant >= 10:
                z_ref = prox(x.with_values(x.values - g.values), 1.0)
                res = _wnorm(w, z_ref.values - x.values)
                converged = res <= opts.gtol
                break
        else:
            stagnant = 0
    return x, tuple(trace), it, converged, res, f


def _run_multistart(fgrad, prox, objective_of, x_start, w, opts, R):
    """Run _prox_spg from one or several seeded starts; best objective wins,
    ties broken by smaller R-value then lexicographic iterate."""
    rng = np.random.default_rng(opts.seed)
    best = None
    best_key = None
    for k in range(opts.multistart):
        if k == 0:
            x0 = x_start
        else:
            spread = 0.5 * max(1.0, float(np.max(np.abs(x_start.values))))
            x0 = x_start.with_values(
                x_start.values + spread * rng.standard_normal(x_start.values.size)
            )
        result = _prox_spg(fgrad, prox, x0, w, opts, lambda x: R.value(x))
        x = result[0]
        key = (objective_of(result[5], x), R.value(x), tuple(x.values))
        if best is None or key < best_key:
            best, best_key = result, key
    return best


def ivanov_solve(
    F: ForwardProblem,
    R: Regularizer,
    rho: float,
    ydelta: GridFunction,
    S: MisfitS = MisfitS(2.0),
    opts: SolverOptions | None = None,
) -> RegSolution:
    """Minimize S(F(x), ydelta) subject to R(x) <= rho and x in D(F).

    Non-convergence yields a flagged result, not an exception; rho < 0 or an
    empty feasible set raises DomainError.
    """
    opts = opts or SolverOptions()
    if S.p != 2:
        raise ConfigError("gradient-based solvers require the p=2 misfit")
    project = make_feasible_projector(F, R, rho)
    w = F.param_grid.weight

    def fgrad(x: GridFunction):
        r = F.apply(x) - ydelta
        mis = lp_norm(r, 2)
        g = F.jac_adjoint_apply(x, r)
        return 0.5 * mis**2, g, mis

    def prox(v: GridFunction, t: float) -> GridFunction:
        return project(v)

    x_start = opts.x_init if opts.x_init is not None else R.center_point(F.zero_param())
    x, trace, its, conv, res, _ = _run_multistart(
        fgrad, prox, lambda f, x: f, x_start, w, opts, R
    )
    return RegSolution(
        x=x,
        misfit=S.value(F.apply(x), ydelta),
        r_value=R.value(x),
        param=rho,
        iterations=its,
        converged=conv,
        trace=trace,
        stationarity=res,
    )


def tikhonov_solve(
    F: ForwardProblem,
    R: Regularizer,
    alpha: float,
    ydelta: GridFunction,
    S: MisfitS = MisfitS(2.0),
    opts: SolverOptions | None = None,
) -> RegSolution:
    """Minimize 1/2 S(F(x), ydelta)^2 + alpha * penalty(x) over D(F).

    The penalty is value(x)**2 / 2 for the Hilbertian L2 kind (classical
    ridge form) and the plain value for the sup kind.  The BV kind has no
    cheap proximal map and is not supported here.
    """
    opts = opts or SolverOptions()
    if S.p != 2:
        raise ConfigError("gradient-based solvers require the p=2 misfit")
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if isinstance(R, BVIncrements1D):
        raise ConfigError("tikhonov_solve does not support the BV regularizer")
    w = F.param_grid.weight
    box = F.domain_box

    if isinstance(R, L2Shifted):
        # smooth squared penalty: gradient alpha * (x - c) in the weighted metric
        def fgrad(x: GridFunction):
            r = F.apply(x) - ydelta
            mis = lp_norm(r, 2)
            g = F.jac_adjoint_apply(x, r)
            c = R._center_values(x)
            g = g.with_values(g.values + alpha * (x.values - c))
            f = 0.5 * mis**2 + 0.5 * alpha * R.value(x) ** 2
            return f, g, mis

        if box is None:
            prox = lambda v, t: v
        else:
            prox = lambda v, t: v.with_values(
                np.clip(v.values, box.lower, box.upper)
            )
        penalty = lambda x: 0.5 * alpha * R.value(x) ** 2
    elif isinstance(R, SupShifted):
        if box is not None:
            raise ConfigError(
                "tikhonov_solve with the sup regularizer requires an unconstrained "
                "operator domain"
            )

        def fgrad(x: GridFunction):
            r = F.apply(x) - ydelta
            mis = lp_norm(r, 2)
            g = F.jac_adjoint_apply(x, r)
            return 0.5 * mis**2, g, mis

        def prox(v: GridFunction, t: float) -> GridFunction:
            c = R._center_values(v)
            b = v.values - c
            shrunk = b - project_l1_ball(b, t * alpha / w)
            return v.with_values(c + shrunk)

        penalty = lambda x: alpha * R.value(x)
    else:
        raise ConfigError(f"unsupported regularizer kind {R.kind!r}")

    x_start = opts.x_init if opts.x_init is not None else R.center_point(F.zero_param())
    x, trace, its, conv, res, _ = _run_multistart(
        fgrad, prox, lambda f, x: f + (0.0 if isinstance(R, L2Shifted) else penalty(x)),
        x_start, w, opts, R,
    )
    return RegSolution(
        x=x,
        misfit=S.value(F.apply(x), ydelta),
        r_value=R.value(x),
        param=alpha,
        iterations=its,
        converged=conv,
        trace=trace,
        stationarity=res,
    )


def smallest_feasible_radius(
    eval_at,
    target: float,
    eps: float,
    rho0: float = 0.0,
    grow_cap_pow: int = 40,
):
    """Locate the smallest radius rho with misfit(rho) <= target by geometric
    growth followed by bisection; valid when the value function is monotone.

    ``eval_at(rho, x_init) -> RegSolution``.  Returns
    (rho_star, solution_at_rho_star, trace) with trace in evaluation order;
    an infeasible radius (empty constraint intersection) counts as infinite
    misfit.
    """
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

    sol_lo = evaluate(0.0)
    if sol_lo is not None and sol_lo.misfit <= target:
        return 0.0, sol_lo, trace
    hi = max(rho0, eps)
    cap = eps * 2.0**grow_cap_pow
    sol_hi = evaluate(hi)
    while sol_hi is None or sol_hi.misfit > target:
        hi *= 2.0
        if hi > cap:
            raise InfeasibleError(
                f"no radius up to {cap:.3e} reaches misfit <= {target:.3e}"
            )
        sol_hi = evaluate(hi)
    lo = hi / 2.0 if hi > max(rho0, eps) else 0.0
    while hi - lo > eps:
        mid = 0.5 * (lo + hi)
        sol_mid = evaluate(mid)
        if sol_mid is not None and sol_mid.misfit <= target:
            hi, sol_hi = mid, sol_mid
        else:
            lo = mid
    return hi, sol_hi, trace


def morozov_solve(
    F: ForwardProblem,
    R: Regularizer,
    tau: float,
    delta: float,
    ydelta: GridFunction,
    S: MisfitS = MisfitS(2.0),
    opts: SolverOptions | None = None,
    inner_solver=None,
) -> RegSolution:
    """Minimize R(x) subject to S(F(x), ydelta) <= tau * delta.

    Realized as the smallest Ivanov radius whose minimal misfit meets the
    discrepancy bound; the two problems coincide wherever the value function
    is monotone and continuous.  On nonlinear problems the result is flagged
    heuristic.  ``inner_solver(F, R, rho, ydelta, S, opts)`` may replace the
    default Ivanov solver (e.g. by an exact one-dimensional oracle).
    """
    opts = opts or SolverOptions()
    if tau < 1:
        raise DomainError(f"tau must be >= 1, got {tau}")
    if delta < 0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    target = max(tau * delta, MOROZOV_DELTA_FLOOR)
    solver = inner_solver or ivanov_solve
    eps = 1e-6 * max(1.0, abs(target))

    def eval_at(rho, x_init):
        local = opts if x_init is None else _with_x_init(opts, x_init)
        return solver(F, R, rho, ydelta, S, local)

    rho_star, sol, trace = smallest_feasible_radius(eval_at, target, eps)
    return RegSolution(
        x=sol.x,
        misfit=sol.misfit,
        r_value=sol.r_value,
        param=tau * delta,
        iterations=sol.iterations,
        converged=sol.converged,
        trace=sol.trace,
        stationarity=sol.stationarity,
        heuristic=not isinstance(F, SourceProblem),
        bisection_trace=tuple(trace),
    )


def _with_x_init(opts: SolverOptions, x_init: GridFunction) -> SolverOptions:
    from dataclasses import replace

    return replace(opts, x_init=x_init)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def scalar_oracle(objective, lo: float, hi: float, n_grid: int = 2001):
    """Global minimizer of a scalar function on [lo, hi]: exhaustive grid scan
    refined by golden-section search to an interval of width 1e-10.

    Deterministic; returns (argmin, min value).
    """
    if not lo < hi:
        raise DomainError(f"need lo < hi, got [{lo}, {hi}]")
    if n_grid < 1000:
        raise DomainError(f"n_grid must be >= 1000, got {n_grid}")
    xs = np.linspace(lo, hi, n_grid)
    vals = np.array([objective(x) for x in xs])
    i = int(np.argmin(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, n_grid - 1)]
    # golden-section on the bracketing interval
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > 1e-10:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = objective(d)
    xm = 0.5 * (a + b)
    return xm, objective(xm)
