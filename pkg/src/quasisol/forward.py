"""Forward operators: three elliptic identification problems and a smoothing
integral operator with a cubic pointwise nonlinearity.

Every problem implements

* ``apply(x)``              state for parameter x,
* ``jac_apply(x, h)``       derivative action,
* ``jac_adjoint_apply(x, r)`` adjoint of the derivative under the h-weighted
  inner products on parameter and data space,
* ``is_feasible(x)`` / ``domain_box``  the admissible set, never silently
  clipped.

Inhomogeneous Dirichlet data is handled by adding an explicit lifting
(affine interpolant of the boundary values) so the linear algebra only ever
sees interior unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError
from .grids import (
    Grid,
    GridFunction,
    SparseOperator,
    build_laplacian,
    function_from_spec,
    solve_spd,
)

__all__ = [
    "ForwardProblem",
    "BoxConstraint",
    "SourceProblem",
    "PotentialProblem",
    "Diffusion1DProblem",
    "Kernel",
    "KernelProblem",
    "kernel_optimality_p",
    "problem_from_config",
]


@dataclass(frozen=True)
class BoxConstraint:
    """Entrywise bounds lower <= x <= upper."""

    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise DomainError(
                f"lower bound {self.lower} exceeds upper bound {self.upper}"
            )

    def contains(self, values: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(
            np.all(values >= self.lower - tol) and np.all(values <= self.upper + tol)
        )


class ForwardProblem:
    """Base class fixing the operator interface."""

    param_grid: Grid
    data_grid: Grid
    param_location: str = "node"
    # entrywise bounds defining D(F), or None if D(F) is the whole space
    domain_box: BoxConstraint | None = None

    def apply(self, x: GridFunction) -> GridFunction:
        raise NotImplementedError

    def jac_apply(self, x: GridFunction, hdir: GridFunction) -> GridFunction:
        raise NotImplementedError

    def jac_adjoint_apply(self, x: GridFunction, r: GridFunction) -> GridFunction:
        raise NotImplementedError

    def is_feasible(self, x: GridFunction, tol: float = 1e-12) -> bool:
        if self.domain_box is None:
            return True
        return self.domain_box.contains(x.values, tol)

    def check_feasible(self, x: GridFunction):
        if not self.is_feasible(x):
            raise DomainError(f"parameter outside D(F) of {type(self).__name__}")

    def zero_param(self) -> GridFunction:
        return GridFunction.zeros(self.param_grid, self.param_location)


class SourceProblem(ForwardProblem):
    """Identify the source b in  -Laplace(u) = b,  u = 0 on the boundary.

    Linear and self-adjoint: F = A^{-1} with A the discrete Dirichlet
    Laplacian, so the Jacobian action equals F itself.
    """

    def __init__(self, grid: Grid, solve_tol: float = 1e-12):
        self.param_grid = grid
        self.data_grid = grid
        self.laplacian = build_laplacian(grid)
        self.solve_tol = solve_tol

    def apply(self, b: GridFunction) -> GridFunction:
        return solve_spd(self.laplacian, b, tol=self.solve_tol)

    def jac_apply(self, x, hdir):
        return self.apply(hdir)

    def jac_adjoint_apply(self, x, r):
        return self.apply(r)


class PotentialProblem(ForwardProblem):
    """Identify the potential c >= 0 in  -Laplace(u) + c u = f,  u = g on the boundary.

    The boundary value g is either a constant (any dim) or a pair (g0, g1)
    in 1D; the affine lifting has zero discrete Laplacian, so the interior
    system is (A + diag(c)) v = f - c * lift  with  u = v + lift.
    """

    def __init__(self, grid: Grid, f: GridFunction, g=0.0, solve_tol: float = 1e-12):
        self.param_grid = grid
        self.data_grid = grid
        self.laplacian = build_laplacian(grid)
        self.f = f
        self.solve_tol = solve_tol
        self.domain_box = BoxConstraint(0.0, np.inf)
        self.lift = self._build_lift(grid, g)
        self._cache_key = None
        self._cache_val = None

    @staticmethod
    def _build_lift(grid: Grid, g) -> np.ndarray:
        if np.isscalar(g):
            return np.full(grid.num_nodes, float(g))
        g0, g1 = (float(v) for v in g)
        if grid.dim != 1:
            raise ConfigError("boundary pairs (g0, g1) are only supported in 1D")
        return g0 + (g1 - g0) * grid.nodes() / grid.length

    def _state(self, c: GridFunction) -> tuple:
        """Operator and full state at c; one-slot cache keyed on the values."""
        key = c.values.tobytes()
        if key != self._cache_key:
            M = SparseOperator(
                self.laplacian.matrix + sp.diags(c.values), symmetric=True
            )
            rhs = c.with_values(self.f.values - c.values * self.lift)
            v = solve_spd(M, rhs, tol=self.solve_tol)
            u = v.with_values(v.values + self.lift)
            self._cache_key, self._cache_val = key, (M, u)
        return self._cache_val

    def apply(self, c: GridFunction) -> GridFunction:
        self.check_feasible(c)
        return self._state(c)[1]

    def jac_apply(self, c: GridFunction, hdir: GridFunction) -> GridFunction:
        M, u = self._state(c)
        rhs = c.with_values(hdir.values * u.values)
        return -1.0 * solve_spd(M, rhs, tol=self.solve_tol)

    def jac_adjoint_apply(self, c: GridFunction, r: GridFunction) -> GridFunction:
        M, u = self._state(c)
        w = solve_spd(M, r, tol=self.solve_tol)
        return r.with_values(-u.values * w.values)

    def state_min(self, c: GridFunction) -> float:
        """Diagnostic: min of the state over interior nodes (rates in the
        potential problem presume the exact state stays away from zero)."""
        return float(np.min(self.apply(c).values))


class Diffusion1DProblem(ForwardProblem):
    """Identify the diffusivity a in  -(a u')' = f  on (0, length), u(0) = g0,
    u(length) = g1, with box bounds 0 < gamma_lower <= a <= gamma_upper.

    The coefficient lives at the n+1 cell midpoints; the conservative
    3-point scheme keeps the interior operator SPD and reproduces
    piecewise-linear two-slab solutions exactly.
    """

    param_location = "cell"

    def __init__(
        self,
        grid: Grid,
        f: GridFunction,
        g0: float = 0.0,
        g1: float = 0.0,
        gamma_lower: float = 0.1,
        gamma_upper: float = 10.0,
        solve_tol: float = 1e-12,
    ):
        if grid.dim != 1:
            raise ConfigError("diffusivity identification is implemented in 1D only")
        if not 0 < gamma_lower <= gamma_upper:
            raise DomainError("need 0 < gamma_lower <= gamma_upper")
        self.param_grid = grid
        self.data_grid = grid
        self.f = f
        self.g0 = float(g0)
        self.g1 = float(g1)
        self.domain_box = BoxConstraint(gamma_lower, gamma_upper)
        self.solve_tol = solve_tol
        self._cache_key = None
        self._cache_val = None

    def _operator(self, a: np.ndarray) -> SparseOperator:
        h = self.param_grid.h
        main = (a[:-1] + a[1:]) / h**2
        off = -a[1:-1] / h**2
        M = sp.diags([off, main, off], [-1, 0, 1], format="csr")
        return SparseOperator(M, symmetric=True)

    def _rhs(self, a: np.ndarray) -> np.ndarray:
        h = self.param_grid.h
        rhs = self.f.values.copy()
        rhs[0] += a[0] * self.g0 / h**2
        rhs[-1] += a[-1] * self.g1 / h**2
        return rhs

    def _full_gradient(self, u_int: np.ndarray) -> np.ndarray:
        """Cell gradients of the full state including boundary values."""
        h = self.param_grid.h
        full = np.concatenate([[self.g0], u_int, [self.g1]])
        return np.diff(full) / h

    def _state(self, a: GridFunction) -> tuple:
        key = a.values.tobytes()
        if key != self._cache_key:
            M = self._operator(a.values)
            rhs = GridFunction(self.param_grid, self._rhs(a.values))
            u = solve_spd(M, rhs, tol=self.solve_tol)
            self._cache_key, self._cache_val = key, (M, u)
        return self._cache_val

    def apply(self, a: GridFunction) -> GridFunction:
        self.check_feasible(a)
        return self._state(a)[1]

    def jac_apply(self, a: GridFunction, hdir: GridFunction) -> GridFunction:
        M, u = self._state(a)
        grad = self._full_gradient(u.values)
        h = self.param_grid.h
        # flux perturbation hdir * grad, divergence back onto nodes
        flux = hdir.values * grad
        rhs = GridFunction(self.param_grid, -np.diff(flux) / h)
        return -1.0 * solve_spd(M, rhs, tol=self.solve_tol)

    def jac_adjoint_apply(self, a: GridFunction, r: GridFunction) -> GridFunction:
        M, u = self._state(a)
        grad = self._full_gradient(u.values)
        h = self.param_grid.h
        w = solve_spd(M, r, tol=self.solve_tol)
        # interior difference of w (zero boundary), one value per cell
        full_w = np.concatenate([[0.0], w.values, [0.0]])
        dw = np.diff(full_w) / h
        return GridFunction(self.param_grid, -grad * dw, "cell")


class Kernel:
    """Nonnegative convolution-type kernel matrix with unit row sums.

    Rows are the quadrature weights of s -> Phi(t_i - s); each row is
    renormalized to sum exactly to one, which makes constants reproduce
    exactly under the operator.
    """

    def __init__(self, weights: np.ndarray, tol: float = 1e-12):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise ConfigError(f"kernel weights must be square, got {weights.shape}")
        if np.any(weights < 0):
            raise ConfigError("kernel weights must be nonnegative")
        rows = weights.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > tol):
            raise ConfigError("kernel rows must sum to 1 (after quadrature weighting)")
        self.weights = weights

    @classmethod
    def gaussian(cls, grid: Grid, sigma: float) -> "Kernel":
        if grid.dim != 1:
            raise ConfigError("the kernel operator is implemented in 1D only")
        if sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        t = grid.nodes()
        raw = np.exp(-((t[:, None] - t[None, :]) ** 2) / (2 * sigma**2)) * grid.h
        return cls(raw / raw.sum(axis=1, keepdims=True))

    @classmethod
    def identity(cls, grid: Grid) -> "Kernel":
        return cls(np.eye(grid.num_nodes))


class KernelProblem(ForwardProblem):
    """F(x)(t) = integral of Phi(t - s) f(x(s)) ds with f(x) = (x - x0)^3 + y.

    The smoothing kernel makes the composition compact-like while the cubic
    keeps it nonlinear; this is the operator whose constrained minimizers and
    penalized minimizers provably differ.
    """

    def __init__(self, grid: Grid, kernel: Kernel, x0: float, y: float = 0.0):
        if kernel.weights.shape[0] != grid.num_nodes:
            raise ConfigError("kernel size does not match grid")
        self.param_grid = grid
        self.data_grid = grid
        self.kernel = kernel
        self.x0 = float(x0)
        self.y = float(y)

    def _f(self, values: np.ndarray) -> np.ndarray:
        return (values - self.x0) ** 3 + self.y

    def _fprime(self, values: np.ndarray) -> np.ndarray:
        return 3.0 * (values - self.x0) ** 2

    def apply(self, x: GridFunction) -> GridFunction:
        return x.with_values(self.kernel.weights @ self._f(x.values))

    def jac_apply(self, x: GridFunction, hdir: GridFunction) -> GridFunction:
        return x.with_values(self.kernel.weights @ (self._fprime(x.values) * hdir.values))

    def jac_adjoint_apply(self, x: GridFunction, r: GridFunction) -> GridFunction:
        return x.with_values(self._fprime(x.values) * (self.kernel.weights.T @ r.values))


def kernel_optimality_p(
    problem: KernelProblem, x: GridFunction, ydelta: GridFunction
) -> GridFunction:
    """First-order optimality field of the constrained problem at x:

        p(s) = -f'(x(s)) * K[ K[f(x)] - ydelta ](s)

    where K integrates against the normalized kernel.  For constant data
    ydelta = y + delta and any x with max|x| <= x0 this is entrywise
    >= 3 (x - x0)^2 delta >= 0, vanishing exactly where x = x0.
    """
    residual = problem.apply(x).values - ydelta.values
    smoothed = problem.kernel.weights @ residual
    return x.with_values(-problem._fprime(x.values) * smoothed)


def problem_from_config(cfg: dict) -> ForwardProblem:
    """Construct a forward problem from a JSON config document.

    Expected keys: "problem" in {"source", "potential", "diffusion1d",
    "kernel"}, "n", "length", and the per-problem fields "f", "g",
    "kernel_sigma", "x0", "y", "gamma_lower", "gamma_upper".
    """
    kind = cfg.get("problem")
    n = int(cfg.get("n", 63))
    length = float(cfg.get("length", 1.0))
    dim = int(cfg.get("dim", 1))
    grid = Grid(dim, n, length)
    if kind == "source":
        return SourceProblem(grid)
    if kind == "potential":
        f = function_from_spec(cfg.get("f", 1.0), grid)
        g = cfg.get("g", 0.0)
        return PotentialProblem(grid, f, g if np.isscalar(g) else tuple(g))
    if kind == "diffusion1d":
        f = function_from_spec(cfg.get("f", 1.0), grid)
        g = cfg.get("g", [0.0, 0.0])
        g0, g1 = (float(g), float(g)) if np.isscalar(g) else (float(g[0]), float(g[1]))
        return Diffusion1DProblem(
            grid,
            f,
            g0,
            g1,
            gamma_lower=float(cfg.get("gamma_lower", 0.1)),
            gamma_upper=float(cfg.get("gamma_upper", 10.0)),
        )
    if kind == "kernel":
        sigma = cfg.get("kernel_sigma")
        kernel = Kernel.identity(grid) if sigma is None else Kernel.gaussian(grid, float(sigma))
        return KernelProblem(grid, kernel, float(cfg["x0"]), float(cfg.get("y", 0.0)))
    raise ConfigError(f"unknown problem kind {kind!r}")
