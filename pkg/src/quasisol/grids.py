"""Uniform grids, discrete Laplacians, linear solves and discrete norms.

Everything downstream (forward operators, misfit, error measures) is built
on the types here.  Conventions:

* homogeneous Dirichlet boundaries are handled by elimination: vectors hold
  interior nodes only, ``n`` per axis, spacing ``h = length / (n + 1)``;
* all integral norms carry the quadrature weight ``h**dim`` so values are
  comparable across grids;
* 1D cell functions (``n + 1`` values at cell midpoints) are supported for
  coefficients living between the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, SolveFailure

__all__ = [
    "Grid",
    "GridFunction",
    "SparseOperator",
    "build_laplacian",
    "solve_spd",
    "lp_norm",
    "h_minus1_norm",
    "function_from_spec",
]


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of (0, length)^dim with n interior nodes per axis."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 1:
            raise DomainError(f"n must be >= 1, got {self.n}")
        if not self.length > 0:
            raise DomainError(f"length must be positive, got {self.length}")

    @property
    def h(self) -> float:
        return self.length / (self.n + 1)

    @property
    def num_nodes(self) -> int:
        return self.n**self.dim

    @property
    def num_cells(self) -> int:
        """Cells between nodes (1D only)."""
        if self.dim != 1:
            raise DomainError("cell functions are only defined on 1D grids")
        return self.n + 1

    @property
    def weight(self) -> float:
        """Quadrature weight per entry, h**dim."""
        return self.h**self.dim

    def nodes(self) -> np.ndarray:
        """Interior node coordinates; shape (n,) in 1D, (n**2, 2) in 2D."""
        x = self.h * np.arange(1, self.n + 1)
        if self.dim == 1:
            return x
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_midpoints(self) -> np.ndarray:
        """Midpoints of the n+1 cells (1D only)."""
        if self.dim != 1:
            raise DomainError("cell functions are only defined on 1D grids")
        return self.h * (np.arange(self.n + 1) + 0.5)


@dataclass(frozen=True)
class GridFunction:
    """Real-valued vector over grid nodes (or, in 1D, cell midpoints).

    Values are stored read-only; operations return new instances.
    """

    grid: Grid
    values: np.ndarray
    location: str = "node"  # "node" | "cell"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.location == "node":
            expected = self.grid.num_nodes
        elif self.location == "cell":
            expected = self.grid.num_cells
        else:
            raise DomainError(f"unknown location {self.location!r}")
        if vals.shape != (expected,):
            raise DomainError(
                f"values must have shape ({expected},), got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid, location: str = "node") -> "GridFunction":
        size = grid.num_nodes if location == "node" else grid.num_cells
        return cls(grid, np.zeros(size), location)

    @classmethod
    def constant(cls, grid: Grid, value: float, location: str = "node") -> "GridFunction":
        size = grid.num_nodes if location == "node" else grid.num_cells
        return cls(grid, np.full(size, float(value)), location)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, values, self.location)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


class SparseOperator:
    """Square sparse matrix with a symmetry flag and a cached factorization.

    The factorization (sparse LU) is computed on first solve and reused, so
    repeated solves against the same operator are cheap.
    """

    def __init__(self, matrix: sp.spmatrix, symmetric: bool = False):
        matrix = sp.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise DomainError(f"operator must be square, got {matrix.shape}")
        self.matrix = matrix
        self.symmetric = symmetric
        self._factor = None

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def factor(self):
        if self._factor is None:
            self._factor = spla.splu(sp.csc_matrix(self.matrix))
        return self._factor

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_laplacian(grid: Grid) -> SparseOperator:
    """Discrete negative Laplacian with homogeneous Dirichlet boundary.

    3-point stencil in 1D, 5-point in 2D, scaled by 1/h**2.  Symmetric
    positive definite; exact on quadratics at interior nodes.
    """
    n, h = grid.n, grid.h
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    lap1d = sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2
    if grid.dim == 1:
        return SparseOperator(lap1d, symmetric=True)
    eye = sp.identity(n, format="csr")
    lap2d = sp.kron(lap1d, eye) + sp.kron(eye, lap1d)
    return SparseOperator(sp.csr_matrix(lap2d), symmetric=True)


def solve_spd(A: SparseOperator, b: GridFunction, tol: float = 1e-10) -> GridFunction:
    """Solve A u = b for a symmetric positive definite operator.

    Uses the cached sparse factorization with one step of iterative
    refinement; the relative residual is verified against ``tol``.

    Raises
    ------
    SolveFailure
        If the verified relative residual exceeds ``tol``.
    """
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    rhs = b.values
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return b.with_values(np.zeros_like(rhs))
    lu = A.factor()
    u = lu.solve(rhs)
    residual = rhs - A.apply(u)
    rel = np.linalg.norm(residual) / norm_b
    if rel > tol:
        u = u + lu.solve(residual)
        rel = np.linalg.norm(rhs - A.apply(u)) / norm_b
        if rel > tol:
            raise SolveFailure("linear solve did not converge", rel)
    return b.with_values(u)


def lp_norm(v: GridFunction, p: float) -> float:
    """Discrete L^p norm with quadrature weight h**dim; max-norm for p=inf."""
    if p == np.inf:
        return float(np.max(np.abs(v.values))) if v.values.size else 0.0
    if p < 1:
        raise DomainError(f"p must be >= 1 or inf, got {p}")
    w = v.grid.weight
    return float((w * np.sum(np.abs(v.values) ** p)) ** (1.0 / p))


def h_minus1_norm(v: GridFunction, A: SparseOperator, tol: float = 1e-10) -> float:
    """Discrete H^{-1} norm sqrt(h**dim * <v, A^{-1} v>).

    ``A`` must be the discrete Dirichlet Laplacian on ``v``'s grid.
    """
    w = solve_spd(A, v, tol=tol)
    val = v.grid.weight * float(np.dot(v.values, w.values))
    # nonnegative up to roundoff since A is SPD
    return float(np.sqrt(max(val, 0.0)))


def function_from_spec(spec, grid: Grid, location: str = "node") -> GridFunction:
    """Build a GridFunction from a JSON-friendly spec.

    Accepted forms: a number (constant), a list of values, or a dict
    {"kind": "sin" | "sin_squared" | "step", "amplitude": a, "offset": o,
    "frequency": k, "split": s} evaluated on the 1D node or cell coordinates.
    """
    from .errors import ConfigError

    if isinstance(spec, (int, float)):
        return GridFunction.constant(grid, float(spec), location)
    if isinstance(spec, (list, tuple, np.ndarray)):
        return GridFunction(grid, np.asarray(spec, dtype=float), location)
    if isinstance(spec, dict):
        if grid.dim != 1:
            raise ConfigError("function specs by kind are 1D only")
        kind = spec.get("kind")
        pts = grid.nodes() if location == "node" else grid.cell_midpoints()
        amp = float(spec.get("amplitude", 1.0))
        off = float(spec.get("offset", 0.0))
        freq = float(spec.get("frequency", 1.0))
        if kind == "sin":
            vals = off + amp * np.sin(freq * np.pi * pts / grid.length)
        elif kind == "sin_squared":
            vals = off + amp * np.sin(freq * np.pi * pts / grid.length) ** 2
        elif kind == "step":
            split = float(spec.get("split", 0.5)) * grid.length
            vals = np.where(pts < split, off, off + amp)
        else:
            raise ConfigError(f"unknown function kind {kind!r}")
        return GridFunction(grid, vals, location)
    raise ConfigError(f"cannot interpret function spec {spec!r}")
