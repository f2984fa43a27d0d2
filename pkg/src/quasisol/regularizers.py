"""Regularization functionals with exact projections onto their sublevel sets.

Three kinds are provided:

* ``SupShifted``     -- max-norm distance from a center function,
* ``L2Shifted``      -- h-weighted Euclidean distance from a center,
* ``BVIncrements1D`` -- discrete bounded-variation norm: weighted first-node
  anchor plus total variation of the increments.

Each kind knows its value, a feasibility test for the ball {R <= rho}, the
Euclidean projection onto that ball, and the radial scaling map that
transfers feasibility between nearby radii.  The BV projection works in
increment coordinates (anchor, successive differences), where the ball is an
L1 ball and the sorted-threshold projection is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .grids import Grid, GridFunction, function_from_spec

__all__ = [
    "Regularizer",
    "SupShifted",
    "L2Shifted",
    "BVIncrements1D",
    "SubgradientElement",
    "project_l1_ball",
    "bregman",
    "regularizer_from_config",
]

FEAS_TOL = 1e-12


def project_l1_ball(d: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of ``d`` onto the L1 ball of the given radius.

    Sorted-threshold method: the projection is the soft threshold
    ``sign(d) * max(|d| - theta, 0)`` with theta chosen so the result has
    L1 norm exactly ``radius`` (or theta = 0 on feasible input).
    """
    if radius < 0:
        raise DomainError(f"radius must be nonnegative, got {radius}")
    a = np.abs(d)
    if a.sum() <= radius:
        return d.copy()
    u = np.sort(a)[::-1]
    cumsum = np.cumsum(u)
    k = np.arange(1, d.size + 1)
    candidates = (cumsum - radius) / k
    rho_idx = np.nonzero(u > candidates)[0][-1]
    theta = candidates[rho_idx]
    return np.sign(d) * np.maximum(a - theta, 0.0)


class Regularizer:
    """Common interface for the regularization functionals."""

    kind: str = ""

    def value(self, x: GridFunction) -> float:
        raise NotImplementedError

    def is_feasible(self, x: GridFunction, rho: float, tol: float = FEAS_TOL) -> bool:
        return self.value(x) <= rho + tol

    def project(self, x: GridFunction, rho: float) -> GridFunction:
        raise NotImplementedError

    def center_point(self, x: GridFunction) -> GridFunction:
        """The point with R = 0, shaped like ``x``."""
        raise NotImplementedError

    def scale_map(self, x: GridFunction, rho: float, rho_new: float) -> GridFunction:
        """Radially rescale a feasible point from radius rho to rho_new.

        For these (1-homogeneous) norm kinds the map is
        center + (rho_new / rho) * (x - center).
        """
        if rho <= 0 or rho_new <= 0:
            raise DomainError("scale_map requires positive radii")
        if self.value(x) > rho + 1e-9 * max(1.0, rho):
            raise DomainError("scale_map input must be feasible for radius rho")
        if rho_new == rho:
            return x
        c = self.center_point(x)
        return c.with_values(c.values + (rho_new / rho) * (x.values - c.values))

    def _center_values(self, x: GridFunction) -> np.ndarray:
        raise NotImplementedError


class _Shifted(Regularizer):
    """Shared handling of the optional center function."""

    def __init__(self, center: GridFunction | float = 0.0):
        self.center = center

    def _center_values(self, x: GridFunction) -> np.ndarray:
        if isinstance(self.center, GridFunction):
            return self.center.values
        return np.full_like(x.values, float(self.center))

    def center_point(self, x: GridFunction) -> GridFunction:
        return x.with_values(self._center_values(x))


class SupShifted(_Shifted):
    """R(x) = max_i |x_i - c_i|; the ball {R <= rho} is a box."""

    kind = "sup"

    def value(self, x: GridFunction) -> float:
        return float(np.max(np.abs(x.values - self._center_values(x))))

    def project(self, x: GridFunction, rho: float) -> GridFunction:
        if rho < 0:
            raise DomainError(f"rho must be nonnegative, got {rho}")
        c = self._center_values(x)
        return x.with_values(np.clip(x.values, c - rho, c + rho))


class L2Shifted(_Shifted):
    """R(x) = h-weighted Euclidean norm of x - c; projection is radial shrink."""

    kind = "l2"

    def value(self, x: GridFunction) -> float:
        w = x.grid.weight
        return float(np.sqrt(w * np.sum((x.values - self._center_values(x)) ** 2)))

    def project(self, x: GridFunction, rho: float) -> GridFunction:
        if rho < 0:
            raise DomainError(f"rho must be nonnegative, got {rho}")
        c = self._center_values(x)
        r = self.value(x)
        if r <= rho:
            return x
        return x.with_values(c + (rho / r) * (x.values - c))

    def subgradient(self, x: GridFunction) -> "SubgradientElement":
        """xi in dR(x) under the h-weighted pairing; requires x != center."""
        c = self._center_values(x)
        r = self.value(x)
        if r == 0.0:
            raise DomainError("subgradient at the center is not unique")
        return SubgradientElement(x.with_values((x.values - c) / r))


class BVIncrements1D(Regularizer):
    """Discrete 1D BV norm: w*|x_1| + sum_i |x_{i+1} - x_i|.

    The anchor term makes this a norm (bounded sublevel sets).  Projection
    onto {R <= rho} is computed exactly in increment coordinates
    d = (w*x_1, x_2 - x_1, ...), where the ball is the L1 ball.
    """

    kind = "bv1d"

    def __init__(self, anchor_weight: float = 1.0):
        if anchor_weight <= 0:
            raise DomainError("anchor_weight must be positive")
        self.anchor_weight = anchor_weight

    def _to_increments(self, values: np.ndarray) -> np.ndarray:
        d = np.empty_like(values)
        d[0] = self.anchor_weight * values[0]
        d[1:] = np.diff(values)
        return d

    def _from_increments(self, d: np.ndarray) -> np.ndarray:
        x = d.copy()
        x[0] = d[0] / self.anchor_weight
        return np.cumsum(x)

    def value(self, x: GridFunction) -> float:
        return float(np.sum(np.abs(self._to_increments(x.values))))

    def project(self, x: GridFunction, rho: float) -> GridFunction:
        if rho < 0:
            raise DomainError(f"rho must be nonnegative, got {rho}")
        d = self._to_increments(x.values)
        return x.with_values(self._from_increments(project_l1_ball(d, rho)))

    def center_point(self, x: GridFunction) -> GridFunction:
        return x.with_values(np.zeros_like(x.values))

    def _center_values(self, x: GridFunction) -> np.ndarray:
        return np.zeros_like(x.values)


@dataclass(frozen=True)
class SubgradientElement:
    """An element xi of the subdifferential of R at some anchor point."""

    xi: GridFunction


def bregman(
    R: Regularizer, xi: SubgradientElement, x_tilde: GridFunction, x: GridFunction
) -> float:
    """Bregman distance R(x_tilde) - R(x) - <xi, x_tilde - x>  (h-weighted pairing).

    Nonnegative whenever xi is a subgradient of R at x; zero at x_tilde = x.
    """
    w = x.grid.weight
    inner = w * float(np.dot(xi.xi.values, x_tilde.values - x.values))
    return R.value(x_tilde) - R.value(x) - inner


def regularizer_from_config(
    cfg: dict, grid: Grid | None = None, location: str = "node"
) -> Regularizer:
    """Build a regularizer from a JSON config document.

    Expected keys: "kind" in {"sup", "l2", "bv1d"}, optional "center"
    (function spec, needs a grid unless it is a plain number) and
    "anchor_weight" for the BV kind.
    """
    kind = cfg.get("kind")
    if kind == "bv1d":
        return BVIncrements1D(anchor_weight=float(cfg.get("anchor_weight", 1.0)))
    center_spec = cfg.get("center", 0.0)
    if isinstance(center_spec, (int, float)):
        center = float(center_spec)
    else:
        if grid is None:
            raise ConfigError("a non-constant center spec requires a grid")
        center = function_from_spec(center_spec, grid, location)
    if kind == "sup":
        return SupShifted(center)
    if kind == "l2":
        return L2Shifted(center)
    raise ConfigError(f"unknown regularizer kind {kind!r}")
