"""Marginal measures on compact 1-D grids.

Every marginal lives on a sorted grid inside an interval ``[lo, hi]``.  Densities
are discretized with the midpoint rule, which keeps every atom of an absolutely
continuous measure strictly positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SUM_TOL = 1e-12
UNIFORM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid1D:
    points: np.ndarray
    bounds: tuple[float, float]
    spacing: float | None = None  # set for uniform grids only

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))
        object.__setattr__(self, "bounds", (float(self.bounds[0]), float(self.bounds[1])))

    @classmethod
    def midpoints(cls, bounds: Sequence[float], n: int) -> "Grid1D":
        lo, hi = float(bounds[0]), float(bounds[1])
        h = (hi - lo) / n
        return cls(lo + h * (np.arange(n) + 0.5), (lo, hi), h)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def uniform(self) -> bool:
        return self.spacing is not None

    def is_interior(self, j: int) -> bool:
        return 0 < j < len(self.points) - 1


@dataclass(frozen=True)
class DiscreteMarginal:
    grid: Grid1D
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))

    @classmethod
    def from_weights(cls, points, weights, bounds=None) -> "DiscreteMarginal":
        """Build a marginal from raw atoms, dropping zero-mass atoms and renormalizing."""
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if points.shape != weights.shape:
            raise ValueError("points and weights must have the same length")
        if np.any(weights < 0):
            raise ValueError("negative weight")
        keep = weights > 0
        if not keep.any():
            raise ValueError("all weights are zero")
        if bounds is None:
            bounds = (points.min(), points.max())
        order = np.argsort(points[keep], kind="stable")
        pts = points[keep][order]
        w = weights[keep][order]
        steps = np.diff(pts)
        h = None
        if keep.all() and len(pts) > 1 and np.all(np.abs(steps - steps[0]) <= UNIFORM_TOL):
            h = float(steps[0])
        return cls(Grid1D(pts, bounds, h), w / w.sum())

    @classmethod
    def uniform_on(cls, points, bounds=None) -> "DiscreteMarginal":
        points = np.asarray(points, dtype=float)
        return cls.from_weights(points, np.ones_like(points), bounds)

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def __len__(self) -> int:
        return len(self.weights)


def validate_marginal(m: DiscreteMarginal) -> list[str]:
    """Return the list of violated invariants; an empty list means the marginal is valid."""
    problems: list[str] = []
    pts, w = m.grid.points, m.weights
    lo, hi = m.grid.bounds
    if len(pts) != len(w):
        problems.append("length mismatch between points and weights")
        return problems
    if len(pts) > 1 and np.any(np.diff(pts) <= 0):
        problems.append("points not strictly increasing")
    if np.any(pts < lo) or np.any(pts > hi):
        problems.append("point outside bounds")
    if m.grid.spacing is not None and len(pts) > 1:
        if np.any(np.abs(np.diff(pts) - m.grid.spacing) > UNIFORM_TOL):
            problems.append("grid declared uniform but spacing differs")
    if np.any(w < 0):
        problems.append("negative weight")
    if abs(w.sum() - 1.0) > SUM_TOL:
        problems.append("sum ≠ 1")
    if np.any(w == 0):
        problems.append("zero-mass atom")
    return problems


def discretize_density(density: Callable, bounds: Sequence[float], n: int) -> DiscreteMarginal:
    """Midpoint-rule discretization of ``density`` on ``n`` uniform cells of ``bounds``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    grid = Grid1D.midpoints(bounds, n)
    vals = np.asarray(density(grid.points), dtype=float) * np.ones(n)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("density must be finite and nonnegative")
    mass = vals * grid.spacing
    if mass.sum() <= 0:
        raise ValueError("degenerate density")
    if np.all(mass > 0):
        return DiscreteMarginal(grid, mass / mass.sum())
    return DiscreteMarginal.from_weights(grid.points, mass, grid.bounds)


# named densities for JSON marginal specs

def _uniform(**_):
    return lambda x: np.ones_like(np.asarray(x, dtype=float))


def _linear(a: float = 0.0, b: float = 1.0):
    return lambda x: a + b * np.asarray(x, dtype=float)


def _truncated_gaussian(mu: float = 0.0, sigma: float = 1.0):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return lambda x: np.exp(-0.5 * ((np.asarray(x, dtype=float) - mu) / sigma) ** 2)


DENSITIES: dict[str, Callable] = {
    "uniform": _uniform,
    "linear": _linear,
    "truncated_gaussian": _truncated_gaussian,
}


def marginal_from_spec(spec: dict) -> DiscreteMarginal:
    """Build a marginal from ``{"density", "params", "bounds", "n"}`` or ``{"points", "weights"}``."""
    if "points" in spec:
        pts = spec["points"]
        weights = spec.get("weights", [1.0] * len(pts))
        return DiscreteMarginal.from_weights(pts, weights, spec.get("bounds"))
    name = spec.get("density", "uniform")
    if name not in DENSITIES:
        raise ValueError(f"unknown density {name!r}; known: {sorted(DENSITIES)}")
    dens = DENSITIES[name](**spec.get("params", {}))
    bounds = spec.get("bounds", [0.0, 1.0])
    if len(bounds) != 2 or not bounds[0] < bounds[1] or not all(map(math.isfinite, bounds)):
        raise ValueError(f"bad bounds {bounds!r}")
    return discretize_density(dens, bounds, int(spec["n"]))


def product_size(marginals: Sequence[DiscreteMarginal]) -> int:
    return int(np.prod([len(mu) for mu in marginals], dtype=np.int64))
