"""Splitting potentials: gaps, splitting-set verification, c-conjugate updates.

Infima are exact minima over the finite product grid, so every check here is a
finite scan with no continuous optimization involved.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .costs import CostModel

SCAN_CAP = 2_000_000


@dataclass(frozen=True)
class Potentials:
    grids: tuple
    values: tuple
    gauge: str = "none"

    def __post_init__(self):
        grids = tuple(np.asarray(g, dtype=float) for g in self.grids)
        values = tuple(np.array(v, dtype=float) for v in self.values)
        if len(grids) != len(values) or any(g.shape != v.shape for g, v in zip(grids, values)):
            raise ValueError("one potential vector per grid, same lengths")
        for v in values:
            if not np.all(np.isfinite(v)):
                raise ValueError("potentials must be finite")
            v.setflags(write=False)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grids) -> "Potentials":
        return cls(tuple(grids), tuple(np.zeros(len(g)) for g in grids))

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple:
        return tuple(len(v) for v in self.values)

    def replace(self, axis: int, vec, gauge: str | None = None) -> "Potentials":
        vals = list(self.values)
        vals[axis - 1] = np.asarray(vec, dtype=float)
        return Potentials(self.grids, tuple(vals), self.gauge if gauge is None else gauge)

    def shifted(self, constants: Sequence[float]) -> "Potentials":
        """Add constant ``k_i`` to ``u_i``; the constants must sum to zero."""
        if len(constants) != self.m or abs(sum(constants)) > 1e-12:
            raise ValueError("need m constants summing to zero")
        return Potentials(self.grids, tuple(v + k for v, k in zip(self.values, constants)), "none")

    def gauge_fixed(self) -> "Potentials":
        """Normalize so that ``u_i(first atom) = 0`` for ``i >= 2``; ``u_1`` absorbs the shifts."""
        shifts = [v[0] for v in self.values[1:]]
        vals = [self.values[0] + sum(shifts)] + [v - v[0] for v in self.values[1:]]
        return Potentials(self.grids, tuple(vals), "first-atom")

    def sum_tensor(self) -> np.ndarray:
        total = np.zeros(self.shape)
        for i, v in enumerate(self.values):
            total = total + _expand(v, i, self.m)
        return total

    def at(self, idx) -> float:
        return float(sum(v[j] for v, j in zip(self.values, idx)))

    def dual_value(self, weights) -> float:
        return float(sum(np.dot(w, v) for w, v in zip(weights, self.values)))

    def to_csv(self, directory: str) -> list[str]:
        paths = []
        for i, (g, v) in enumerate(zip(self.grids, self.values), 1):
            path = os.path.join(directory, f"potentials_axis{i}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["index", "x", "u"])
                for j, (x, u) in enumerate(zip(g, v)):
                    w.writerow([j, repr(float(x)), repr(float(u))])
            paths.append(path)
        return paths


def _expand(v, i, m):
    shape = [1] * m
    shape[i] = len(v)
    return np.reshape(v, shape)


def _check_cap(pot: Potentials, cap: int):
    size = int(np.prod(pot.shape, dtype=np.int64))
    if size > cap:
        raise ValueError(f"product grid has {size} points, above scan cap {cap}")
    return size


def gap_tensor(pot: Potentials, cost: CostModel, C: np.ndarray | None = None) -> np.ndarray:
    """``c(x) - sum_i u_i(x_i)`` on the whole product grid."""
    if C is None:
        C = cost.tensor(pot.grids)
    return C - pot.sum_tensor()


def splitting_gap(pot: Potentials, cost: CostModel, point) -> float:
    """Gap ``c(x) - sum u_i(x_i)`` at the grid point with index tuple ``point``."""
    idx = tuple(int(j) for j in point)
    xs = [g[j] for g, j in zip(pot.grids, idx)]
    return float(cost(*xs)) - pot.at(idx)


@dataclass
class SplittingReport:
    splitting: bool
    min_gap: float
    min_gap_at: list
    max_abs_gap_on_set: float
    worst_on_set: list | None
    tol: float
    partial: bool = False
    scanned: int = 0

    @property
    def verdict(self) -> str:
        return "splitting" if self.splitting else "not splitting"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "min_gap": self.min_gap,
            "min_gap_at": self.min_gap_at,
            "max_abs_gap_on_set": self.max_abs_gap_on_set,
            "worst_on_set": self.worst_on_set,
            "tol": self.tol,
            "partial": self.partial,
            "scanned": self.scanned,
        }


def verify_splitting_set(pot: Potentials, cost: CostModel, S, tol: float = 1e-8,
                         cap: int = SCAN_CAP, seed: int = 0) -> SplittingReport:
    """Check the global inequality on the product grid and equality on ``S`` (index tuples)."""
    S = np.atleast_2d(np.asarray(S, dtype=int))
    if S.size == 0:
        raise ValueError("S must be nonempty")
    size = int(np.prod(pot.shape, dtype=np.int64))
    if size <= cap:
        G = gap_tensor(pot, cost)
        flat = int(np.argmin(G))
        min_gap = float(G.flat[flat])
        min_at = [int(j) for j in np.unravel_index(flat, G.shape)]
        partial, scanned = False, size
    else:
        rng = np.random.default_rng(seed)
        sample = np.stack([rng.integers(0, n, cap) for n in pot.shape], axis=1)
        xs = [g[sample[:, i]] for i, g in enumerate(pot.grids)]
        gaps = cost(*xs) - sum(v[sample[:, i]] for i, v in enumerate(pot.values))
        k = int(np.argmin(gaps))
        min_gap, min_at = float(gaps[k]), sample[k].tolist()
        partial, scanned = True, cap
    on_S = np.array([splitting_gap(pot, cost, s) for s in S])
    k = int(np.argmax(np.abs(on_S)))
    max_abs = float(abs(on_S[k]))
    ok = min_gap >= -tol and max_abs <= tol
    return SplittingReport(ok, min_gap, min_at, max_abs, S[k].tolist(), tol, partial, scanned)


def c_conjugate_update(pot: Potentials, cost: CostModel, axis: int, cap: int = SCAN_CAP,
                       C: np.ndarray | None = None) -> Potentials:
    """Replace ``u_axis`` by the grid infimum of ``c - sum_{j != axis} u_j``."""
    _check_cap(pot, cap)
    i = axis - 1
    if C is None:
        C = cost.tensor(pot.grids)
    rest = C - (pot.sum_tensor() - _expand(pot.values[i], i, pot.m))
    others = tuple(a for a in range(pot.m) if a != i)
    new = rest.min(axis=others) if others else rest
    return pot.replace(axis, new, gauge="conjugate")


def argmin_sets(pot: Potentials, cost: CostModel, axis: int, tol: float = 0.0) -> list[list[tuple]]:
    """All minimizers (within ``tol``) of ``c - sum_{j != axis} u_j`` for each atom of ``axis``."""
    i = axis - 1
    rest = cost.tensor(pot.grids) - (pot.sum_tensor() - _expand(pot.values[i], i, pot.m))
    rest = np.moveaxis(rest, i, 0)
    out = []
    for j in range(rest.shape[0]):
        sl = rest[j]
        out.append([tuple(int(a) for a in t) for t in np.argwhere(sl <= sl.min() + tol)])
    return out


@dataclass
class ConjugationReport:
    sweeps: int
    converged: bool
    changes: list = field(default_factory=list)


def conjugate_iterate(pot: Potentials, cost: CostModel, sweeps: int = 50, tol: float = 1e-10,
                      cap: int = SCAN_CAP) -> tuple[Potentials, ConjugationReport]:
    """Round-robin c-conjugate updates until the sup-norm change of a sweep is ``<= tol``."""
    if sweeps <= 0:
        return pot, ConjugationReport(0, False)
    _check_cap(pot, cap)
    C = cost.tensor(pot.grids)
    report = ConjugationReport(0, False)
    for _ in range(sweeps):
        before = pot
        for axis in range(1, pot.m + 1):
            pot = c_conjugate_update(pot, cost, axis, cap, C)
        change = max(float(np.max(np.abs(a - b))) for a, b in zip(pot.values, before.values))
        report.sweeps += 1
        report.changes.append(change)
        if change <= tol:
            report.converged = True
            break
    return pot, report


def max_slack_potentials(marginals, cost: CostModel, support, scale: float | None = None,
                         zero_tol: float = 1e-10, max_rounds: int = 10_000) -> tuple[Potentials, dict]:
    """Optimal dual potentials whose equality set is as small as possible.

    Keeps equality on ``support`` (an optimal support) and maximizes the smallest
    gap over the remaining grid points.  Points whose gap is forced to zero by
    every optimal dual (they carry mass in some optimal plan) are detected from
    the LP multipliers and moved to the equality set, and the LP is re-solved.
    At exit the equality set is exactly the union of optimal supports
    containing ``support``, and every other point has gap ``>= min_slack``.
    """
    grids = [mu.points for mu in marginals]
    shape = tuple(len(g) for g in grids)
    m, N = len(shape), int(np.prod(shape))
    C = cost.tensor(grids).ravel()
    if scale is None:
        scale = float(np.ptp(C)) + 1.0
    offsets = np.concatenate([[0], np.cumsum(shape)[:-1]])
    n_u = int(sum(shape))
    idx = np.stack(np.unravel_index(np.arange(N), shape), axis=1)
    rows = np.repeat(np.arange(N), m)
    cols = (idx + offsets).ravel()
    Au = sp.csr_matrix((np.ones(N * m), (rows, cols)), shape=(N, n_u))

    tight = np.zeros(N, dtype=bool)
    sup = np.atleast_2d(np.asarray(support, dtype=int))
    tight[np.ravel_multi_index(tuple(sup.T), shape)] = True
    rounds, t_star = 0, 0.0
    while True:
        rounds += 1
        free = np.flatnonzero(~tight)
        A_eq = sp.hstack([Au[tight], sp.csr_matrix((int(tight.sum()), 1))]).tocsr()
        A_ub = sp.hstack([Au[free], sp.csr_matrix(np.ones((len(free), 1)))]).tocsr()
        obj = np.zeros(n_u + 1)
        obj[-1] = -1.0
        bounds = [(None, None)] * n_u + [(None, scale)]
        res = linprog(obj, A_ub=A_ub if len(free) else None, b_ub=C[free] if len(free) else None,
                      A_eq=A_eq, b_eq=C[tight], bounds=bounds, method="highs",
                      options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            raise RuntimeError(f"max-slack LP failed: {res.message}")
        t_star = float(res.x[-1])
        if len(free) == 0 or t_star > zero_tol * scale or rounds >= max_rounds:
            break
        y = -np.asarray(res.ineqlin.marginals)
        blocking = free[y > zero_tol]
        if len(blocking) == 0:
            blocking = free[np.argmax(y)][None]
        tight[blocking] = True
    u = res.x[:n_u]
    values = tuple(u[o:o + n] for o, n in zip(offsets, shape))
    pot = Potentials(tuple(grids), values).gauge_fixed()
    info = {"rounds": rounds, "min_slack": t_star if len(free) else None,
            "equality_set_size": int(tight.sum())}
    return pot, info
