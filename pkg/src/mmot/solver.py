"""Solvers for the discrete multi-marginal Kantorovich problem.

* ``solve_exact_lp``: transportation LP with one constraint block per marginal,
  solved to a vertex by a dual simplex (HiGHS).  Column order is shuffled by a
  seeded permutation, which selects among tied vertices reproducibly.
* ``solve_entropic``: log-domain multi-marginal scaling on the dense tensor.
* ``solve_entropic_structured``: the same iteration, with every marginal computed
  by variable elimination over the cost's block decomposition.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import logsumexp

from .costs import CostModel
from .duality import Potentials
from .measures import DiscreteMarginal, product_size

SUPPORT_TOL = 1e-9
LP_CAP = 200_000
DENSE_CAP = 2_000_000


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, violation):
        super().__init__(msg)
        self.violation = violation


@dataclass(frozen=True)
class Coupling:
    """Sparse plan: index tuples ``idx`` (K x m) carrying positive ``mass``."""

    marginals: tuple
    idx: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        idx = np.array(self.idx, dtype=int).reshape(-1, len(self.marginals))
        mass = np.array(self.mass, dtype=float)
        keep = mass > 0
        idx, mass = idx[keep], mass[keep]
        order = np.lexsort(idx.T[::-1]) if len(idx) else np.arange(0)
        idx, mass = idx[order], mass[order]
        idx.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_dense(cls, marginals, plan: np.ndarray) -> "Coupling":
        nz = np.argwhere(plan > 0)
        return cls(marginals, nz, plan[tuple(nz.T)])

    @property
    def m(self) -> int:
        return len(self.marginals)

    @property
    def shape(self) -> tuple:
        return tuple(len(mu) for mu in self.marginals)

    def coords(self, idx=None) -> np.ndarray:
        idx = self.idx if idx is None else np.atleast_2d(idx)
        return np.stack([mu.points[idx[:, i]] for i, mu in enumerate(self.marginals)], axis=1)

    def support(self, tol: float = SUPPORT_TOL) -> np.ndarray:
        return self.idx[self.mass > tol]

    def support_set(self, tol: float = SUPPORT_TOL) -> frozenset:
        return frozenset(map(tuple, self.support(tol).tolist()))

    def axis_marginals(self) -> list[np.ndarray]:
        return [np.bincount(self.idx[:, i], weights=self.mass, minlength=n) for i, n in enumerate(self.shape)]

    def max_violation(self) -> float:
        return max(float(np.max(np.abs(a - mu.weights))) for a, mu in zip(self.axis_marginals(), self.marginals))

    def cost(self, cost: CostModel) -> float:
        X = self.coords()
        return float(np.dot(self.mass, cost(*X.T))) if len(X) else 0.0

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[tuple(self.idx.T)] = self.mass
        return out

    def average(self, other: "Coupling", weight: float = 0.5) -> "Coupling":
        return Coupling.from_dense(self.marginals, (1 - weight) * self.dense() + weight * other.dense())

    def to_csv(self, path: str) -> None:
        X = self.coords()
        m = self.m
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{k}" for k in range(1, m + 1)] + [f"x{k}" for k in range(1, m + 1)] + ["mass"])
            for row, x, q in zip(self.idx, X, self.mass):
                w.writerow([int(v) for v in row] + [repr(float(v)) for v in x] + [repr(float(q))])


@dataclass
class SolveResult:
    coupling: Coupling | None
    objective: float
    potentials: Potentials | None = None
    stats: dict = field(default_factory=dict)
    axis_marginals: list | None = None
    log_scalings: list | None = None

    def summary(self) -> dict:
        return {
            "objective": self.objective,
            "support_size": None if self.coupling is None else int(len(self.coupling.support())),
            "iterations": self.stats.get("iterations"),
            "runtime_ms": self.stats.get("runtime_ms"),
        }


def _transport_matrix(shape):
    m, N = len(shape), int(np.prod(shape))
    offsets = np.concatenate([[0], np.cumsum(shape)[:-1]]).astype(int)
    idx = np.stack(np.unravel_index(np.arange(N), shape), axis=1)
    rows = (idx + offsets).ravel()
    cols = np.repeat(np.arange(N), m)
    return sp.csc_matrix((np.ones(N * m), (rows, cols)), shape=(int(sum(shape)), N)), idx, offsets


def solve_exact_lp(marginals: Sequence[DiscreteMarginal], cost: CostModel, tie_break_seed: int | None = None,
                   cap: int = LP_CAP, perturbation: np.ndarray | None = None,
                   cost_tensor: np.ndarray | None = None) -> SolveResult:
    """Vertex-optimal plan plus dual potentials (gauge ``u_i(first atom) = 0`` for i >= 2).

    ``perturbation`` (same shape as the cost tensor) is added to the LP objective
    only; the reported objective always uses the unperturbed cost.
    """
    marginals = tuple(marginals)
    if len(marginals) != cost.arity:
        raise ValueError(f"cost arity {cost.arity} does not match {len(marginals)} marginals")
    N = product_size(marginals)
    if N > cap:
        raise ValueError(f"{N} LP variables exceeds the cap of {cap}; use solve_entropic for this size")
    t0 = time.perf_counter()
    shape = tuple(len(mu) for mu in marginals)
    C = cost.tensor([mu.points for mu in marginals]) if cost_tensor is None else cost_tensor
    c = C.ravel().copy()
    if perturbation is not None:
        c = c + np.asarray(perturbation, dtype=float).ravel()
    A, idx, offsets = _transport_matrix(shape)
    b = np.concatenate([mu.weights for mu in marginals])
    perm = np.arange(N) if tie_break_seed is None else np.random.default_rng(tie_break_seed).permutation(N)
    res = linprog(c[perm], A_eq=A[:, perm], b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    # the product plan is always feasible and the objective is bounded
    assert res.status == 0, f"transportation LP failed: {res.message}"
    x = np.empty(N)
    x[perm] = np.clip(res.x, 0.0, None)
    x[x < 1e-14] = 0.0
    keep = np.flatnonzero(x)
    coupling = Coupling(marginals, idx[keep], x[keep])
    y = np.asarray(res.eqlin.marginals, dtype=float)
    values = tuple(y[o:o + n] for o, n in zip(offsets, shape))
    pot = Potentials(tuple(mu.points for mu in marginals), values).gauge_fixed()
    objective = float(np.dot(x, C.ravel()))
    stats = {
        "iterations": int(res.nit),
        "runtime_ms": 1000 * (time.perf_counter() - t0),
        "variables": N,
        "support_size": int(len(coupling.support())),
        "tie_break_seed": tie_break_seed,
    }
    return SolveResult(coupling, objective, pot, stats)


# ---------------------------------------------------------------------------
# entropic scaling

def _check_eps(epsilon):
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")


def _expand(v, i, m):
    shape = [1] * m
    shape[i] = len(v)
    return np.reshape(v, shape)


def _due(sweeps: int) -> bool:
    # convergence checks cost a full set of marginals; thin them out on long runs
    return sweeps <= 100 or sweeps % 10 == 0


def _violation(margs, marginals) -> float:
    return max(float(np.abs(a - mu.weights).sum()) for a, mu in zip(margs, marginals))


def solve_entropic(marginals: Sequence[DiscreteMarginal], cost: CostModel, epsilon: float,
                   max_iter: int = 200_000, tol: float = 1e-9, cap: int = DENSE_CAP,
                   fixed_sweeps: int | None = None) -> SolveResult:
    """Plan ``exp((sum_i g_i - c) / eps) * prod mu_i`` with scalings fixed by cyclic marginal projection.

    ``tol`` bounds the largest L1 marginal violation.  With ``fixed_sweeps`` the
    iteration runs exactly that many sweeps and skips the convergence test.
    """
    _check_eps(epsilon)
    marginals = tuple(marginals)
    m = len(marginals)
    if m != cost.arity:
        raise ValueError(f"cost arity {cost.arity} does not match {m} marginals")
    N = product_size(marginals)
    if N > cap:
        raise ValueError(f"dense tensor of {N} entries exceeds cap {cap}")
    t0 = time.perf_counter()
    C = cost.tensor([mu.points for mu in marginals])
    logmu = [np.log(mu.weights) for mu in marginals]
    g = [np.zeros(len(mu)) for mu in marginals]
    lp = -C / epsilon + sum(_expand(l, i, m) for i, l in enumerate(logmu))
    axes = [tuple(a for a in range(m) if a != i) for i in range(m)]
    sweeps, viol = 0, np.inf
    limit = max_iter if fixed_sweeps is None else fixed_sweeps
    while sweeps < limit:
        for i in range(m):
            delta = logmu[i] - logsumexp(lp, axis=axes[i])
            g[i] += delta
            lp += _expand(delta, i, m)
        sweeps += 1
        if fixed_sweeps is None and _due(sweeps):
            viol = _violation([np.exp(logsumexp(lp, axis=axes[i])) for i in range(m)], marginals)
            if viol <= tol:
                break
    plan = np.exp(lp)
    margs = [plan.sum(axis=axes[i]) for i in range(m)]
    viol = _violation(margs, marginals)
    if fixed_sweeps is None and viol > tol:
        raise NonConvergenceError(f"no convergence in {max_iter} sweeps; violation {viol:.3e}", viol)
    stats = {"iterations": sweeps, "runtime_ms": 1000 * (time.perf_counter() - t0),
             "violation": viol, "cost_evaluations": N, "epsilon": epsilon}
    return SolveResult(Coupling.from_dense(marginals, plan), float((plan * C).sum()), None, stats,
                       margs, [epsilon * v for v in g])


def _factor_graph_ok(blocks, m) -> bool:
    """True when every connected component of the variable/block incidence graph has at most one cycle."""
    parent = list(range(m + len(blocks)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for b, blk in enumerate(blocks):
        for a in blk.axes:
            edges.append((a - 1, m + b))
            ra, rb = find(a - 1), find(m + b)
            if ra != rb:
                parent[ra] = rb
    nodes, count = {}, {}
    for v in range(m + len(blocks)):
        nodes[find(v)] = nodes.get(find(v), 0) + 1
    for a, _ in edges:
        count[find(a)] = count.get(find(a), 0) + 1
    return all(count.get(r, 0) <= n for r, n in nodes.items())


def _align(vars_, table, U):
    """Broadcastable view of ``table`` (over ``vars_``) inside the variable order ``U``."""
    if not vars_:
        return np.asarray(table).reshape((1,) * len(U))
    order = sorted(range(len(vars_)), key=lambda k: U.index(vars_[k]))
    t = np.transpose(table, order)
    sorted_vars = [vars_[k] for k in order]
    shape = [1] * len(U)
    for v, n in zip(sorted_vars, t.shape):
        shape[U.index(v)] = n
    return t.reshape(shape)


def eliminate(factors, keep, sizes):
    """Log-domain variable elimination; returns the log-table over ``sorted(keep)``.

    ``factors`` is a list of ``(vars, log_table)``; variables are eliminated
    greedily by the size of the factor they create (ties by label).
    """
    factors = [(tuple(v), t) for v, t in factors]
    keep = sorted(set(keep))
    remaining = sorted(set(itertools.chain.from_iterable(v for v, _ in factors)) - set(keep))
    while remaining:
        def width(v):
            U = set().union(*[set(f) for f, _ in factors if v in f])
            return (int(np.prod([sizes[u] for u in U])), v)

        v = min(remaining, key=width)
        inv = [(f, t) for f, t in factors if v in f]
        rest = [(f, t) for f, t in factors if v not in f]
        U = sorted(set().union(*[set(f) for f, _ in inv]))
        total = sum(_align(f, t, U) for f, t in inv)
        new = logsumexp(total, axis=U.index(v))
        factors = rest + [(tuple(u for u in U if u != v), new)]
        remaining.remove(v)
    total = sum(_align(f, t, keep) for f, t in factors)
    return np.broadcast_to(total, tuple(sizes[k] for k in keep))


def solve_entropic_structured(marginals: Sequence[DiscreteMarginal], cost: CostModel, epsilon: float,
                              max_iter: int = 200_000, tol: float = 1e-9,
                              fixed_sweeps: int | None = None) -> SolveResult:
    """Same iteration as ``solve_entropic`` with marginals computed block by block.

    The block incidence graph must be a forest or contain a single cycle per
    component; the dense plan is never formed.
    """
    _check_eps(epsilon)
    if not cost.decomposable:
        raise ValueError("no block structure")
    marginals = tuple(marginals)
    m = len(marginals)
    if m != cost.arity:
        raise ValueError(f"cost arity {cost.arity} does not match {m} marginals")
    if not _factor_graph_ok(cost.blocks, m):
        raise ValueError("block interaction graph is neither a tree nor a single cycle")
    t0 = time.perf_counter()
    sizes = {i + 1: len(mu) for i, mu in enumerate(marginals)}
    pts = {i + 1: mu.points for i, mu in enumerate(marginals)}
    block_tables, block_costs = [], []
    for blk in cost.blocks:
        mesh = np.ix_(*[pts[a] for a in blk.axes])
        cb = np.broadcast_to(blk.fn(*mesh), tuple(sizes[a] for a in blk.axes)).astype(float)
        block_costs.append(cb)
        block_tables.append((blk.axes, -cb / epsilon))
    evals = int(sum(cb.size for cb in block_costs))
    logmu = [np.log(mu.weights) for mu in marginals]
    g = [np.zeros(len(mu)) for mu in marginals]

    def factors():
        return block_tables + [((i + 1,), logmu[i] + g[i]) for i in range(m)]

    def log_marg(i):
        return eliminate(factors(), [i + 1], sizes)

    sweeps, viol = 0, np.inf
    limit = max_iter if fixed_sweeps is None else fixed_sweeps
    while sweeps < limit:
        for i in range(m):
            g[i] = g[i] + logmu[i] - log_marg(i)
        sweeps += 1
        if fixed_sweeps is None and _due(sweeps):
            viol = _violation([np.exp(log_marg(i)) for i in range(m)], marginals)
            if viol <= tol:
                break
    margs = [np.exp(log_marg(i)) for i in range(m)]
    viol = _violation(margs, marginals)
    if fixed_sweeps is None and viol > tol:
        raise NonConvergenceError(f"no convergence in {max_iter} sweeps; violation {viol:.3e}", viol)
    objective = 0.0
    block_marginals = []
    for blk, cb in zip(cost.blocks, block_costs):
        keep = sorted(set(blk.axes))
        bm = np.exp(eliminate(factors(), keep, sizes))
        block_marginals.append((tuple(keep), bm))
        objective += float((bm * np.transpose(cb, [list(blk.axes).index(k) for k in keep])).sum())
    stats = {"iterations": sweeps, "runtime_ms": 1000 * (time.perf_counter() - t0), "violation": viol,
             "cost_evaluations": evals, "dense_evaluations": product_size(marginals),
             "epsilon": epsilon, "block_marginals": block_marginals}
    return SolveResult(None, objective, None, stats, margs, [epsilon * v for v in g])


# ---------------------------------------------------------------------------
# uniqueness probe

@dataclass
class UniquenessReport:
    verdict: str  # "unique-at-tolerance" | "multiple optima"
    solves: int
    distinct_supports: int
    objective: float
    objective_spread: float
    delta: float
    witnesses: tuple | None = None

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "solves": self.solves,
            "distinct_supports": self.distinct_supports,
            "objective": self.objective,
            "objective_spread": self.objective_spread,
            "delta": self.delta,
        }
        if self.witnesses is not None:
            out["witnesses"] = [
                {"support": w.support().tolist(), "objective": float(o)}
                for w, o in self.witnesses
            ]
        return out


def uniqueness_probe(marginals: Sequence[DiscreteMarginal], cost: CostModel, trials: int = 8,
                     delta: float = 1e-7, seed: int = 0, obj_tol: float = 1e-9,
                     support_tol: float = SUPPORT_TOL, cap: int = LP_CAP) -> UniquenessReport:
    """Re-solve under ``trials`` random cost perturbations of size ``<= delta`` and compare optimal supports."""
    if trials < 2:
        raise ValueError("need ≥ 2 trials")
    if not delta > 0:
        raise ValueError("delta must be positive")
    marginals = tuple(marginals)
    rng = np.random.default_rng(seed)
    C = cost.tensor([mu.points for mu in marginals])
    runs = [solve_exact_lp(marginals, cost, None, cap, cost_tensor=C)]
    for _ in range(trials):
        pert = rng.uniform(-delta, delta, C.shape)
        runs.append(solve_exact_lp(marginals, cost, int(rng.integers(2**31)), cap, pert, C))
    objs = np.array([r.objective for r in runs])
    best = float(objs.min())
    optimal = [r for r in runs if r.objective <= best + obj_tol]
    supports = []
    reps = []
    for r in optimal:
        s = r.coupling.support_set(support_tol)
        if s not in supports:
            supports.append(s)
            reps.append(r)
    spread = float(objs.max() - objs.min())
    if len(supports) > 1:
        w = ((reps[0].coupling, reps[0].objective), (reps[1].coupling, reps[1].objective))
        return UniquenessReport("multiple optima", len(runs), len(supports), best, spread, delta, w)
    return UniquenessReport("unique-at-tolerance", len(runs), 1, best, spread, delta)
