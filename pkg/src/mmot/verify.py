"""Checkers for the structural conditions behind Monge solutions.

Grid indices are 0-based tuples; variables (``axis``, ``vars``) are 1-based.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel, fd_partial
from .duality import Potentials, splitting_gap, verify_splitting_set

GAP_TOL = 1e-8
MASS_TOL = 1e-9
CCM_TOL = 1e-9
CCM_CAP = 10_000_000


@dataclass(frozen=True)
class SupportSet:
    indices: np.ndarray  # (K, m) grid indices
    coords: np.ndarray  # (K, m) coordinates
    provenance: str = "user"

    def __post_init__(self):
        idx = np.array(self.indices, dtype=int)
        if idx.ndim != 2:
            raise ValueError("indices must be a (K, m) array")
        if len({tuple(r) for r in idx.tolist()}) != len(idx):
            raise ValueError("duplicate support point")
        coords = np.array(self.coords, dtype=float).reshape(idx.shape)
        idx.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_indices(cls, indices, grids, provenance: str = "user") -> "SupportSet":
        idx = np.asarray(indices, dtype=int).reshape(-1, len(grids))
        coords = np.stack([np.asarray(g)[idx[:, i]] for i, g in enumerate(grids)], axis=1) if len(idx) else np.zeros((0, len(grids)))
        return cls(idx, coords, provenance)

    @classmethod
    def from_coupling(cls, coupling, tol: float = MASS_TOL) -> "SupportSet":
        idx = coupling.support(tol)
        return cls(idx, coupling.coords(idx) if len(idx) else np.zeros((0, coupling.m)), f"coupling mass > {tol:g}")

    def __len__(self) -> int:
        return len(self.indices)

    def tuples(self) -> list[tuple]:
        return [tuple(r) for r in self.indices.tolist()]


# ---------------------------------------------------------------------------
# cyclical monotonicity

@dataclass
class CCMReport:
    passed: bool
    p_max: int
    checked: int  # rearrangements compared
    evaluations: int
    tol: float
    witness: dict | None = None

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "violation"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "p_max": self.p_max, "checked": self.checked,
                "evaluations": self.evaluations, "tol": self.tol, "witness": self.witness}


def ccm_work(K: int, m: int, p_max: int) -> int:
    """Cost evaluations needed by ``check_ccm`` for ``K`` points."""
    return sum(math.comb(K, p) * math.factorial(p) ** (m - 1) * p for p in range(2, p_max + 1))


def check_ccm(S: SupportSet, cost: CostModel, p_max: int = 3, cap: int = CCM_CAP, tol: float = CCM_TOL,
              batch: int = 1_000_000) -> CCMReport:
    """Search all sub-collections of size ``2..p_max`` for a cost-lowering rearrangement.

    The first coordinate keeps its order; every other coordinate is permuted
    independently among the collection's points.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    K, m = S.indices.shape if len(S) else (0, cost.arity)
    work = ccm_work(K, m, p_max)
    if work > cap:
        raise ValueError(f"{work} cost evaluations exceed the cap of {cap}; lower p_max or sample the support")
    X = S.coords
    base = np.asarray(cost(*X.T), dtype=float) * np.ones(K) if K else np.zeros(0)
    checked, evals = 0, K
    for p in range(2, min(p_max, K) + 1):
        perms = np.array(list(itertools.permutations(range(p))))
        combos = np.array(list(itertools.product(range(len(perms)), repeat=m - 1)))  # (Q, m-1)
        Q = len(combos)
        cols = np.array(list(itertools.combinations(range(K), p)))  # (B, p)
        step = max(1, batch // (Q * p))
        for start in range(0, len(cols), step):
            rows = cols[start:start + step]
            args = [np.broadcast_to(X[rows, 0][:, None, :], (len(rows), Q, p))]
            for i in range(1, m):
                order = perms[combos[:, i - 1]]  # (Q, p)
                args.append(X[rows[:, order], i])  # (B, Q, p)
            permuted = (np.asarray(cost(*args), dtype=float) * np.ones(args[0].shape)).sum(axis=2)
            original = base[rows].sum(axis=1)
            bad = original[:, None] > permuted + tol
            checked += permuted.size
            evals += permuted.size * p
            if bad.any():
                b, q = map(int, np.argwhere(bad)[0])
                pts = rows[b]
                witness = {
                    "points": [S.indices[k].tolist() for k in pts],
                    "coords": [X[k].tolist() for k in pts],
                    "permutations": [perms[combos[q, i]].tolist() for i in range(m - 1)],
                    "original_cost": float(original[b]),
                    "permuted_cost": float(permuted[b, q]),
                }
                return CCMReport(False, p_max, checked, evals, tol, witness)
    return CCMReport(True, p_max, checked, evals, tol)


# ---------------------------------------------------------------------------
# graphicality

@dataclass
class GraphReport:
    is_graph: bool
    map: dict | None  # x1 index -> (x2..xm) indices
    violations: list = field(default_factory=list)
    mass_tol: float = MASS_TOL

    def to_dict(self) -> dict:
        return {
            "verdict": "graph" if self.is_graph else "not graph",
            "mass_tol": self.mass_tol,
            "map": None if self.map is None else [[k, list(v)] for k, v in sorted(self.map.items())],
            "violations": self.violations,
        }


def check_graphical(coupling, mass_tol: float = MASS_TOL) -> GraphReport:
    """Does every charged atom of the first marginal carry exactly one support tuple?"""
    idx, mass = coupling.idx, coupling.mass
    x1_mass = np.bincount(idx[:, 0], weights=mass, minlength=coupling.shape[0]) if len(idx) else np.zeros(coupling.shape[0])
    keep = mass > mass_tol
    branches: dict[int, list] = {}
    for row, q in zip(idx[keep], mass[keep]):
        branches.setdefault(int(row[0]), []).append((tuple(int(v) for v in row[1:]), float(q)))
    mapping, violations = {}, []
    for j in np.flatnonzero(x1_mass > mass_tol):
        br = branches.get(int(j), [])
        if len(br) == 1:
            mapping[int(j)] = br[0][0]
        else:
            x1 = float(coupling.marginals[0].points[j])
            violations.append({
                "x1_index": int(j), "x1": x1,
                "branches": [{"index": list(t), "coords": coupling.coords(np.array([(j,) + t]))[0, 1:].tolist(),
                              "mass": q} for t, q in br],
            })
    ok = not violations
    return GraphReport(ok, mapping if ok else None, violations, mass_tol)


# ---------------------------------------------------------------------------
# differentiability proxy, M-sets, twist

def default_diff_tol(grid: np.ndarray) -> float:
    return 10.0 * float(np.max(np.diff(grid))) if len(grid) > 1 else 0.0


def one_sided_quotients(u: np.ndarray, x: np.ndarray, j: int) -> tuple[float, float]:
    return (u[j] - u[j - 1]) / (x[j] - x[j - 1]), (u[j + 1] - u[j]) / (x[j + 1] - x[j])


def differentiable_at(u, x, j: int, diff_tol: float | None = None) -> bool:
    """Grid proxy for differentiability of ``u`` at atom ``j``; boundary atoms never pass."""
    if not 0 < j < len(x) - 1:
        return False
    if diff_tol is None:
        diff_tol = default_diff_tol(x)
    ql, qr = one_sided_quotients(u, x, j)
    return abs(qr - ql) <= diff_tol * (1 + max(abs(ql), abs(qr)))


def _diff_mask(pot: Potentials, axis: int, diff_tol):
    u, x = pot.values[axis - 1], pot.grids[axis - 1]
    return np.array([differentiable_at(u, x, j, diff_tol) for j in range(len(x))], dtype=bool)


@dataclass
class MSet:
    anchor: int
    vars: tuple
    members: list  # (m-1)-tuples of indices for x2..xm
    potentials: Potentials
    gap_tol: float
    diff_tol: float | None

    def __len__(self) -> int:
        return len(self.members)

    def points(self) -> list[tuple]:
        return [(self.anchor,) + t for t in self.members]


def _check_vars(vars_, m):
    vars_ = tuple(sorted(int(k) for k in vars_))
    if any(not 2 <= k <= m for k in vars_) or len(set(vars_)) != len(vars_):
        raise ValueError(f"vars must be distinct variables in 2..{m}")
    return vars_


def build_M_set(pot: Potentials, cost: CostModel, anchor: int, vars=(), gap_tol: float = GAP_TOL,
                diff_tol: float | None = None) -> MSet:
    """Equality points over ``x1 = anchor`` where each ``u_k`` (k in ``vars``) passes the proxy."""
    m = pot.m
    vars_ = _check_vars(vars, m)
    grids = [pot.grids[0][anchor:anchor + 1]] + list(pot.grids[1:])
    C = cost.tensor(grids)[0]
    rest = sum((np.reshape(v, [1] * i + [len(v)] + [1] * (m - 2 - i)) for i, v in enumerate(pot.values[1:])),
               np.zeros(C.shape))
    gap = C - pot.values[0][anchor] - rest
    ok = np.abs(gap) <= gap_tol
    for k in vars_:
        mask = _diff_mask(pot, k, diff_tol)
        shape = [1] * (m - 1)
        shape[k - 2] = len(mask)
        ok = ok & mask.reshape(shape)
    members = [tuple(int(v) for v in t) for t in np.argwhere(ok)]
    return MSet(anchor, vars_, members, pot, gap_tol, diff_tol)


@dataclass
class AnchorResult:
    anchor: int
    size: int
    collisions: list  # pairs of member index tuples
    gradients: list

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "size": self.size, "collisions": [[list(a), list(b)] for a, b in self.collisions]}


@dataclass
class TwistReport:
    vars: tuple
    anchors: list
    skipped: list  # x1 atoms where the u1 proxy fails (boundary or kink)
    gap_tol: float
    diff_tol: float | None
    grad_tol_factor: float
    grad_screen_failures: int = 0

    @property
    def n_collisions(self) -> int:
        return sum(len(a.collisions) for a in self.anchors)

    @property
    def verdict(self) -> str:
        return "twisted-at-tolerance" if self.n_collisions == 0 else "collision"

    @property
    def all_singleton(self) -> bool:
        return all(a.size <= 1 for a in self.anchors)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "all_singleton": self.all_singleton,
            "vars": list(self.vars),
            "collisions": self.n_collisions,
            "max_M_size": max((a.size for a in self.anchors), default=0),
            "anchors": [a.to_dict() for a in self.anchors],
            "skipped_anchors": list(self.skipped),
            "gap_tol": self.gap_tol,
            "diff_tol": self.diff_tol,
            "grad_tol_factor": self.grad_tol_factor,
            "grad_screen_failures": self.grad_screen_failures,
        }


def twist_probe(pot: Potentials, cost: CostModel, vars=(), gap_tol: float = GAP_TOL, diff_tol: float | None = None,
                grad_tol: float = 1e-7, screen_h: float = 1e-6) -> TwistReport:
    """Injectivity of ``(x2..xm) -> D_{x1} c`` on each M-set, over anchors where ``u1`` passes the proxy.

    Two members collide when their gradients differ by at most
    ``grad_tol * (1 + max |gradient| at that anchor)``.
    """
    vars_ = _check_vars(vars, pot.m)
    x1 = pot.grids[0]
    mask1 = _diff_mask(pot, 1, diff_tol)
    anchors, skipped, screen_fail = [], [], 0
    for j in range(len(x1)):
        if not mask1[j]:
            skipped.append(j)
            continue
        M = build_M_set(pot, cost, j, vars_, gap_tol, diff_tol)
        grads = []
        for t in M.members:
            pt = [x1[j]] + [pot.grids[i + 1][v] for i, v in enumerate(t)]
            g = float(cost.partial(pt, 1))
            if abs(g - fd_partial(cost, pt, 1, screen_h)) > 1e-4 * (1 + abs(g)):
                screen_fail += 1
            grads.append(g)
        tol = grad_tol * (1 + max((abs(g) for g in grads), default=0.0))
        order = np.argsort(grads, kind="stable")
        collisions = []
        for a in range(len(order)):
            b = a + 1
            while b < len(order) and grads[order[b]] - grads[order[a]] <= tol:
                collisions.append((M.members[order[a]], M.members[order[b]]))
                b += 1
        anchors.append(AnchorResult(j, len(M), sorted(collisions), grads))
    return TwistReport(vars_, anchors, skipped, gap_tol, diff_tol, grad_tol, screen_fail)


# ---------------------------------------------------------------------------
# envelope identity

@dataclass
class EnvelopeReport:
    point: tuple
    axis: int
    du: float  # central difference of u_k
    dc: float  # analytic D_{x_k} c
    delta: float
    h: float
    C: float
    differentiable: bool

    @property
    def passed(self) -> bool:
        return self.differentiable and self.delta <= self.C * self.h

    def to_dict(self) -> dict:
        return {"point": list(self.point), "axis": self.axis, "du": self.du, "dc": self.dc, "delta": self.delta,
                "h": self.h, "C": self.C, "differentiable": self.differentiable, "passed": self.passed}


def check_envelope(pot: Potentials, cost: CostModel, point, axis: int, h: float | None = None,
                   gap_tol: float = GAP_TOL, diff_tol: float | None = None, C: float = 2.0) -> EnvelopeReport:
    """Compare the slope of ``u_axis`` with ``D_{x_axis} c`` at an equality point."""
    point = tuple(int(v) for v in point)
    x, u = pot.grids[axis - 1], pot.values[axis - 1]
    j = point[axis - 1]
    if not 0 < j < len(x) - 1:
        raise ValueError("interior required")
    gap = splitting_gap(pot, cost, point)
    if abs(gap) > gap_tol:
        raise ValueError(f"not an equality point (gap {gap:.3e})")
    du = float((u[j + 1] - u[j - 1]) / (x[j + 1] - x[j - 1]))
    coords = [g[i] for g, i in zip(pot.grids, point)]
    dc = float(cost.partial(coords, axis))
    if h is None:
        h = float(max(x[j + 1] - x[j], x[j] - x[j - 1]))
    return EnvelopeReport(point, axis, du, dc, abs(du - dc), h, C, differentiable_at(u, x, j, diff_tol))


# ---------------------------------------------------------------------------
# W inside M

def w_set(pot: Potentials, cost: CostModel, support: SupportSet, anchor: int, vars=(), gap_tol: float = GAP_TOL,
          diff_tol: float | None = None) -> list[tuple]:
    """Support points over ``x1 = anchor`` passing the differentiability proxy at each ``k`` in ``vars``."""
    vars_ = _check_vars(vars, pot.m)
    masks = {k: _diff_mask(pot, k, diff_tol) for k in vars_}
    out = []
    for t in support.tuples():
        if t[0] == anchor and all(masks[k][t[k - 1]] for k in vars_):
            out.append(t[1:])
    return sorted(out)


def check_w_subset_m(pot: Potentials, cost: CostModel, support: SupportSet, anchor: int, vars=(),
                     gap_tol: float = GAP_TOL, diff_tol: float | None = None) -> bool:
    W = w_set(pot, cost, support, anchor, vars, gap_tol, diff_tol)
    if not W:
        return True
    M = set(build_M_set(pot, cost, anchor, vars, gap_tol, diff_tol).members)
    return all(w in M for w in W)


def singleton_members_split(M: MSet, cost: CostModel, tol: float = GAP_TOL) -> bool:
    """Each M member, taken alone as a set, is splitting for the generating potentials."""
    return all(verify_splitting_set(M.potentials, cost, [pt], tol).splitting for pt in M.points())
