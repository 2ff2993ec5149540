"""Cost functions on products of 1-D grids.

Variables are labelled ``1..m`` throughout the public API (``axis=1`` is ``x1``).
Every callable is vectorized: coordinates may be numpy arrays that broadcast
against each other, which is how full cost tensors are built.

Catalog families are smooth on compact boxes, hence semiconcave; that standing
assumption is not verified numerically.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CROSS_TOL = 1e-8
COLLISION_TOL = 1e-9


@dataclass(frozen=True)
class Block:
    """One additive term of a decomposable cost, acting on ``axes`` in argument order."""

    axes: tuple[int, ...]
    fn: Callable
    grad: Callable  # grad(args, pos) -> derivative in the pos-th argument (0-based)

    def size(self, sizes: dict[int, int]) -> int:
        return int(np.prod([sizes[a] for a in self.axes]))


@dataclass(frozen=True)
class CostModel:
    arity: int
    fn: Callable  # fn(*coords) -> value
    grad: Callable  # grad(coords, axis) -> partial derivative, axis 1-based
    family: str = "custom"
    params: dict = field(default_factory=dict)
    blocks: tuple[Block, ...] | None = None
    twist_vars: tuple[int, ...] = ()

    def __call__(self, *coords):
        if len(coords) != self.arity:
            raise ValueError(f"expected {self.arity} coordinates, got {len(coords)}")
        return self.fn(*coords)

    def partial(self, point: Sequence, axis: int):
        if not 1 <= axis <= self.arity:
            raise ValueError(f"axis must be in 1..{self.arity}")
        return self.grad(tuple(point), axis)

    def tensor(self, grids: Sequence[np.ndarray]) -> np.ndarray:
        """Cost on the full product grid, shape ``(n_1, ..., n_m)``."""
        if len(grids) != self.arity:
            raise ValueError("one grid per variable required")
        mesh = np.ix_(*[np.asarray(g, dtype=float) for g in grids])
        shape = tuple(len(g) for g in grids)
        return np.broadcast_to(self.fn(*mesh), shape).astype(float)

    @property
    def decomposable(self) -> bool:
        return self.blocks is not None


def fd_partial(cost: CostModel, point, axis: int, h: float = 1e-5) -> float:
    x = np.array(point, dtype=float)
    e = np.zeros_like(x)
    e[axis - 1] = h
    return float((cost(*(x + e)) - cost(*(x - e))) / (2 * h))


def fd_cross_partial(cost: CostModel, point, i: int, j: int, h: float = 1e-3) -> float:
    x = np.array(point, dtype=float)
    ei = np.zeros_like(x)
    ej = np.zeros_like(x)
    ei[i - 1] = h
    ej[j - 1] = h
    return float(
        (cost(*(x + ei + ej)) - cost(*(x + ei - ej)) - cost(*(x - ei + ej)) + cost(*(x - ei - ej)))
        / (4 * h * h)
    )


def from_blocks(arity, blocks, family="custom", params=None, twist_vars=()) -> CostModel:
    blocks = tuple(blocks)
    for b in blocks:
        if not all(1 <= a <= arity for a in b.axes):
            raise ValueError(f"block axes {b.axes} out of range 1..{arity}")

    def fn(*xs):
        total = 0.0
        for b in blocks:
            total = total + b.fn(*[xs[a - 1] for a in b.axes])
        return total

    def grad(xs, axis):
        total = 0.0
        for b in blocks:
            for pos, a in enumerate(b.axes):
                if a == axis:
                    total = total + b.grad([xs[c - 1] for c in b.axes], pos)
        return total

    return CostModel(arity, fn, grad, family, dict(params or {}), blocks, tuple(twist_vars))


def zero_cost(arity: int) -> CostModel:
    return from_blocks(arity, (), family="zero")


def pair_cost(fn, dfdx, dfdy, family="pair", params=None) -> CostModel:
    """Two-variable cost from ``fn(x, y)`` and its two partial derivatives."""
    block = Block((1, 2), fn, lambda args, pos: (dfdx, dfdy)[pos](*args))
    return from_blocks(2, (block,), family, params)


def bilinear_pair(a: float) -> CostModel:
    """``c(x, y) = a x y``."""
    return pair_cost(
        lambda x, y: a * x * y, lambda x, y: a * y + 0 * x, lambda x, y: a * x + 0 * y,
        family="bilinear_pair", params={"a": a},
    )


def _product_block(axes, a):
    def fn(x, y):
        return a * x * y

    def grad(args, pos):
        return a * args[1 - pos] + 0 * args[pos]

    return Block(tuple(axes), fn, grad)


def _pairwise_sum_block(axes, a):
    """``a * sum_{i<k} x_i x_k`` over the block's variables."""

    def fn(*xs):
        s = sum(xs)
        return a * 0.5 * (s * s - sum(x * x for x in xs))

    def grad(args, pos):
        return a * (sum(args) - args[pos])

    return Block(tuple(axes), fn, grad)


def _sum_times_block(axes, a):
    """``a * (x_{axes[0]} + ... + x_{axes[-2]}) * x_{axes[-1]}``."""

    def fn(*xs):
        return a * sum(xs[:-1]) * xs[-1]

    def grad(args, pos):
        if pos == len(args) - 1:
            return a * sum(args[:-1])
        return a * args[-1] + 0 * args[pos]

    return Block(tuple(axes), fn, grad)


# ---------------------------------------------------------------------------
# sub-modular graph costs

@dataclass(frozen=True)
class SimpleGraph:
    m: int
    edges: frozenset
    P: frozenset = frozenset()

    def __post_init__(self):
        edges = set()
        for e in self.edges:
            i, j = tuple(e)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (1 <= i <= self.m and 1 <= j <= self.m):
                raise ValueError(f"edge {{{i},{j}}} outside 1..{self.m}")
            edges.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(edges))
        P = frozenset(int(k) for k in self.P)
        if not all(1 <= k <= self.m for k in P):
            raise ValueError("P must be a subset of the vertices")
        object.__setattr__(self, "P", P)

    @classmethod
    def complete(cls, m: int, P=()) -> "SimpleGraph":
        return cls(m, frozenset(itertools.combinations(range(1, m + 1), 2)), frozenset(P))

    @classmethod
    def path(cls, m: int, P=()) -> "SimpleGraph":
        return cls(m, frozenset((i, i + 1) for i in range(1, m)), frozenset(P))

    def adjacent(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for j in range(1, self.m + 1) if j != i and self.adjacent(i, j))


def _coefficient_matrix(coefficients, m: int) -> np.ndarray:
    A = np.zeros((m + 1, m + 1))
    if isinstance(coefficients, dict):
        for (i, j), a in coefficients.items():
            A[i, j] = A[j, i] = a
    else:
        C = np.asarray(coefficients, dtype=float)
        if C.shape != (m, m):
            raise ValueError(f"coefficient matrix must be {m}x{m}")
        A[1:, 1:] = C
    return A


def make_submodular_graph_cost(coefficients, graph: SimpleGraph) -> CostModel:
    """``c = sum_{i<j} a_ij x_i x_j`` with ``a_ij <= 0`` everywhere and ``< 0`` on edges.

    ``coefficients`` is a dict ``{(i, j): a_ij}`` (1-based, unlisted pairs are 0)
    or a symmetric ``m x m`` matrix.
    """
    m = graph.m
    A = _coefficient_matrix(coefficients, m)
    blocks = []
    for i, j in itertools.combinations(range(1, m + 1), 2):
        a = A[i, j]
        if a > 0:
            raise ValueError(f"coefficient a_{i}{j} = {a} must be <= 0")
        if graph.adjacent(i, j) and not a < 0:
            raise ValueError(f"coefficient a_{i}{j} must be < 0 on edge {{{i},{j}}}")
        if a != 0:
            blocks.append(_product_block((i, j), a))
    params = {"m": m, "edges": sorted(graph.edges), "P": sorted(graph.P),
              "coefficients": [[i, j, A[i, j]] for i, j in itertools.combinations(range(1, m + 1), 2)]}
    twist = tuple(sorted(k for k in graph.P if k != 1))
    return from_blocks(m, blocks, "submodular_graph", params, twist)


@dataclass
class SubmodularityReport:
    passed: bool
    checked: int
    witness_point: list | None = None
    witness_pair: tuple | None = None
    witness_value: float | None = None


def _sample_points(m, samples, bounds, rng):
    lo, hi = (0.0, 1.0) if bounds is None else bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (m,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (m,))
    return lo + (hi - lo) * rng.random((samples, m))


def check_submodularity(cost: CostModel, graph: SimpleGraph, samples: int = 20, h: float = 1e-3,
                        bounds=None, seed: int = 0, delta: float = CROSS_TOL) -> SubmodularityReport:
    """Finite-difference sign check of all cross-partials: ``<= 0`` off edges, ``< -delta`` on edges."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    checked = 0
    for x in _sample_points(cost.arity, samples, bounds, rng):
        for i, j in itertools.combinations(range(1, cost.arity + 1), 2):
            v = fd_cross_partial(cost, x, i, j, h)
            checked += 1
            bad = (v >= -delta) if graph.adjacent(i, j) else (v > delta)
            if bad:
                return SubmodularityReport(False, checked, x.tolist(), (i, j), v)
    return SubmodularityReport(True, checked)


@dataclass
class PathReport:
    ok: bool
    paths: dict
    unreachable: list


def check_path_condition(graph: SimpleGraph) -> PathReport:
    """Every vertex not adjacent to 1 must be reachable from 1 through interior vertices in P."""
    parent = {1: None}
    frontier = [1]
    while frontier:
        nxt = []
        for v in frontier:
            if v != 1 and v not in graph.P:
                continue  # v may end a path but cannot be an interior vertex
            for w in graph.neighbors(v):
                if w not in parent:
                    parent[w] = v
                    nxt.append(w)
        frontier = nxt
    paths, missing = {}, []
    for i in range(2, graph.m + 1):
        if graph.adjacent(1, i):
            continue
        if i not in parent:
            missing.append(i)
            continue
        path = [i]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        paths[i] = path[::-1]
    return PathReport(not missing, paths, missing)


@dataclass
class CompatibilityReport:
    verdict: str  # "pass" | "fail" | "inconclusive"
    results: list  # (sample index, (i, j, k), value or None)


def check_compatibility(cost: CostModel, points, h: float = 1e-3, zero_tol: float = CROSS_TOL) -> CompatibilityReport:
    """Sign of ``c_ij * c_kj^{-1} * c_ki`` for every ordered triple of distinct variables."""
    m = cost.arity
    if m < 3:
        raise ValueError("compatibility needs at least three variables")
    results = []
    fail = inconclusive = False
    for s, x in enumerate(np.atleast_2d(np.asarray(points, dtype=float))):
        H = {}
        for i, j in itertools.combinations(range(1, m + 1), 2):
            H[i, j] = H[j, i] = fd_cross_partial(cost, x, i, j, h)
        for i, j, k in itertools.permutations(range(1, m + 1), 3):
            if min(abs(H[i, j]), abs(H[k, j]), abs(H[k, i])) <= zero_tol:
                results.append((s, (i, j, k), None))
                inconclusive = True
                continue
            v = H[i, j] / H[k, j] * H[k, i]
            results.append((s, (i, j, k), v))
            fail |= v >= 0
    verdict = "fail" if fail else ("inconclusive" if inconclusive else "pass")
    return CompatibilityReport(verdict, results)


# ---------------------------------------------------------------------------
# bilinear partition costs

@dataclass(frozen=True)
class PartitionSpec:
    I1: tuple
    I2: tuple
    I3: tuple
    p: int
    a: float = -1.0  # f(x, y) = a x y

    def __post_init__(self):
        for name in ("I1", "I2", "I3"):
            object.__setattr__(self, name, tuple(sorted(int(v) for v in getattr(self, name))))
        allv = self.I1 + self.I2 + self.I3
        m = len(allv)
        if sorted(allv) != list(range(1, m + 1)):
            raise ValueError("I1, I2, I3 must partition {1..m}")
        if 1 not in self.I1:
            raise ValueError("1 must belong to I1")
        if self.p not in self.I2 + self.I3:
            raise ValueError("p must belong to I2 or I3")

    @property
    def m(self) -> int:
        return len(self.I1) + len(self.I2) + len(self.I3)

    def f(self, x, y):
        return self.a * x * y


def make_bilinear_partition_cost(spec: PartitionSpec) -> CostModel:
    """Sum of ``f(x_s, x_t)`` over I1 x (I2 u I3), I3 x I2 and ordered pairs inside I3."""
    pairs = [(s, t) for s in spec.I1 for t in spec.I2 + spec.I3]
    pairs += [(s, t) for s in spec.I3 for t in spec.I2]
    pairs += [(s, t) for s, t in itertools.combinations(spec.I3, 2)]
    blocks = [_product_block((s, t), spec.a) for s, t in pairs]
    params = {"I1": list(spec.I1), "I2": list(spec.I2), "I3": list(spec.I3), "p": spec.p, "a": spec.a}
    return from_blocks(spec.m, blocks, "bilinear_partition", params, (spec.p,))


def partition_regrouped(spec: PartitionSpec, x) -> float:
    """Same cost written through sums of coordinates, valid because f is bilinear."""
    x = np.asarray(x, dtype=float)
    S = lambda idx: sum(x[i - 1] for i in idx)  # noqa: E731
    inner = sum(spec.f(x[s - 1], x[t - 1]) for s, t in itertools.combinations(spec.I3, 2))
    return spec.f(S(spec.I1), S(spec.I2 + spec.I3)) + spec.f(S(spec.I3), S(spec.I2)) + inner


@dataclass
class BitwistReport:
    passed: bool
    collisions: list  # (kind, fixed argument, a, b)


def check_bitwist(f: Callable, xs, ys=None, dfdx: Callable | None = None, dfdy: Callable | None = None,
                  h: float = 1e-5, tol: float = COLLISION_TOL) -> BitwistReport:
    """Sample-based injectivity check of ``y -> D_x f(x0, y)`` and ``x -> D_y f(x, y0)``.

    A pass only means no collision was found on the sample.
    """
    xs = np.unique(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.unique(np.asarray(ys, dtype=float))
    if dfdx is None:
        dfdx = lambda x, y: (f(x + h, y) - f(x - h, y)) / (2 * h)  # noqa: E731
    if dfdy is None:
        dfdy = lambda x, y: (f(x, y + h) - f(x, y - h)) / (2 * h)  # noqa: E731
    collisions = []

    def scan(kind, fixed, args, vals):
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        for k in range(len(sv) - 1):
            l = k + 1
            while l < len(sv) and sv[l] - sv[k] <= tol:
                collisions.append((kind, float(fixed), float(args[order[k]]), float(args[order[l]])))
                l += 1

    for x0 in xs:
        scan("y->Dx f(x0,y)", x0, ys, np.asarray(dfdx(x0, ys), dtype=float) * np.ones(len(ys)))
    for y0 in ys:
        scan("x->Dy f(x,y0)", y0, xs, np.asarray(dfdy(xs, y0), dtype=float) * np.ones(len(xs)))
    return BitwistReport(not collisions, collisions)


# ---------------------------------------------------------------------------
# cycle and chain costs

def _embed(c: CostModel, axes) -> Block:
    return Block(tuple(axes), c.fn, lambda args, pos: c.grad(tuple(args), pos + 1))


def make_cycle_cost(c1: CostModel, c2: CostModel, c3: CostModel, c4: CostModel) -> CostModel:
    """``c1(x1,x2) + c2(x2,x3) + c3(x3,x4) + c4(x4,x1)``."""
    parts = (c1, c2, c3, c4)
    for k, c in enumerate(parts, 1):
        if c.arity != 2:
            raise ValueError(f"block c{k} must have arity 2, got {c.arity}")
    axes = ((1, 2), (2, 3), (3, 4), (4, 1))
    blocks = [_embed(c, ax) for c, ax in zip(parts, axes)]
    params = {"blocks": [dict(family=c.family, **c.params) for c in parts]}
    return from_blocks(4, blocks, "cycle", params, (4,))


@dataclass(frozen=True)
class ChainSpec:
    """Blocks ``c_j(x_{m_{j-1}}, x_{m_{j-1}+1}, ..., x_{m_j})`` for cuts ``1 = m_0 < ... < m_n = m``."""

    cuts: tuple
    block_costs: tuple

    def __post_init__(self):
        cuts = tuple(int(c) for c in self.cuts)
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "block_costs", tuple(self.block_costs))
        if len(cuts) < 2 or cuts[0] != 1 or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cuts must start at 1 and be strictly increasing")
        if len(self.block_costs) != len(cuts) - 1:
            raise ValueError("need one block cost per consecutive pair of cuts")
        for j, (c, lo, hi) in enumerate(zip(self.block_costs, cuts, cuts[1:]), 1):
            if c.arity != hi - lo + 1:
                raise ValueError(f"block {j} must have arity {hi - lo + 1}")

    @property
    def m(self) -> int:
        return self.cuts[-1]

    def block_axes(self):
        return [tuple(range(lo, hi + 1)) for lo, hi in zip(self.cuts, self.cuts[1:])]


@dataclass(frozen=True)
class TwistedChainSpec:
    """``c_1(x_1..x_s) + sum_{j=2}^{m-s+1} c_j(Y_j, x_{s+j-1})`` with pivots ``t_1..t_{m-s}``.

    ``Y[j-2]`` lists the variables of ``Y_j``; ``t[a-1]`` is ``t_a``.
    """

    m: int
    s: int
    t: tuple
    Y: tuple
    block_costs: tuple

    def __post_init__(self):
        m, s = self.m, self.s
        t = tuple(int(v) for v in self.t)
        Y = tuple(tuple(sorted(int(v) for v in y)) for y in self.Y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "block_costs", tuple(self.block_costs))
        if not 2 <= s <= m - 1:
            raise ValueError("s must lie in 2..m-1")
        if len(Y) != m - s or len(t) != m - s:
            raise ValueError(f"need {m - s} sets Y_j and {m - s} pivots t")
        for j in range(2, m - s + 2):
            Yj = set(Y[j - 2])
            allowed = set(range(2, s + j - 1)) - set(t[: j - 2])
            if not Yj:
                raise ValueError(f"Y_{j} must be nonempty")
            if not Yj <= allowed:
                raise ValueError(f"Y_{j} must be contained in {{x_2..x_{s + j - 2}}} minus earlier pivots")
        for a in range(1, m - s + 1):
            if t[a - 1] not in Y[a - 1]:
                raise ValueError(f"x_{t[a - 1]} (t_{a}) must belong to Y_{a + 1}")
        if len(self.block_costs) != m - s + 1:
            raise ValueError("need one block cost per block")
        for ax, c in zip(self.block_axes(), self.block_costs):
            if c.arity != len(ax):
                raise ValueError(f"block on {ax} needs arity {len(ax)}")

    def block_axes(self):
        axes = [tuple(range(1, self.s + 1))]
        for j in range(2, self.m - self.s + 2):
            axes.append(self.Y[j - 2] + (self.s + j - 1,))
        return axes


def make_chain_cost(spec) -> CostModel:
    if isinstance(spec, ChainSpec):
        blocks = [_embed(c, ax) for c, ax in zip(spec.block_costs, spec.block_axes())]
        params = {"cuts": list(spec.cuts)}
        return from_blocks(spec.m, blocks, "chain", params, spec.cuts[1:-1])
    if isinstance(spec, TwistedChainSpec):
        blocks = [_embed(c, ax) for c, ax in zip(spec.block_costs, spec.block_axes())]
        params = {"m": spec.m, "s": spec.s, "t": list(spec.t), "Y": [list(y) for y in spec.Y]}
        return from_blocks(spec.m, blocks, "chain_twisted", params, tuple(sorted(set(spec.t))))
    raise TypeError("expected ChainSpec or TwistedChainSpec")


def pairwise_sum_cost(arity: int, a: float = -1.0) -> CostModel:
    """``a * sum_{i<k} x_i x_k`` as a standalone cost (a strictly sub-modular block for a < 0)."""
    return from_blocks(arity, (_pairwise_sum_block(tuple(range(1, arity + 1)), a),),
                       "pairwise_sum", {"a": a})


def sum_times_last_cost(arity: int, a: float = -1.0) -> CostModel:
    """``a * (x_1 + ... + x_{r-1}) * x_r``."""
    return from_blocks(arity, (_sum_times_block(tuple(range(1, arity + 1)), a),),
                       "sum_times_last", {"a": a})


def make_counterexample_cost() -> CostModel:
    """``(x1 + x2 + x3)^2``: smooth, not twisted on splitting sets, no block structure."""
    return CostModel(
        3,
        lambda x1, x2, x3: (x1 + x2 + x3) ** 2,
        lambda xs, axis: 2 * (xs[0] + xs[1] + xs[2]),
        "counterexample",
        {},
    )


# ---------------------------------------------------------------------------
# JSON specs

def _as_list(v, n):
    return list(v) if isinstance(v, (list, tuple)) else [v] * n


def cost_from_spec(spec: dict) -> CostModel:
    family = spec.get("family")
    p = dict(spec.get("params", {}))
    if family == "submodular_graph":
        m = int(p["m"])
        edges = p.get("edges", "complete")
        P = p.get("P", [])
        graph = SimpleGraph.complete(m, P) if edges == "complete" else SimpleGraph(m, frozenset(map(tuple, edges)), frozenset(P))
        if "coefficients" in p:
            coeffs = {(int(i), int(j)): float(a) for i, j, a in p["coefficients"]}
        else:
            coeffs = {e: float(p.get("a", -1.0)) for e in graph.edges}
        return make_submodular_graph_cost(coeffs, graph)
    if family == "bilinear_partition":
        return make_bilinear_partition_cost(
            PartitionSpec(p["I1"], p["I2"], p.get("I3", []), int(p["p"]), float(p.get("a", -1.0))))
    if family == "cycle":
        coeffs = _as_list(p.get("a", -1.0), 4)
        return make_cycle_cost(*[bilinear_pair(float(a)) for a in coeffs])
    if family == "chain":
        cuts = [int(c) for c in p["cuts"]]
        coeffs = _as_list(p.get("a", -1.0), len(cuts) - 1)
        blocks = [pairwise_sum_cost(hi - lo + 1, float(a)) for lo, hi, a in zip(cuts, cuts[1:], coeffs)]
        return make_chain_cost(ChainSpec(tuple(cuts), tuple(blocks)))
    if family == "chain_twisted":
        m, s = int(p["m"]), int(p["s"])
        Y = [list(y) for y in p["Y"]]
        coeffs = _as_list(p.get("a", -1.0), m - s + 1)
        blocks = [pairwise_sum_cost(s, float(coeffs[0]))]
        blocks += [sum_times_last_cost(len(y) + 1, float(a)) for y, a in zip(Y, coeffs[1:])]
        return make_chain_cost(TwistedChainSpec(m, s, tuple(p["t"]), tuple(map(tuple, Y)), tuple(blocks)))
    if family == "counterexample":
        return make_counterexample_cost()
    if family == "zero":
        return zero_cost(int(p["m"]))
    raise ValueError(f"unknown cost family {family!r}")
