import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from conftest import atoms, uniform
from mmot.costs import bilinear_pair, cost_from_spec, make_counterexample_cost, pairwise_sum_cost, zero_cost
from mmot.measures import DiscreteMarginal
from mmot.solver import (Coupling, NonConvergenceError, eliminate, solve_entropic, solve_entropic_structured,
                         solve_exact_lp, uniqueness_probe)


def certificate_ok(res, cost, tol=1e-8):
    grids = [mu.points for mu in res.coupling.marginals]
    gap = cost.tensor(grids) - res.potentials.sum_tensor()
    on_support = gap[tuple(res.coupling.support().T)]
    return gap.min() >= -tol and np.abs(on_support).max() <= tol


def test_two_point_example(two_point):
    c = bilinear_pair(-1.0)
    res = solve_exact_lp(two_point, c)
    assert res.objective == pytest.approx(-0.5, abs=1e-12)
    assert res.coupling.support_set() == {(0, 0), (1, 1)}
    np.testing.assert_allclose(res.coupling.mass, [0.5, 0.5], atol=1e-12)
    assert certificate_ok(res, c)
    assert res.potentials.gauge == "first-atom"
    assert all(v[0] == 0 for v in res.potentials.values[1:])


def test_zero_cost_any_marginals():
    mus = [DiscreteMarginal.from_weights([0, 1, 2], [1, 2, 3]), DiscreteMarginal.from_weights([0, 5], [3, 1]),
           uniform(4)]
    res = solve_exact_lp(mus, zero_cost(3))
    assert res.objective == 0
    assert res.coupling.max_violation() <= 1e-9


def test_counterexample_zero(three_point_m3):
    c = make_counterexample_cost()
    res = solve_exact_lp(three_point_m3, c)
    assert abs(res.objective) <= 1e-10
    assert res.coupling.max_violation() <= 1e-9
    assert certificate_ok(res, c)


def test_errors(two_point):
    with pytest.raises(ValueError, match="solve_entropic"):
        solve_exact_lp([uniform(10)] * 3, pairwise_sum_cost(3), cap=500)
    with pytest.raises(ValueError, match="arity"):
        solve_exact_lp(two_point, make_counterexample_cost())


def test_seeded_tie_break_reproducible(three_point_m3):
    c = make_counterexample_cost()
    a = solve_exact_lp(three_point_m3, c, tie_break_seed=7)
    b = solve_exact_lp(three_point_m3, c, tie_break_seed=7)
    np.testing.assert_array_equal(a.coupling.idx, b.coupling.idx)
    np.testing.assert_array_equal(a.coupling.mass, b.coupling.mass)


@given(st.integers(2, 5), st.integers(0, 10_000))
def test_lp_matches_assignment_oracle(n, seed):
    # equal uniform marginals in 2-D: optimum is attained on a permutation (Birkhoff)
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    pts = np.arange(n, dtype=float)
    from mmot.costs import pair_cost
    c = pair_cost(lambda x, y: M[x.astype(int), y.astype(int)], lambda x, y: 0 * x, lambda x, y: 0 * y)
    res = solve_exact_lp([atoms(pts), atoms(pts)], c)
    best = min(M[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n
    assert res.objective == pytest.approx(best, abs=1e-9)
    assert certificate_ok(res, c)


@given(st.integers(2, 3), st.integers(2, 5), st.integers(0, 10_000))
def test_lp_invariants_random(m, n, seed):
    rng = np.random.default_rng(seed)
    mus = [DiscreteMarginal.from_weights(np.sort(rng.uniform(0, 1, n)) + np.arange(n), rng.uniform(0.1, 1, n))
           for _ in range(m)]
    c = cost_from_spec({"family": "submodular_graph", "params": {"m": m, "a": -float(rng.uniform(0.5, 2))}})
    res = solve_exact_lp(mus, c, tie_break_seed=seed)
    assert res.coupling.max_violation() <= 1e-9
    assert np.all(res.coupling.mass > 0)
    assert res.objective == pytest.approx(res.coupling.cost(c), abs=1e-9)
    assert certificate_ok(res, c)
    assert res.potentials.dual_value([mu.weights for mu in mus]) == pytest.approx(res.objective, abs=1e-8)
    assert len(res.coupling.support()) <= m * n - m + 1


def test_coupling_exports(tmp_path, two_point):
    res = solve_exact_lp(two_point, bilinear_pair(-1.0))
    res.coupling.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "i1,i2,x1,x2,mass"
    assert lines[1] == "0,0,0.0,0.0,0.5"
    s = res.summary()
    assert list(s) == ["objective", "support_size", "iterations", "runtime_ms"]
    json.dumps(s)
    np.testing.assert_allclose(Coupling.from_dense(two_point, res.coupling.dense()).mass, res.coupling.mass)


def test_entropic_zero_cost_is_product():
    mus = [DiscreteMarginal.from_weights([0, 1, 2], [1, 2, 3]), DiscreteMarginal.from_weights([0, 1], [1, 3])]
    for eps in (0.01, 1.0):
        res = solve_entropic(mus, zero_cost(2), eps)
        np.testing.assert_allclose(res.coupling.dense(), np.outer(mus[0].weights, mus[1].weights), atol=1e-15)


@pytest.mark.slow
def test_entropic_two_point_small_eps(two_point):
    res = solve_entropic(two_point, bilinear_pair(-1.0), 0.05)
    assert -0.5 <= res.objective <= -0.5 + 0.05 * np.log(2) * 2
    assert res.stats["violation"] <= 1e-9


def test_entropic_errors(two_point):
    with pytest.raises(ValueError, match="epsilon must be positive"):
        solve_entropic(two_point, bilinear_pair(-1.0), 0)
    with pytest.raises(NonConvergenceError) as info:
        solve_entropic([uniform(6)] * 3, pairwise_sum_cost(3), 0.05, max_iter=1, tol=1e-14)
    assert info.value.violation > 1e-14


def test_entropic_monotone_in_eps():
    mus = [uniform(6)] * 3
    c = pairwise_sum_cost(3)
    lp = solve_exact_lp(mus, c).objective
    objs = [solve_entropic(mus, c, eps, tol=1e-12).objective for eps in (0.5, 0.2, 0.1, 0.05)]
    assert all(a >= b for a, b in zip(objs, objs[1:]))
    assert min(objs) >= lp - 1e-9


def test_structured_chain_matches_dense():
    mus = [uniform(10)] * 3
    c = cost_from_spec({"family": "chain", "params": {"cuts": [1, 2, 3]}})
    d = solve_entropic(mus, c, 0.1, tol=1e-12)
    s = solve_entropic_structured(mus, c, 0.1, tol=1e-12)
    for a, b in zip(d.axis_marginals, s.axis_marginals):
        assert np.max(np.abs(a - b)) <= 1e-10
    assert s.objective == pytest.approx(d.objective, abs=1e-10)
    assert s.coupling is None and s.stats["cost_evaluations"] == 200


@pytest.mark.parametrize("spec,m", [
    ({"family": "cycle", "params": {"a": [-1, -2, -1, -0.5]}}, 4),
    ({"family": "chain_twisted", "params": {"m": 4, "s": 2, "t": [2, 3], "Y": [[2], [3]]}}, 4),
    ({"family": "bilinear_partition", "params": {"I1": [1], "I2": [2], "I3": [3], "p": 2}}, 3),
])
def test_structured_fixed_sweeps_match_dense(spec, m):
    mus = [uniform(5 + i) for i in range(m)]
    c = cost_from_spec(spec)
    for sweeps in (1, 4):
        d = solve_entropic(mus, c, 0.2, fixed_sweeps=sweeps)
        s = solve_entropic_structured(mus, c, 0.2, fixed_sweeps=sweeps)
        for a, b in zip(d.axis_marginals + d.log_scalings, s.axis_marginals + s.log_scalings):
            assert np.max(np.abs(a - b)) <= 1e-10


def test_structured_single_block_is_two_marginal():
    mus = [uniform(7), DiscreteMarginal.from_weights([0, 0.5, 1], [1, 2, 1])]
    c = bilinear_pair(-1.5)
    d = solve_entropic(mus, c, 0.1, tol=1e-12)
    s = solve_entropic_structured(mus, c, 0.1, tol=1e-12)
    for a, b in zip(d.log_scalings, s.log_scalings):
        assert np.max(np.abs(a - b)) <= 1e-10


def test_structured_errors(three_point_m3):
    with pytest.raises(ValueError, match="no block structure"):
        solve_entropic_structured(three_point_m3, make_counterexample_cost(), 0.1)
    dense = cost_from_spec({"family": "submodular_graph", "params": {"m": 4}})
    with pytest.raises(ValueError, match="tree nor a single cycle"):
        solve_entropic_structured([uniform(3)] * 4, dense, 0.1)


@given(st.integers(0, 10_000))
def test_eliminate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    sizes = {1: 2, 2: 3, 3: 4, 4: 2}
    factors = [((1, 2), rng.normal(size=(2, 3))), ((3, 2), rng.normal(size=(4, 3))),
               ((4, 1), rng.normal(size=(2, 2))), ((3,), rng.normal(size=4))]
    full = np.zeros((2, 3, 4, 2))
    for vars_, t in factors:
        order = np.argsort(vars_)
        shape = [1] * 4
        for v in vars_:
            shape[v - 1] = sizes[v]
        full = full + np.transpose(t, order).reshape(shape)
    keep = sorted(rng.choice([1, 2, 3, 4], size=int(rng.integers(1, 3)), replace=False).tolist())
    drop = tuple(v - 1 for v in (1, 2, 3, 4) if v not in keep)
    np.testing.assert_allclose(eliminate(factors, keep, sizes), logsumexp(full, axis=drop), atol=1e-12)


def test_uniqueness_examples(two_point, three_point_m3):
    rep = uniqueness_probe(two_point, bilinear_pair(-1.0))
    assert rep.verdict == "unique-at-tolerance" and rep.solves == 9
    c = make_counterexample_cost()
    rep = uniqueness_probe(three_point_m3, c)
    assert rep.verdict == "multiple optima"
    (w1, o1), (w2, o2) = rep.witnesses
    assert w1.support_set() != w2.support_set()
    assert abs(o1 - o2) <= 1e-9 and abs(o1) <= 1e-10
    for w in (w1, w2):
        assert w.max_violation() <= 1e-9
        assert w.cost(c) == pytest.approx(0, abs=1e-10)
        assert np.all(np.abs(w.coords().sum(axis=1)) <= 1e-12)  # every atom sits where c vanishes
    with pytest.raises(ValueError, match="need ≥ 2 trials"):
        uniqueness_probe(two_point, bilinear_pair(-1.0), trials=1)
