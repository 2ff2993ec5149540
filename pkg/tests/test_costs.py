import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmot.costs import (ChainSpec, PartitionSpec, SimpleGraph, TwistedChainSpec, bilinear_pair, check_bitwist,
                        check_compatibility, check_path_condition, check_submodularity, cost_from_spec,
                        fd_partial, from_blocks, make_bilinear_partition_cost, make_chain_cost,
                        make_counterexample_cost, make_cycle_cost, make_submodular_graph_cost,
                        pairwise_sum_cost, partition_regrouped, sum_times_last_cost, zero_cost)

CATALOG = [
    {"family": "submodular_graph", "params": {"m": 3}},
    {"family": "submodular_graph", "params": {"m": 4, "edges": [[1, 2], [2, 3], [3, 4]], "P": [2, 3]}},
    {"family": "bilinear_partition", "params": {"I1": [1], "I2": [2, 4], "I3": [3], "p": 3}},
    {"family": "cycle", "params": {"a": [-1, -2, -0.5, -1]}},
    {"family": "chain", "params": {"cuts": [1, 3, 4]}},
    {"family": "chain_twisted", "params": {"m": 5, "s": 3, "t": [2, 3], "Y": [[2, 3], [3, 4]]}},
    {"family": "counterexample"},
]


def _random_points(m, k, seed=0):
    return np.random.default_rng(seed).uniform(0.05, 0.95, (k, m))


def test_submodular_examples():
    c = make_submodular_graph_cost({(1, 2): -1, (1, 3): -1, (2, 3): -1}, SimpleGraph.complete(3))
    assert c(1, 1, 1) == -3
    g = SimpleGraph(3, frozenset({(1, 2)}))
    c = make_submodular_graph_cost({(1, 2): -1.0}, g)
    assert c.partial((2, 3, 5), 1) == -3
    with pytest.raises(ValueError, match="a_12"):
        make_submodular_graph_cost({(1, 2): 1.0}, g)
    with pytest.raises(ValueError, match="edge"):
        make_submodular_graph_cost({(1, 3): -1.0}, g)


def test_submodular_matrix_form():
    A = -np.ones((3, 3))
    c = make_submodular_graph_cost(A, SimpleGraph.complete(3))
    assert c(1, 2, 3) == -(2 + 3 + 6)
    assert c.twist_vars == ()
    c = make_submodular_graph_cost({(1, 2): -1, (2, 3): -1}, SimpleGraph.path(3, P={2}))
    assert c.twist_vars == (2,)


def test_graph_validation():
    with pytest.raises(ValueError):
        SimpleGraph(3, frozenset({(1, 1)}))
    with pytest.raises(ValueError):
        SimpleGraph(3, frozenset({(1, 4)}))
    with pytest.raises(ValueError):
        SimpleGraph(3, frozenset(), frozenset({5}))


def test_check_submodularity_examples():
    path = SimpleGraph.path(3)
    c = make_submodular_graph_cost({(1, 2): -1, (2, 3): -1}, path)
    assert check_submodularity(c, path).passed
    bad = from_blocks(2, bilinear_pair(1.0).blocks)
    rep = check_submodularity(bad, SimpleGraph.complete(2))
    assert not rep.passed and rep.witness_pair == (1, 2)
    c12 = bilinear_pair(-1.0)
    padded = from_blocks(3, c12.blocks)
    rep = check_submodularity(padded, SimpleGraph(3, frozenset({(1, 3)})))
    assert not rep.passed and rep.witness_pair == (1, 3)


def test_path_condition_examples():
    assert check_path_condition(SimpleGraph.complete(4)).ok
    rep = check_path_condition(SimpleGraph.path(3, P={2}))
    assert rep.ok and rep.paths == {3: [1, 2, 3]}
    rep = check_path_condition(SimpleGraph.path(3))
    assert not rep.ok and rep.unreachable == [3]


def _flip(c):
    return from_blocks(c.arity, [type(b)(b.axes, (lambda f: lambda *x: -f(*x))(b.fn), b.grad) for b in c.blocks])


def test_compatibility_examples():
    pts = _random_points(3, 4)
    neg = cost_from_spec({"family": "submodular_graph", "params": {"m": 3}})
    assert check_compatibility(neg, pts).verdict == "pass"
    assert check_compatibility(_flip(neg), pts).verdict == "fail"
    single = from_blocks(3, bilinear_pair(-1.0).blocks)
    assert check_compatibility(single, pts).verdict == "inconclusive"
    with pytest.raises(ValueError):
        check_compatibility(bilinear_pair(-1.0), pts[:, :2])


def test_bilinear_partition_examples():
    c = make_bilinear_partition_cost(PartitionSpec([1], [2], [], 2))
    x = _random_points(2, 5)
    np.testing.assert_allclose(c(*x.T), -x[:, 0] * x[:, 1])
    c = make_bilinear_partition_cost(PartitionSpec([1], [2, 4], [3], 3))
    assert c(1, 1, 1, 1) == -5
    assert c.twist_vars == (3,)
    with pytest.raises(ValueError, match="1 must belong"):
        PartitionSpec([2], [1], [], 1)
    with pytest.raises(ValueError, match="partition"):
        PartitionSpec([1], [2], [2], 2)
    with pytest.raises(ValueError, match="p must"):
        PartitionSpec([1, 2], [3], [], 1)


@given(st.lists(st.floats(-2, 2), min_size=5, max_size=5))
def test_partition_regrouped_identity(x):
    spec = PartitionSpec([1, 5], [2], [3, 4], 2, a=-0.7)
    c = make_bilinear_partition_cost(spec)
    assert abs(c(*x) - partition_regrouped(spec, x)) <= 1e-10


def test_bitwist_examples():
    xs = np.linspace(-1, 1, 9)
    assert check_bitwist(lambda x, y: -x * y, xs).passed
    rep = check_bitwist(lambda x, y: -x * y**2, xs)
    assert not rep.passed and any(abs(a + b) < 1e-12 and a != b for _, _, a, b in rep.collisions)
    assert not check_bitwist(lambda x, y: 0 * x * y, xs).passed


def test_cycle_examples():
    ex = make_cycle_cost(*[bilinear_pair(-1.0)] * 4)
    assert ex(1, 1, 1, 1) == -4
    x = _random_points(4, 20)
    np.testing.assert_allclose(ex(*x.T), -(x[:, 0] + x[:, 2]) * (x[:, 1] + x[:, 3]), atol=1e-12)
    z = zero_cost(2)
    c = make_cycle_cost(bilinear_pair(-2.0), z, z, z)
    np.testing.assert_allclose(c(*x.T), -2 * x[:, 0] * x[:, 1])
    with pytest.raises(ValueError, match="arity"):
        make_cycle_cost(zero_cost(3), z, z, z)


def test_chain_examples():
    c = make_chain_cost(ChainSpec((1, 2, 3), (bilinear_pair(-1.0), bilinear_pair(-1.0))))
    x = _random_points(3, 10)
    np.testing.assert_allclose(c(*x.T), -x[:, 0] * x[:, 1] - x[:, 1] * x[:, 2])
    b1, b2 = pairwise_sum_cost(3), bilinear_pair(-2.0)
    c = make_chain_cost(ChainSpec((1, 3, 4), (b1, b2)))
    x = _random_points(4, 10)
    np.testing.assert_allclose(c(*x.T), b1(*x[:, :3].T) + b2(*x[:, 2:].T))
    assert [b.axes for b in c.blocks] == [(1, 2, 3), (3, 4)]
    assert c.twist_vars == (3,)
    with pytest.raises(ValueError):
        ChainSpec((1, 3, 2), (b1, b2))
    with pytest.raises(ValueError):
        ChainSpec((1, 3, 4), (b2, b2))


def test_twisted_chain_spec():
    blocks = (pairwise_sum_cost(2), sum_times_last_cost(2), sum_times_last_cost(2))
    spec = TwistedChainSpec(4, 2, (2, 3), ((2,), (3,)), blocks)
    assert spec.block_axes() == [(1, 2), (2, 3), (3, 4)]
    c = make_chain_cost(spec)
    assert c.twist_vars == (2, 3) and c(1, 2, 3, 4) == -(2 + 6 + 12)
    with pytest.raises(ValueError, match="t_2"):
        TwistedChainSpec(4, 2, (2, 2), ((2,), (3,)), blocks)  # Y_3 = {3} misses the pivot x_2
    with pytest.raises(ValueError, match="earlier pivots"):
        TwistedChainSpec(4, 2, (2, 3), ((2,), (2,)), blocks)  # x_2 was already used as a pivot
    with pytest.raises(ValueError, match="contained"):
        TwistedChainSpec(4, 2, (2, 3), ((2,), (2, 3)), (blocks[0], blocks[1], sum_times_last_cost(3)))


def test_counterexample_examples():
    c = make_counterexample_cost()
    assert c(-1, 0, 1) == 0 and c(1, 1, 1) == 9 and c.partial((1, 0, 0), 1) == 2
    assert not c.decomposable


@pytest.mark.parametrize("spec", CATALOG, ids=lambda s: s["family"])
def test_partials_match_finite_differences(spec):
    c = cost_from_spec(spec)
    for x in _random_points(c.arity, 100, seed=1):
        for axis in range(1, c.arity + 1):
            assert abs(c.partial(x, axis) - fd_partial(c, x, axis, 1e-4)) <= 1e-6


@pytest.mark.parametrize("spec", CATALOG[:-1], ids=lambda s: s["family"])
def test_blocks_sum_to_cost(spec):
    c = cost_from_spec(spec)
    grids = [np.linspace(0, 1, 3 + i) for i in range(c.arity)]
    T = c.tensor(grids)
    total = np.zeros(T.shape)
    for b in c.blocks:
        mesh = np.ix_(*[grids[a - 1] for a in b.axes])
        t = np.broadcast_to(b.fn(*mesh), [len(grids[a - 1]) for a in b.axes])
        order = np.argsort(b.axes)
        shape = [1] * c.arity
        for a in b.axes:
            shape[a - 1] = len(grids[a - 1])
        total = total + np.transpose(t, order).reshape(shape)
    np.testing.assert_allclose(total, T, atol=1e-12)


def test_unknown_family():
    with pytest.raises(ValueError):
        cost_from_spec({"family": "nope"})
    with pytest.raises(ValueError):
        bilinear_pair(-1.0)(1.0)
