import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soda_ood import _backend
from soda_ood.errors import EmptyNeighborhood, InputError, IterationMismatch, LengthMismatch, NonFiniteScore
from soda_ood.graph import SimilarityGraph, self_loop_graph
from soda_ood.propagation import combined_trace, propagate, soda_combine, solve_fixed_point

from oracles import naive_step


def random_graph(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return SimilarityGraph.from_edges(n, np.argwhere(upper))


@st.composite
def graphs_and_scores(draw):
    n = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, draw(st.floats(0.0, 1.0)))
    s0 = rng.normal(size=n) * draw(st.floats(0.01, 10.0))
    alpha = draw(st.sampled_from([0.05, 0.2, 0.5, 0.9, 1.0]))
    return g, s0, alpha


def test_alpha_one_identity(backend, rng):
    g = random_graph(rng, 30, 0.3)
    s0 = rng.normal(size=30)
    s0[3] = -0.0
    for t in (0, 1, 7):
        tr = propagate(s0, g, alpha=1.0, iters=t)
        assert tr.values.shape == (t + 1, 30)
        assert all(row.tobytes() == s0.tobytes() for row in tr.values)


def test_isolated_node(backend):
    tr = propagate([1.0], self_loop_graph(1), alpha=0.5, iters=3)
    assert tr.values[:, 0].tolist() == [1.0, 1.0, 1.0, 1.0]


def test_two_nodes_hand(backend):
    g = SimilarityGraph.from_edges(2, [(0, 1)])
    tr = propagate([1.0, 0.0], g, alpha=0.5, iters=3)
    # a = 0.5 + 0.25(a+b), b = 0.25(a+b)  =>  (0.75, 0.25), reached after one step
    assert tr.values[1].tolist() == [0.75, 0.25]
    assert tr.last.tolist() == [0.75, 0.25]
    np.testing.assert_allclose(solve_fixed_point([1.0, 0.0], g, 0.5), [0.75, 0.25], atol=1e-15)


def test_zero_iterations(backend):
    tr = propagate([0.3, -0.2], SimilarityGraph.from_edges(2, [(0, 1)]), 0.2, 0)
    assert tr.values.tolist() == [[0.3, -0.2]] and tr.delta_inf.size == 0


def test_matches_naive_loop(backend, rng):
    g = random_graph(rng, 40, 0.15)
    s0 = rng.normal(size=40)
    tr = propagate(s0, g, alpha=0.3, iters=6)
    neighbors = [g.neighbors(i).tolist() for i in range(40)]
    prev = s0.tolist()
    for t in range(1, 7):
        prev = naive_step(s0.tolist(), prev, neighbors, 0.3)
        np.testing.assert_allclose(tr.values[t], prev, rtol=0, atol=1e-14)


def test_fixed_point_alpha_one(rng):
    s0 = rng.normal(size=5)
    assert np.array_equal(solve_fixed_point(s0, random_graph(rng, 5, 0.5), 1.0), s0)


def test_fixed_point_random_50(backend, rng):
    g = random_graph(rng, 50, 0.1)
    s0 = rng.normal(size=50)
    star = solve_fixed_point(s0, g, 0.2)
    assert np.max(np.abs(propagate(s0, g, 0.2, 200).last - star)) < 1e-8


def test_early_stop(backend, rng):
    g = random_graph(rng, 30, 0.2)
    s0 = rng.normal(size=30)
    full = propagate(s0, g, 0.5, 500)
    short = propagate(s0, g, 0.5, 500, early_stop=True)
    assert short.iters < 500
    assert short.delta_inf[-1] < 1e-10 <= short.delta_inf[:-1].min()
    assert np.array_equal(short.values, full.values[: short.iters + 1])


def test_errors():
    g = SimilarityGraph(2, np.array([0, 1, 1]), np.array([0]))
    with pytest.raises(EmptyNeighborhood):
        propagate([1.0, 2.0], g, 0.5, 1)
    with pytest.raises(NonFiniteScore):
        propagate([np.nan], self_loop_graph(1), 0.5, 1)
    with pytest.raises(InputError):
        propagate([1.0], self_loop_graph(1), 0.0, 1)
    with pytest.raises(LengthMismatch):
        propagate([1.0, 2.0], self_loop_graph(1), 0.5, 1)


@settings(max_examples=60, deadline=None)
@given(graphs_and_scores(), st.integers(0, 12))
def test_convexity(case, iters):
    g, s0, alpha = case
    vals = propagate(s0, g, alpha, iters).values
    assert vals.min() >= s0.min() - 1e-12 and vals.max() <= s0.max() + 1e-12


@settings(max_examples=60, deadline=None)
@given(graphs_and_scores(), st.floats(-5, 5), st.floats(-5, 5))
def test_affine_equivariance(case, a, c):
    g, s0, alpha = case
    lhs = propagate(a * s0 + c, g, alpha, 8).values
    rhs = a * propagate(s0, g, alpha, 8).values + c
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9 * (1 + abs(a) * np.abs(s0).max() + abs(c)))


@settings(max_examples=40, deadline=None)
@given(graphs_and_scores(), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(case, seed):
    g, s0, alpha = case
    perm = np.random.default_rng(seed).permutation(g.n)
    inv = np.argsort(perm)
    edges = inv[g.edge_list()]  # node i is relabelled inv[i]
    g2 = SimilarityGraph.from_edges(g.n, edges)
    a = propagate(s0, g, alpha, 6).values
    b = propagate(s0[perm], g2, alpha, 6).values
    np.testing.assert_allclose(b, a[:, perm], rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(graphs_and_scores())
def test_contraction_to_fixed_point(case):
    g, s0, alpha = case
    star = solve_fixed_point(s0, g, alpha)
    tr = propagate(s0, g, alpha, 15)
    err0 = np.max(np.abs(s0 - star))
    for t in range(16):
        assert np.max(np.abs(tr.values[t] - star)) <= (1 - alpha) ** t * err0 + 1e-9
    d = tr.delta_inf
    assert np.all(d[1:] <= (1 - alpha) * d[:-1] + 1e-9)


def test_thread_count_and_backend_invariance(rng):
    g = random_graph(rng, 300, 0.05)
    s0 = rng.normal(size=300)
    previous = _backend.backend_name()
    outputs = []
    try:
        for name in sorted(_backend.BACKENDS):
            _backend.use_backend(name)
            for threads in (1, 2, 5):
                _backend.set_num_threads(threads)
                outputs.append(propagate(s0, g, 0.2, 10).values.tobytes())
    finally:
        _backend.use_backend(previous)
        _backend.set_num_threads(None)
    assert len(set(outputs)) == 1


class TestCombine:
    def test_zero_iterations(self):
        g = self_loop_graph(3)
        t = propagate([0.5, -0.2, 0.1], g, 0.2, 0)
        d = propagate([0.4, 0.5, 2.0], g, 0.2, 0)
        np.testing.assert_array_equal(soda_combine(t, d), [0.2, -0.1, 0.2])

    def test_unit_source_similarity(self, rng):
        g = random_graph(rng, 20, 0.2)
        t = propagate(rng.normal(size=20), g, 0.2, 5)
        d = propagate(np.ones(20), g, 0.2, 5)
        assert np.array_equal(soda_combine(t, d), t.last)

    def test_path_graph_hand(self):
        g = SimilarityGraph.from_edges(3, [(0, 1), (1, 2)])
        t = propagate([1.0, 0.0, 0.0], g, 0.5, 1)
        d = propagate([0.5, 1.0, 0.5], g, 0.5, 1)
        np.testing.assert_allclose(t.last, [0.75, 1 / 6, 0.0], atol=1e-15)
        np.testing.assert_allclose(d.last, [0.625, 5 / 6, 0.625], atol=1e-15)
        np.testing.assert_allclose(soda_combine(t, d), [0.46875, 5 / 36, 0.0], atol=1e-15)
        assert combined_trace(t, d).shape == (2, 3)

    def test_mismatch(self):
        g = self_loop_graph(2)
        with pytest.raises(IterationMismatch):
            soda_combine(propagate([1.0, 2.0], g, 0.5, 1), propagate([1.0, 2.0], g, 0.5, 2))
        with pytest.raises(LengthMismatch):
            soda_combine(propagate([1.0, 2.0], g, 0.5, 1), propagate([1.0], self_loop_graph(1), 0.5, 1))

    def test_ordering_preserved_for_nonnegative(self, rng):
        for _ in range(200):
            d = rng.random(2)
            s = rng.random(2)
            i, j = (0, 1) if d[0] >= d[1] and s[0] >= s[1] else (None, None)
            if i is None:
                continue
            g = self_loop_graph(2)
            out = soda_combine(propagate(s, g, 1.0, 0), propagate(d, g, 1.0, 0))
            assert out[0] >= out[1]
