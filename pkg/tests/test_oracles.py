import itertools
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linprog

from prophet_match.core import CapacityError, DiscreteJointDistribution, DomainError, ExplicitFamily, Graph, MatchingFamily
from prophet_match.oracles import (
    _matching_dp,
    ex_ante_opt,
    fractional_matching_opt,
    fractional_matching_value_double_cover,
    max_weight_feasible_set,
    max_weight_matching,
    opt_distribution,
    revenue_curve,
    tail_threshold,
)
from prophet_match.instances import BAD_FAMILY_SETS, fig1b_ex_ante_gadget, random_graph

D = DiscreteJointDistribution
F = Fraction


def degree_lp(graph, weights):
    """Float LP optimum over the degree polytope, computed by scipy."""
    m = graph.edge_count
    a = np.zeros((graph.vertex_count, m))
    for i, (u, v) in enumerate(graph.edges):
        a[u, i] = a[v, i] = 1
    res = linprog(-np.array([float(w) for w in weights]), A_ub=a, b_ub=np.ones(graph.vertex_count),
                  bounds=[(0, 1)] * m, method="highs")
    return -res.fun


def ex_ante_lp(graph, marginals):
    """Float LP of the ex-ante relaxation with one variable per (edge, atom) segment."""
    cols, costs, caps = [], [], []
    for e, d in enumerate(marginals):
        for w, p in d.atoms:
            cols.append(e)
            costs.append(-float(w[0]))
            caps.append((0, float(p)))
    a = np.zeros((graph.vertex_count, len(cols)))
    for j, e in enumerate(cols):
        u, v = graph.edges[e]
        a[u, j] = a[v, j] = 1
    res = linprog(costs, A_ub=a, b_ub=np.ones(graph.vertex_count), bounds=caps, method="highs")
    return -res.fun


def random_graphs(count, seed, n=6, p=0.6):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        g = random_graph(n, p, rng)
        if g.edge_count:
            out.append((g, [F(int(x), int(d)) for x, d in zip(rng.integers(0, 20, g.edge_count),
                                                               rng.integers(1, 5, g.edge_count))]))
    return out


class TestIntegralOpt:
    def test_path_picks_outer_edges(self):
        g = Graph(4, ((0, 1), (1, 2), (2, 3)))
        assert max_weight_matching(g, [2, 3, 2]) == {0, 2}

    def test_lex_tie_break(self, triangle):
        assert max_weight_matching(triangle, [1, 1, 1]) == {0}

    def test_bad_family_lex(self):
        fam = ExplicitFamily(4, BAD_FAMILY_SETS)
        assert max_weight_feasible_set(fam, [F(1, 10**6)] * 2 + [1, 1]) == {2, 3}
        # a proper prefix precedes its extensions, so zero-weight elements are dropped
        assert max_weight_feasible_set(fam, [F(1, 10**6)] * 2 + [0, 0]) == {0}

    def test_uniform_tie_break_over_maximal_maximizers(self):
        fam = ExplicitFamily(4, BAD_FAMILY_SETS)
        dist = dict(opt_distribution(fam, [F(1, 10)] * 2 + [0, 0], "uniform"))
        assert dist == {frozenset({0, 2}): F(1, 4), frozenset({0, 3}): F(1, 4),
                        frozenset({1, 2}): F(1, 4), frozenset({1, 3}): F(1, 4)}

    def test_unknown_tie_break(self, triangle):
        with pytest.raises(DomainError):
            opt_distribution(MatchingFamily(triangle), [1, 1, 1], "coin")

    def test_weight_length_checked(self, triangle):
        with pytest.raises(DomainError):
            max_weight_matching(triangle, [1, 1])

    @pytest.mark.parametrize("seed", range(5))
    def test_dp_agrees_with_enumeration_on_value(self, seed):
        for g, w in random_graphs(10, seed, n=7):
            a = max_weight_matching(g, w)
            b = _matching_dp(g, tuple(w))
            assert sum(w[e] for e in a) == sum(w[e] for e in b)
            assert MatchingFamily(g).is_feasible(b)

    def test_capacity(self):
        g = Graph(22, tuple(itertools.combinations(range(22), 2))[:40])
        with pytest.raises(CapacityError):
            max_weight_matching(g, [1] * 40)


class TestFractionalOpt:
    def test_triangle_is_half_everywhere(self, triangle):
        y, value = fractional_matching_opt(triangle, [1, 1, 1])
        assert y == (F(1, 2),) * 3 and value == F(3, 2)

    def test_bipartite_equals_integral(self):
        g = Graph(4, ((0, 1), (1, 2), (2, 3), (0, 3)))
        assert fractional_matching_opt(g, [1, 2, 1, 2])[1] == 4

    @pytest.mark.parametrize("seed", range(6))
    def test_scipy_and_double_cover_agree(self, seed):
        for g, w in random_graphs(8, seed):
            y, value = fractional_matching_opt(g, w)
            assert set(y) <= {0, F(1, 2), 1}
            assert value == fractional_matching_value_double_cover(g, w)
            assert float(value) == pytest.approx(degree_lp(g, w), abs=1e-9)

    def test_half_integral_enumeration(self):
        # brute force over all {0, 1/2, 1} vectors on small graphs
        for g, w in random_graphs(6, 99, n=5, p=0.7):
            if g.edge_count > 10:
                continue
            best = F(0)
            for y in itertools.product((0, F(1, 2), 1), repeat=g.edge_count):
                if all(sum(y[e] for e in g.incident[v]) <= 1 for v in range(g.vertex_count)):
                    best = max(best, sum(a * b for a, b in zip(w, y)))
            assert fractional_matching_opt(g, w)[1] == best


class TestRevenueCurve:
    def test_values(self):
        d = D(((((F(4),), F(1, 4))), (((F(2),), F(1, 4))), (((F(0),), F(1, 2)))))
        assert revenue_curve(d, F(1, 8)) == F(1, 2)
        assert revenue_curve(d, F(1, 2)) == F(3, 2)
        assert revenue_curve(d, 1) == F(3, 2)

    def test_concavity(self):
        d = D(((((F(5),), F(1, 5))), (((F(3),), F(3, 10))), (((F(1),), F(1, 2)))))
        grid = [F(k, 20) for k in range(21)]
        vals = [revenue_curve(d, y) for y in grid]
        slopes = [b - a for a, b in zip(vals, vals[1:])]
        assert all(s1 >= s2 for s1, s2 in zip(slopes, slopes[1:]))

    def test_threshold_and_share(self):
        d = D.two_point(4, F(1, 4))
        assert tail_threshold(d, F(1, 8)) == (4, F(1, 2))
        assert tail_threshold(d, F(1, 2)) == (0, F(1, 3))
        assert tail_threshold(d, 0) == (None, 0)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            revenue_curve(D.point([1]), F(3, 2))


class TestExAnte:
    def test_triangle_of_coins(self, triangle):
        sol = ex_ante_opt(triangle, [D.two_point(1, F(1, 2))] * 3)
        assert sol.y == (F(1, 2),) * 3
        assert sol.objective == F(3, 2)

    def test_gadget_objective_matches_lp(self):
        inst = fig1b_ex_ante_gadget()
        sol = ex_ante_opt(inst.graph, inst.marginals())
        assert float(sol.objective) == pytest.approx(ex_ante_lp(inst.graph, inst.marginals()), abs=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_random_matches_lp(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(6):
            g = random_graph(6, 0.6, rng)
            if not g.edge_count:
                continue
            margs = []
            for _ in g.edges:
                high = F(int(rng.integers(1, 12)), int(rng.integers(1, 4)))
                margs.append(D(((((high,), F(1, 3))), (((high / 2,), F(1, 3))), (((F(0),), F(1, 3))))))
            sol = ex_ante_opt(g, margs)
            assert all(sum(sol.y[e] for e in g.incident[v]) <= 1 for v in range(g.vertex_count))
            assert float(sol.objective) == pytest.approx(ex_ante_lp(g, margs), abs=1e-9)
