import itertools
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prophet_match.core import (
    BatchStructure,
    DiscreteJointDistribution,
    DomainError,
    ExplicitFamily,
    Graph,
    Instance,
    MatchingFamily,
    as_fraction,
    batches_of,
    dumps_instance,
    is_feasible,
    loads_instance,
    weight_of,
)
from prophet_match.instances import BAD_FAMILY_SETS, bad_ocrs_example, fig1a_two_triangles, random_instance

D = DiscreteJointDistribution


class TestGraph:
    def test_edges_are_normalized(self):
        g = Graph(3, ((1, 0), (2, 1)))
        assert g.edges == ((0, 1), (1, 2))

    @pytest.mark.parametrize("edges", [((0, 0),), ((0, 1), (1, 0)), ((0, 3),), ((-1, 0),)])
    def test_invalid_edges_rejected(self, edges):
        with pytest.raises(DomainError):
            Graph(3, edges)

    def test_incidence(self, triangle):
        assert triangle.incident[1] == (0, 1)
        assert triangle.edge_index(2, 0) == 2


class TestWeightOf:
    def test_empty_set(self):
        assert weight_of([1, 1, 1], []) == 0

    def test_direct_sum(self):
        assert weight_of([Fraction(3), Fraction(5)], [0, 1]) == 8

    def test_rational_sum_is_exact(self):
        assert weight_of([Fraction(1, 3), Fraction(1, 6)], [0, 1]) == Fraction(1, 2)

    def test_unknown_index(self):
        with pytest.raises(DomainError):
            weight_of([1, 2], [5])

    def test_permutation_invariance_is_exact(self):
        rng = random.Random(3)
        w = [Fraction(rng.randint(0, 99), rng.randint(1, 64)) for _ in range(12)]
        s = list(range(12))
        base = weight_of(w, s)
        for _ in range(20):
            rng.shuffle(s)
            assert weight_of(w, s) == base


class TestBatches:
    def test_vertex_arrival_triangle(self, triangle):
        assert batches_of(BatchStructure.vertex([0, 1, 2]), triangle) == ((), (0,), (1, 2))

    def test_edge_arrival_singletons(self):
        path = Graph(3, ((0, 1), (1, 2)))
        assert batches_of(BatchStructure.edge([1, 0]), path) == ((1,), (0,))

    def test_explicit_unchanged(self):
        assert batches_of(BatchStructure.explicit([(0, 1), (2, 3)]), 4) == ((0, 1), (2, 3))

    def test_length_mismatch(self, triangle):
        with pytest.raises(DomainError):
            batches_of(BatchStructure.vertex([0, 1]), triangle)

    def test_explicit_must_partition(self):
        with pytest.raises(DomainError):
            batches_of(BatchStructure.explicit([(0, 1), (1, 2)]), 3)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 7), st.floats(0, 1), st.randoms(use_true_random=False), st.booleans())
    def test_partition_property(self, n, p, rnd, vertex):
        edges = tuple(e for e in itertools.combinations(range(n), 2) if rnd.random() < p)
        g = Graph(n, edges)
        if vertex:
            order = list(range(n))
            rnd.shuffle(order)
            batches = batches_of(BatchStructure.vertex(order), g)
            assert len(batches) == n
        else:
            order = list(range(len(edges)))
            rnd.shuffle(order)
            batches = batches_of(BatchStructure.edge(order), g)
            assert all(len(b) == 1 for b in batches)
        flat = [e for b in batches for e in b]
        assert sorted(flat) == list(range(len(edges)))


class TestFeasibility:
    def test_disjoint_edges(self):
        fam = MatchingFamily(Graph(4, ((0, 1), (2, 3), (1, 2))))
        assert is_feasible(fam, {0, 1})

    def test_shared_vertex(self):
        fam = MatchingFamily(Graph(3, ((0, 1), (1, 2))))
        assert not is_feasible(fam, {0, 1})

    def test_bad_family_pair(self):
        assert not is_feasible(bad_ocrs_example().family, {0, 1})

    def test_downward_closure_enforced(self):
        with pytest.raises(DomainError):
            ExplicitFamily(3, [(), (0, 1)])

    def test_downward_closure_of_explicit_sets(self):
        fam = ExplicitFamily(4, BAD_FAMILY_SETS)
        for s in fam.enumerate_feasible():
            for i in range(len(s)):
                assert fam.is_feasible(s[:i] + s[i + 1:])

    def test_matching_enumeration_is_lexicographic(self, triangle):
        sets = MatchingFamily(triangle).enumerate_feasible()
        assert sets == sorted(sets)
        assert sets == [(), (0,), (1,), (2,)]


class TestDistributions:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(DomainError):
            D((((Fraction(1),), Fraction(1, 3)),))

    def test_distinct_atoms(self):
        with pytest.raises(DomainError):
            D((((Fraction(1),), Fraction(1, 2)), ((Fraction(1),), Fraction(1, 2))))

    def test_negative_weight(self):
        with pytest.raises(DomainError):
            D.point([-1])

    def test_product_and_marginal(self):
        prod = D.product([D.two_point(2, Fraction(1, 4)), D.point([3])])
        assert prod.width == 2 and prod.size == 2
        assert prod.mean(0) == Fraction(1, 2)
        assert prod.marginal(1).atoms == (((Fraction(3),), Fraction(1)),)

    def test_float_conversion_is_exact(self):
        assert as_fraction(0.1) == Fraction(1, 10)
        assert as_fraction("3/8") == Fraction(3, 8)


class TestJson:
    @pytest.mark.parametrize("inst", [
        bad_ocrs_example(),
        fig1a_two_triangles(),
        random_instance(seed=4),
        random_instance(seed=5, correlated=True),
        random_instance(seed=6, arrival="edge"),
    ], ids=["explicit", "edge-gadget", "vertex", "correlated", "edge"])
    def test_round_trip(self, inst):
        back = loads_instance(dumps_instance(inst))
        assert back.batches == inst.batches
        assert back.distributions == inst.distributions
        assert back.family == inst.family
        assert back.tie_break == inst.tie_break

    def test_rationals_are_strings(self):
        data = json.loads(dumps_instance(bad_ocrs_example()))
        assert data["batches"][1]["support"][0]["prob"] == "1/4"

    @pytest.mark.parametrize("text", ["[]", "{", '{"vertices": 2}', '{"vertices": 2, "edges": [[0, 1]], '
                                      '"arrival": {"kind": "edge", "order": [0]}, "batches": [{"edges": [0], '
                                      '"support": [{"weights": ["1"], "prob": "1/2"}]}]}'])
    def test_malformed(self, text):
        with pytest.raises(DomainError):
            loads_instance(text)

    def test_batch_count_checked(self):
        g = Graph(2, ((0, 1),))
        with pytest.raises(DomainError):
            Instance(MatchingFamily(g), BatchStructure.edge([0]), (D.point([1]), D.point([1])))
