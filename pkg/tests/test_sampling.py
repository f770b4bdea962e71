from fractions import Fraction

import numpy as np
import pytest

from prophet_match.core import DomainError
from prophet_match.instances import bad_ocrs_example, fig1b_ex_ante_gadget, random_instance
from prophet_match.oracles import ex_ante_opt
from prophet_match.sampling import (
    BlockLayout,
    ExAnteRealizer,
    OptRealizer,
    TrialBlock,
    ex_ante_realize,
    exact_marginals,
    exact_offline,
    in_degree_polytope,
    mask_elements,
    mc_marginals,
    realize_fopt_batch,
    realize_opt_batch,
    sample_weights,
    set_mask,
    stream,
)

F = Fraction


def branch_marginals(instance, mode):
    """x_e recomputed from the per-batch realization distributions."""
    obs = OptRealizer(instance, mode)
    x = [F(0)] * instance.ground_size
    for t, batch in enumerate(instance.batches):
        for a, p_atom in enumerate(instance.distributions[t].probabilities):
            for p, key in obs.branches(t, a):
                val = obs.decode(t, key)
                if mode == "opt":
                    for e in val:
                        x[e] += p_atom * p
                else:
                    for e, share in zip(batch, val):
                        x[e] += p_atom * p * share
    return tuple(x)


class TestRealizations:
    def test_triangle_vertex_batch(self, unit_triangle_vertex):
        obs = OptRealizer(unit_triangle_vertex)
        # the last vertex sees edges 1 and 2; the lex optimum of the unit triangle is edge 0
        assert obs.branches(2, 0) == [(F(1), 0)]
        assert obs.branches(1, 0) == [(F(1), 1)]

    def test_half_path_distribution(self, half_path):
        obs = OptRealizer(half_path)
        t = next(i for i, b in enumerate(half_path.batches) if 0 in b)
        dist = {mask_elements(k): p for p, k in obs.branches(t, 0)}
        assert sum(dist.values()) == 1
        assert all(len(s) <= 1 for s in dist)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("mode", ["opt", "fopt"])
    def test_marginal_identity(self, seed, mode):
        inst = random_instance(n_vertices=5, seed=seed, correlated=bool(seed % 2))
        assert branch_marginals(inst, mode) == exact_marginals(inst, mode)

    def test_identity_with_uniform_ties(self):
        inst = bad_ocrs_example()
        assert branch_marginals(inst, "opt") == exact_marginals(inst, "opt")
        assert exact_marginals(inst, "opt") == (F(3, 8), F(3, 8), F(5, 8), F(5, 8))

    def test_vertex_arrival_realizes_at_most_one_edge(self):
        inst = random_instance(n_vertices=6, seed=11)
        obs = OptRealizer(inst)
        for t in range(inst.n_batches):
            for a in range(inst.distributions[t].size):
                assert all(bin(k).count("1") <= 1 for _, k in obs.branches(t, a))

    def test_marginals_in_degree_polytope(self):
        inst = random_instance(n_vertices=6, seed=12)
        assert in_degree_polytope(inst, exact_marginals(inst, "opt"))
        assert in_degree_polytope(inst, exact_marginals(inst, "fopt"))
        assert not in_degree_polytope(inst, [F(1)] * inst.ground_size)

    def test_mc_marginals_near_exact(self):
        inst = random_instance(n_vertices=5, seed=3)
        exact = np.array([float(v) for v in exact_marginals(inst)])
        est = mc_marginals(inst, "opt", 40_000, stream(7))
        assert np.all(np.abs(est.mean - exact) <= np.maximum(4 * est.halfwidth / 1.96, 1e-3))

    def test_single_step_wrappers(self, half_path):
        rng = stream(1)
        t = next(i for i, b in enumerate(half_path.batches) if b)
        for _ in range(20):
            r = realize_opt_batch(half_path, t, 0, rng)
            assert r <= set(half_path.batches[t])
        fr = realize_fopt_batch(half_path, t, 0, rng)
        assert set(fr) == set(half_path.batches[t])
        with pytest.raises(DomainError):
            realize_opt_batch(half_path, 99, 0, rng)

    def test_unknown_mode(self, half_path):
        with pytest.raises(DomainError):
            OptRealizer(half_path, "lp")

    def test_value_of_unit_triangle(self, unit_triangle_vertex):
        assert exact_offline(unit_triangle_vertex)["value"] == 1
        assert exact_offline(unit_triangle_vertex, "fopt")["value"] == F(3, 2)


class TestExAnte:
    def test_realizer_matches_y(self):
        inst = fig1b_ex_ante_gadget(F(1, 100))
        sol = ex_ante_opt(inst.graph, inst.marginals())
        obs = ExAnteRealizer(inst, sol)
        for t, batch in enumerate(inst.batches):
            (e,) = batch
            got = sum(p_atom * p for a, p_atom in enumerate(inst.distributions[t].probabilities)
                      for p, k in obs.branches(t, a) if k >> e & 1)
            assert got == sol.y[e]

    def test_threshold_coin_needs_rng(self, triangle):
        from prophet_match.core import DiscreteJointDistribution as D
        sol = ex_ante_opt(triangle, [D.two_point(1, F(1, 2))] * 3)
        # y = 1/2 is exactly the mass of the high atom, so no coin is needed
        assert sol.thresholds == (1, 1, 1) and sol.shares == (1, 1, 1)
        assert ex_ante_realize([1, 0, 1], sol) == {0, 2}
        sol = ex_ante_opt(triangle, [D.two_point(1, F(3, 4))] * 3)
        assert sol.shares[0] == F(2, 3)
        with pytest.raises(DomainError):
            ex_ante_realize([1, 0, 0], sol)
        hits = sum(0 in ex_ante_realize([1, 0, 0], sol, stream(0, i)) for i in range(3000))
        assert abs(hits / 3000 - 2 / 3) < 0.04


class TestRandomness:
    def test_sample_weights_is_in_support(self, half_path):
        rng = stream(3)
        seen = {sample_weights(half_path, rng) for _ in range(200)}
        assert seen == {(F(2), F(3), F(2)), (F(0), F(3), F(2))}

    def test_stream_independence_and_reproducibility(self):
        a = stream(5, 1).random(4)
        assert np.array_equal(a, stream(5, 1).random(4))
        assert not np.array_equal(a, stream(5, 2).random(4))

    def test_trial_blocks_are_position_addressed(self):
        layout = BlockLayout(3, 4)
        whole = TrialBlock.draw(layout, 9, 0, 10)
        part = TrialBlock.draw(layout, 9, 6, 4)
        assert np.array_equal(whole.atoms[6:], part.atoms)
        assert np.array_equal(whole.coins[6:], part.coins)
        assert np.array_equal(whole.resample[6:], part.resample)

    def test_mask_round_trip(self):
        assert mask_elements(set_mask({0, 3, 70})) == {0, 3, 70}
