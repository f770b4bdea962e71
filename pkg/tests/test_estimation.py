from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prophet_match.core import CapacityError, DomainError
from prophet_match.estimation import (
    RunningStats,
    exact_expectation,
    mc_expectation,
    mc_stats,
    selectability_report,
    simulate_trials,
    worker_count,
)
from prophet_match.instances import random_instance
from prophet_match.prophet import dynamic_pricing, greedy_online, prophet_via_ocrs

F = Fraction


class TestRunningStats:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(0, 60))
    def test_merge_matches_single_pass(self, values, cut):
        cut = min(cut, len(values))
        merged = RunningStats().push(values[:cut]).merge(RunningStats().push(values[cut:]))
        assert merged.count == len(values)
        assert merged.mean == pytest.approx(float(np.mean(values)), abs=1e-9)
        assert merged.variance == pytest.approx(float(np.var(values, ddof=1)), abs=1e-6, rel=1e-9)

    def test_add_equals_push(self):
        a = RunningStats()
        for v in (1.0, 4.0, 2.5):
            a.add(v)
        b = RunningStats().push([1.0, 4.0, 2.5])
        assert a.mean == pytest.approx(b.mean) and a.m2 == pytest.approx(b.m2)

    def test_empty_halfwidth(self):
        assert RunningStats().halfwidth == float("inf")


class TestExactEngine:
    def test_linearity(self):
        proc = prophet_via_ocrs(random_instance(n_vertices=5, seed=8))
        out = exact_expectation(proc)
        assert out.value == sum(out.per_batch) == sum(out.per_element)

    def test_final_distribution_sums_to_one(self):
        out = exact_expectation(dynamic_pricing(random_instance(n_vertices=5, seed=9)))
        assert sum(out.final_states.values()) == 1

    def test_capacity(self):
        with pytest.raises(CapacityError):
            exact_expectation(prophet_via_ocrs(random_instance(n_vertices=5, seed=8)), cap=3)

    def test_report_events_are_consistent(self):
        proc = prophet_via_ocrs(random_instance(n_vertices=5, seed=10))
        rep = selectability_report(proc)
        for entry in rep.entries:
            assert 0 <= entry["probability"] <= 1
        assert rep.minimum == F(1, 2)


class TestMonteCarlo:
    def test_agrees_with_exact(self):
        proc = prophet_via_ocrs(random_instance(n_vertices=5, seed=12))
        exact = float(exact_expectation(proc).value)
        res = mc_expectation(proc, 30_000, seed=5)
        assert abs(res.value - exact) <= 3 * res.std / np.sqrt(30_000)

    def test_identical_across_worker_counts(self):
        proc = greedy_online(random_instance(n_vertices=5, seed=13))
        a = mc_expectation(proc, 20_000, seed=3, workers=1, chunk=4096)
        b = mc_expectation(proc, 20_000, seed=3, workers=4, chunk=4096)
        assert a.value == b.value and a.ci_halfwidth == b.ci_halfwidth

    def test_shards_merge_to_the_whole(self):
        proc = greedy_online(random_instance(n_vertices=5, seed=14))
        whole = mc_stats(proc, 9000, seed=1, chunk=1000)
        left = mc_stats(proc, 4000, seed=1, chunk=1000)
        right = mc_stats(proc, 5000, seed=1, start=4000, chunk=1000)
        left.merge(right)
        assert left.count == whole.count
        assert left.mean == pytest.approx(whole.mean, abs=1e-12)

    def test_trials_are_addressable(self):
        proc = prophet_via_ocrs(random_instance(n_vertices=5, seed=15))
        full = simulate_trials(proc, 4, 0, 50)
        tail = simulate_trials(proc, 4, 30, 20)
        assert np.array_equal(full.values[30:], tail.values)
        assert np.array_equal(full.chosen[30:], tail.chosen)

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            mc_expectation(greedy_online(random_instance(seed=1)), 1, seed=0)

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("PROPHET_MATCH_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("PROPHET_MATCH_THREADS", "many")
        with pytest.raises(DomainError):
            worker_count()
