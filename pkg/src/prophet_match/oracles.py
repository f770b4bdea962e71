"""Offline benchmarks: OPT, the fractional optimum over the degree polytope, and the ex-ante relaxation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import (
    CapacityError,
    DiscreteJointDistribution,
    DomainError,
    ExplicitFamily,
    FeasibilityFamily,
    Graph,
    MatchingFamily,
    as_fraction,
)

ENUMERATION_CAP = 24
DP_VERTEX_CAP = 20
_INT64_SAFE = 2**62


def common_scale(values) -> int:
    """Least common denominator of an iterable of fractions."""
    d = 1
    for v in values:
        d = math.lcm(d, Fraction(v).denominator)
    return d


class SetTable:
    """Candidate sets in a fixed order, as an incidence matrix.

    Row ``k`` of ``matrix`` is the indicator (or, for fractional tables, twice
    the value) of candidate ``k``. ``best`` returns the first maximizing row, so
    the table order is the tie-break order.
    """

    def __init__(self, rows: Sequence[Sequence[int]], ground_size: int, coefficients=None):
        self.ground_size = ground_size
        self.size = len(rows)
        self.matrix = np.zeros((self.size, ground_size), dtype=np.int64)
        for k, row in enumerate(rows):
            if coefficients is None:
                self.matrix[k, list(row)] = 1
            else:
                for e, c in zip(row, coefficients[k]):
                    self.matrix[k, e] = c
        self.supports = [tuple(r) for r in rows]
        self.sets = [frozenset(r) for r in rows]
        self._object_matrix = None

    def _values(self, scaled: np.ndarray) -> np.ndarray:
        if scaled.dtype == object:
            if self._object_matrix is None:
                self._object_matrix = self.matrix.astype(object)
            return scaled @ self._object_matrix.T
        return scaled @ self.matrix.T

    def best(self, scaled: np.ndarray, chunk: int = 1 << 15) -> np.ndarray:
        """Index of the first maximizing candidate for each row of integer weights."""
        scaled = np.atleast_2d(scaled)
        out = np.empty(scaled.shape[0], dtype=np.int64)
        for start in range(0, scaled.shape[0], chunk):
            vals = self._values(scaled[start:start + chunk])
            out[start:start + chunk] = np.argmax(vals, axis=1) if vals.dtype != object else [
                max(range(vals.shape[1]), key=lambda k, r=r: (r[k], -k)) for r in vals
            ]
        return out

    def maximal_maximizers(self, scaled_row: np.ndarray) -> list[int]:
        """Inclusion-maximal maximizers of one weight row, in table order."""
        vals = self._values(np.atleast_2d(scaled_row))[0]
        top = vals.max()
        idx = [int(k) for k in np.flatnonzero(vals == top)]
        return [k for k in idx if not any(self.sets[k] < self.sets[j] for j in idx)]


def scale_rows(rows: Sequence[Sequence[Fraction]], scale: int | None = None) -> tuple[np.ndarray, int]:
    """Integer matrix ``rows * scale`` with ``scale`` the common denominator."""
    if scale is None:
        scale = common_scale(x for r in rows for x in r)
    ints = [[int(x * scale) for x in r] for r in rows]
    width = len(ints[0]) if ints else 0
    biggest = max((abs(v) for r in ints for v in r), default=0)
    if biggest * max(width, 1) < _INT64_SAFE:
        return np.array(ints, dtype=np.int64).reshape(len(ints), width), scale
    return np.array(ints, dtype=object).reshape(len(ints), width), scale


@lru_cache(maxsize=64)
def feasible_table(family: FeasibilityFamily) -> SetTable:
    return SetTable(family.enumerate_feasible(), family.ground_size)


# ---------------------------------------------------------------------------
# Integral optimum


def _check_weights(weights: Sequence, size: int) -> tuple[Fraction, ...]:
    if len(weights) != size:
        raise DomainError(f"expected {size} weights, got {len(weights)}")
    w = tuple(as_fraction(x) for x in weights)
    if any(x < 0 for x in w):
        raise DomainError("weights must be nonnegative")
    return w


def max_weight_feasible_set(family: FeasibilityFamily, weights: Sequence) -> frozenset[int]:
    """Maximum-weight feasible set; ties go to the lexicographically smallest index sequence."""
    w = _check_weights(weights, family.ground_size)
    if isinstance(family, ExplicitFamily) and family.ground_size > ExplicitFamily.MAX_GROUND:
        raise CapacityError(f"explicit families are capped at {ExplicitFamily.MAX_GROUND} elements")
    table = feasible_table(family)
    scaled, _ = scale_rows([w])
    return table.sets[int(table.best(scaled)[0])]


def _matching_dp(graph: Graph, w: tuple[Fraction, ...]) -> frozenset[int]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(graph.vertex_count)]
    for i, (u, v) in enumerate(graph.edges):
        adj[u].append((v, i))
        adj[v].append((u, i))
    memo: dict[int, tuple[Fraction, tuple[int, ...]]] = {}

    def solve(free: int) -> tuple[Fraction, tuple[int, ...]]:
        if free == 0:
            return Fraction(0), ()
        if free in memo:
            return memo[free]
        v = (free & -free).bit_length() - 1
        rest = free & ~(1 << v)
        best = solve(rest)
        for u, i in adj[v]:
            if rest >> u & 1 and w[i] > 0:
                val, edges = solve(rest & ~(1 << u))
                if val + w[i] > best[0]:
                    best = (val + w[i], tuple(sorted(edges + (i,))))
        memo[free] = best
        return best

    return frozenset(solve((1 << graph.vertex_count) - 1)[1])


def max_weight_matching(graph: Graph, weights: Sequence, cap: int = ENUMERATION_CAP) -> frozenset[int]:
    """Maximum-weight matching as a set of edge indices.

    Up to ``cap`` edges all matchings are enumerated and ties go to the
    lexicographically smallest edge-index sequence. Larger graphs with at most
    20 vertices use a DP over vertex subsets whose tie-break is deterministic
    but not lexicographic.
    """
    w = _check_weights(weights, graph.edge_count)
    if graph.edge_count <= cap:
        return max_weight_feasible_set(MatchingFamily(graph), w)
    if graph.vertex_count <= DP_VERTEX_CAP:
        return _matching_dp(graph, w)
    raise CapacityError(f"graph has {graph.edge_count} edges > cap {cap} and more than {DP_VERTEX_CAP} vertices")


def opt_distribution(
    family: FeasibilityFamily, weights: Sequence, tie_break: str = "lex"
) -> list[tuple[frozenset[int], Fraction]]:
    """Distribution of OPT(w) under the given tie-break rule."""
    w = _check_weights(weights, family.ground_size)
    table = feasible_table(family)
    scaled, _ = scale_rows([w])
    if tie_break == "lex":
        return [(table.sets[int(table.best(scaled)[0])], Fraction(1))]
    if tie_break != "uniform":
        raise DomainError(f"unknown tie-break rule {tie_break!r}")
    ks = table.maximal_maximizers(scaled[0])
    return [(table.sets[k], Fraction(1, len(ks))) for k in ks]


# ---------------------------------------------------------------------------
# Fractional optimum


def _odd_cycles(graph: Graph) -> list[tuple[int, ...]]:
    """Simple odd cycles as sorted edge-index tuples, each listed once."""
    n = graph.vertex_count
    nbrs = [set() for _ in range(n)]
    for u, v in graph.edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    found = set()

    def walk(start: int, path: list[int]) -> None:
        last = path[-1]
        for nxt in sorted(nbrs[last]):
            if nxt == start and len(path) >= 3 and len(path) % 2 == 1 and path[1] < path[-1]:
                cyc = path + [start]
                found.add(tuple(sorted(graph.edge_index(a, b) for a, b in zip(cyc, cyc[1:]))))
            elif nxt > start and nxt not in path:
                walk(start, path + [nxt])

    for s in range(n):
        walk(s, [s])
    return sorted(found)


def cycle_vertices(graph: Graph, cycle: tuple[int, ...]) -> int:
    mask = 0
    for e in cycle:
        mask |= graph.edge_masks[e]
    return mask


@lru_cache(maxsize=64)
def fractional_table(graph: Graph, cap: int = 500_000) -> SetTable:
    """Vertices of the degree polytope: a matching at value 1 plus disjoint odd cycles at 1/2.

    Entries of the matrix are twice the edge value.
    """
    n = graph.vertex_count
    cycles = _odd_cycles(graph)
    cycles_by_min: dict[int, list[tuple[tuple[int, ...], int]]] = {}
    for cyc in cycles:
        mask = cycle_vertices(graph, cyc)
        low = (mask & -mask).bit_length() - 1
        cycles_by_min.setdefault(low, []).append((cyc, mask))
    by_low_edge: dict[int, list[tuple[int, int]]] = {}
    for i, (u, v) in enumerate(graph.edges):
        by_low_edge.setdefault(u, []).append((i, v))
    out: list[dict[int, int]] = []

    def rec(v: int, covered: int, chosen: dict[int, int]) -> None:
        while v < n and covered >> v & 1:
            v += 1
        if v >= n:
            out.append(dict(chosen))
            if len(out) > cap:
                raise CapacityError(f"more than {cap} basic fractional solutions")
            return
        rec(v + 1, covered, chosen)
        for i, u in by_low_edge.get(v, ()):
            if not covered >> u & 1:
                chosen[i] = 2
                rec(v + 1, covered | (1 << v) | (1 << u), chosen)
                del chosen[i]
        for cyc, mask in cycles_by_min.get(v, ()):
            if not covered & mask:
                for e in cyc:
                    chosen[e] = 1
                rec(v + 1, covered | mask, chosen)
                for e in cyc:
                    del chosen[e]

    rec(0, 0, {})
    out.sort(key=lambda d: tuple(sorted(d)))
    rows = [tuple(sorted(d)) for d in out]
    coefs = [tuple(d[e] for e in r) for r, d in zip(rows, out)]
    return SetTable(rows, graph.edge_count, coefs)


def fractional_matching_opt(graph: Graph, weights: Sequence) -> tuple[tuple[Fraction, ...], Fraction]:
    """Maximizer of <w, y> over the degree polytope, and its value.

    The optimum is attained at a half-integral vertex, so the vertices are
    enumerated; ties go to the vertex with the lexicographically smallest
    support.
    """
    w = _check_weights(weights, graph.edge_count)
    table = fractional_table(graph)
    scaled, _ = scale_rows([w])
    k = int(table.best(scaled)[0])
    y = tuple(Fraction(int(c), 2) for c in table.matrix[k])
    return y, sum((a * b for a, b in zip(w, y)), Fraction(0))


def fractional_matching_value_double_cover(graph: Graph, weights: Sequence) -> Fraction:
    """Half the maximum-weight matching of the bipartite double cover.

    An independent route to the fractional optimum's value.
    """
    w = _check_weights(weights, graph.edge_count)
    n = graph.vertex_count
    if n > DP_VERTEX_CAP:
        raise CapacityError(f"double-cover DP capped at {DP_VERTEX_CAP} vertices")
    right: list[list[tuple[int, Fraction]]] = [[] for _ in range(n)]
    for i, (u, v) in enumerate(graph.edges):
        right[u].append((v, w[i]))
        right[v].append((u, w[i]))
    memo: dict[tuple[int, int], Fraction] = {}

    def best(i: int, used: int) -> Fraction:
        if i == n:
            return Fraction(0)
        key = (i, used)
        if key not in memo:
            val = best(i + 1, used)
            for j, wij in right[i]:
                if not used >> j & 1 and wij > 0:
                    val = max(val, wij + best(i + 1, used | (1 << j)))
            memo[key] = val
        return memo[key]

    return best(0, 0) / 2


# ---------------------------------------------------------------------------
# Ex-ante relaxation


def _sorted_atoms(dist: DiscreteJointDistribution) -> list[tuple[Fraction, Fraction]]:
    if dist.width != 1:
        raise DomainError("expected a single-element marginal distribution")
    return sorted(((w[0], p) for w, p in dist.atoms), key=lambda a: a[0], reverse=True)


def revenue_curve(dist: DiscreteJointDistribution, y) -> Fraction:
    """Expected weight of the top ``y``-quantile of ``dist``."""
    y = as_fraction(y)
    if not 0 <= y <= 1:
        raise DomainError(f"quantile {y} outside [0, 1]")
    total = Fraction(0)
    left = y
    for w, p in _sorted_atoms(dist):
        take = min(p, left)
        total += w * take
        left -= take
        if left == 0:
            break
    return total


def tail_threshold(dist: DiscreteJointDistribution, y) -> tuple[Fraction | None, Fraction]:
    """Threshold weight and the share of its atom that lies in the top ``y``-quantile.

    ``w`` is in the tail iff ``w > threshold``, or ``w == threshold`` with
    probability ``share``. A zero quantile has threshold ``None``.
    """
    y = as_fraction(y)
    if y == 0:
        return None, Fraction(0)
    cum = Fraction(0)
    for w, p in _sorted_atoms(dist):
        if cum + p >= y:
            return w, (y - cum) / p
        cum += p
    raise DomainError(f"quantile {y} exceeds total mass")


@dataclass(frozen=True)
class ExAnteSolution:
    y: tuple[Fraction, ...]
    thresholds: tuple[Fraction | None, ...]
    shares: tuple[Fraction, ...]
    objective: Fraction


class _FlowNetwork:
    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[Fraction] = []
        self.cost: list[Fraction] = []

    def add(self, a: int, b: int, cap: Fraction, cost: Fraction) -> int:
        idx = len(self.to)
        for src, dst, c, k in ((a, b, cap, cost), (b, a, Fraction(0), -cost)):
            self.adj[src].append(len(self.to))
            self.to.append(dst)
            self.cap.append(c)
            self.cost.append(k)
        return idx

    def min_cost_flow(self, s: int, t: int) -> Fraction:
        """Successive shortest paths while the path cost is nonpositive."""
        total = Fraction(0)
        while True:
            dist: list[Fraction | None] = [None] * self.n
            prev = [-1] * self.n
            dist[s] = Fraction(0)
            for _ in range(self.n):
                changed = False
                for a in range(self.n):
                    if dist[a] is None:
                        continue
                    for arc in self.adj[a]:
                        if self.cap[arc] > 0:
                            b = self.to[arc]
                            nd = dist[a] + self.cost[arc]
                            if dist[b] is None or nd < dist[b]:
                                dist[b] = nd
                                prev[b] = arc
                                changed = True
                if not changed:
                    break
            if dist[t] is None or dist[t] > 0:
                return total
            push = None
            v = t
            while v != s:
                arc = prev[v]
                push = self.cap[arc] if push is None else min(push, self.cap[arc])
                v = self.to[arc ^ 1]
            v = t
            while v != s:
                arc = prev[v]
                self.cap[arc] -= push
                self.cap[arc ^ 1] += push
                v = self.to[arc ^ 1]
            total += push * dist[t]


def ex_ante_opt(graph: Graph, marginals: Sequence[DiscreteJointDistribution]) -> ExAnteSolution:
    """Exact optimum of the ex-ante relaxation over the degree polytope.

    Each concave revenue curve is split into one segment per atom. The program
    over the degree polytope equals half of a max-profit flow on the bipartite
    double cover, solved exactly by successive shortest paths. Zero-profit
    segments are also filled, so the reported ``y`` is maximal among optima.
    """
    if len(marginals) != graph.edge_count:
        raise DomainError(f"expected {graph.edge_count} marginals, got {len(marginals)}")
    n = graph.vertex_count
    net = _FlowNetwork(2 * n + 2)
    s, t = 2 * n, 2 * n + 1
    for v in range(n):
        net.add(s, v, Fraction(1), Fraction(0))
        net.add(n + v, t, Fraction(1), Fraction(0))
    arcs: list[list[int]] = [[] for _ in graph.edges]
    for e, (u, v) in enumerate(graph.edges):
        for w, p in _sorted_atoms(marginals[e]):
            for a, b in ((u, v), (v, u)):
                arcs[e].append(net.add(a, n + b, p, -w))
    cost = net.min_cost_flow(s, t)
    y = []
    for e in range(graph.edge_count):
        # flow on a forward arc equals the capacity accumulated on its reverse arc
        y.append(sum((net.cap[a ^ 1] for a in arcs[e]), Fraction(0)) / 2)
    objective = sum((revenue_curve(marginals[e], y[e]) for e in range(graph.edge_count)), Fraction(0))
    if objective != -cost / 2:
        raise AssertionError("ex-ante flow value disagrees with the revenue curves")
    thresholds, shares = zip(*(tail_threshold(marginals[e], y[e]) for e in range(graph.edge_count))) if y else ((), ())
    return ExAnteSolution(tuple(y), tuple(thresholds), tuple(shares), objective)
