"""Online contention resolution schemes for matchings.

Every scheme is an online policy: ``decide(t, state, obs, atom)`` returns the
distribution of its action at step ``t`` as ``(probability, new_state,
chosen_mask)`` triples. ``state`` is the bitmask of matched vertices and
``obs`` is the decoded realization (a frozenset of elements, or a tuple of
fractional values over the batch). Both evaluation engines consume this
interface, so the exact and Monte-Carlo results describe the same process.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .core import (
    EXACT,
    ArrivalKind,
    CapacityError,
    CertificationError,
    ContractError,
    DomainError,
    Graph,
    Instance,
    NumericPolicy,
)

log = logging.getLogger(__name__)

EXACT_PREFIX_CAP = 22


# ---------------------------------------------------------------------------
# Constants


@dataclass(frozen=True)
class OcrsConstant:
    value: Fraction
    provenance: str
    residual: float = 0.0

    def __float__(self) -> float:
        return float(self.value)


def _bisect(g: Callable[[Fraction], Fraction], lo: Fraction, hi: Fraction, precision: float) -> Fraction:
    if g(lo) <= 0 or g(hi) >= 0:
        raise ValueError("root is not bracketed")
    while hi - lo > precision:
        mid = (lo + hi) / 2
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def independent_gap(c):
    return 1 - 2 * c + c * c - c


def improved_gap(c):
    ratio = (1 - 2 * c) / (1 - c)
    return 1 - 2 * c + c * c / 2 * ratio * ratio - c


def solve_independent_c(precision: float = 1e-12) -> OcrsConstant:
    """Root of ``1 - 3c + c^2`` in (0, 1/2); equals (3 - sqrt 5)/2."""
    v = _bisect(independent_gap, Fraction(0), Fraction(1, 2), precision)
    return OcrsConstant(v, "independent_root", abs(float(independent_gap(v))))


def solve_improved_c(precision: float = 1e-12) -> OcrsConstant:
    """Bisection root of the improved selectability equation on (0, 1/2)."""
    if not 0 < precision <= 1e-3:
        raise DomainError("precision must lie in (0, 1e-3]")
    v = _bisect(improved_gap, Fraction(0), Fraction(1, 2), precision)
    return OcrsConstant(v, "improved_root", abs(float(improved_gap(v))))


WARMUP = OcrsConstant(Fraction(1, 3), "warmup_one_third")


@lru_cache(maxsize=None)
def constant(name: str) -> OcrsConstant:
    """Constant by provenance name: ``warmup``, ``independent`` or ``improved``."""
    if name in ("warmup", "warmup_one_third"):
        return WARMUP
    if name in ("independent", "independent_root"):
        return solve_independent_c()
    if name in ("improved", "improved_root"):
        return solve_improved_c()
    raise DomainError(f"unknown constant {name!r}")


# ---------------------------------------------------------------------------
# Policy interface


class Policy:
    numeric: NumericPolicy = EXACT

    def start(self) -> int:
        return 0

    def decide(self, t: int, state: int, obs, atom: int) -> list[tuple]:
        raise NotImplementedError

    def one(self):
        return Fraction(1) if self.numeric.exact else 1.0


def _edge_other(graph: Graph, e: int, v: int) -> int:
    a, b = graph.edges[e]
    return b if a == v else a


def _require_vertex_arrival(instance: Instance) -> None:
    if instance.arrival.kind is not ArrivalKind.VERTEX:
        raise DomainError("this scheme needs vertex arrival")


def _check_degree(graph: Graph, x: Sequence) -> None:
    if len(x) != graph.edge_count:
        raise DomainError(f"expected {graph.edge_count} marginals, got {len(x)}")
    for v in range(graph.vertex_count):
        total = sum(x[e] for e in graph.incident[v])
        if total > 1 + 1e-12 if isinstance(total, float) else total > 1:
            raise DomainError(f"marginals leave the degree polytope at vertex {v} (sum {total})")


# ---------------------------------------------------------------------------
# Vertex arrival


def vertex_alpha(graph: Graph, x: Sequence, order: Sequence[int], u: int, v: int):
    """Acceptance probability of edge (u, v) when v arrives: 1 / (2 - prior mass at u)."""
    position = {z: i for i, z in enumerate(order)}
    if position[u] >= position[v]:
        raise DomainError(f"vertex {u} does not precede {v}")
    total = sum(x[e] for e in graph.incident[u])
    if total > 1:
        raise DomainError(f"degree sum at {u} is {total} > 1")
    prior = sum((x[e] for e in graph.incident[u] if position[_edge_other(graph, e, u)] < position[v]), 0 * total)
    return 1 / (2 - prior)


def vertex_alpha_table(instance: Instance, x: Sequence, numeric: NumericPolicy = EXACT) -> dict[int, object]:
    """``edge -> alpha`` with alpha evaluated at the arrival of the later endpoint."""
    _require_vertex_arrival(instance)
    g = instance.graph
    xs = [numeric.convert(v) for v in x]
    _check_degree(g, xs)
    order = instance.arrival.order
    position = {z: i for i, z in enumerate(order)}
    prior = [0 * xs[0] if xs else 0] * g.vertex_count
    table = {}
    for v in order:
        batch = [e for e in g.incident[v] if position[_edge_other(g, e, v)] < position[v]]
        for e in batch:
            u = _edge_other(g, e, v)
            table[e] = 1 / (2 - prior[u])
        for e in batch:
            u = _edge_other(g, e, v)
            prior[u] += xs[e]
            prior[v] += xs[e]
    return table


class VertexOCRS(Policy):
    """Match the single realized edge (u, v) with probability alpha_u(v) when u is free."""

    def __init__(self, instance: Instance, x: Sequence, numeric: NumericPolicy = EXACT):
        self.instance = instance
        self.numeric = numeric
        self.alpha = vertex_alpha_table(instance, x, numeric)
        self.order = instance.arrival.order

    def decide(self, t, state, obs, atom):
        one = self.one()
        if not obs:
            return [(one, state, 0)]
        if len(obs) > 1:
            raise ContractError(f"batch {t} realized {len(obs)} edges; this scheme needs at most one")
        (e,) = obs
        g = self.instance.graph
        v = self.order[t]
        u = _edge_other(g, e, v)
        if state >> u & 1:
            return [(one, state, 0)]
        a = self.alpha[e]
        taken = (a, state | 1 << u | 1 << v, 1 << e)
        if a == 1:
            return [taken]
        return [taken, (one - a, state, 0)]


class FractionalVertexOCRS(Policy):
    """Pick at most one free earlier vertex u with probability r_(uv) * alpha_u(v)."""

    def __init__(self, instance: Instance, x: Sequence, numeric: NumericPolicy = EXACT):
        self.instance = instance
        self.numeric = numeric
        self.alpha = vertex_alpha_table(instance, x, numeric)
        self.order = instance.arrival.order

    def decide(self, t, state, obs, atom):
        one = self.one()
        g = self.instance.graph
        v = self.order[t]
        batch = self.instance.batches[t]
        if len(obs) != len(batch):
            raise ContractError("fractional realization does not match the batch")
        if sum(obs) > 1:
            raise ContractError(f"fractional realization at batch {t} sums to {sum(obs)} > 1")
        out = []
        total = 0 * one
        for e, r in zip(batch, obs):
            u = _edge_other(g, e, v)
            if r and not state >> u & 1:
                p = self.numeric.convert(r) * self.alpha[e]
                out.append((p, state | 1 << u | 1 << v, 1 << e))
                total += p
        if total > one:
            raise ContractError(f"selection probabilities at batch {t} sum to {total} > 1")
        if total != one:
            out.append((one - total, state, 0))
        return out


# ---------------------------------------------------------------------------
# Edge arrival


def _require_edge_arrival(instance: Instance) -> None:
    if any(len(b) != 1 for b in instance.batches):
        raise DomainError("this scheme needs edge arrival (singleton batches)")


def _edge_masks_in_order(graph: Graph, order: Sequence[int]) -> list[int]:
    return [graph.edge_masks[e] for e in order]


def unmatched_prob_exact(graph: Graph, x: Sequence, order: Sequence[int], alphas: Sequence, position: int,
                         numeric: NumericPolicy = EXACT):
    """Probability both endpoints of ``order[position]`` are free in the coupled process.

    Each earlier edge ``f`` is active independently with probability
    ``alphas[i] * x_f`` and active edges are matched greedily in order. The
    distribution of matched-vertex sets is propagated forward.
    """
    if position > EXACT_PREFIX_CAP:
        raise CapacityError(f"prefix of {position} edges exceeds cap {EXACT_PREFIX_CAP}")
    one = Fraction(1) if numeric.exact else 1.0
    dist = {0: one}
    masks = _edge_masks_in_order(graph, order)
    for i in range(position):
        dist = _advance(dist, masks[i], alphas[i] * numeric.convert(x[order[i]]), one)
    target = masks[position]
    return sum((p for s, p in dist.items() if not s & target), 0 * one)


def _advance(dist: dict[int, object], mask: int, q, one) -> dict[int, object]:
    if not q:
        return dist
    out: dict[int, object] = {}
    for s, p in dist.items():
        if s & mask:
            out[s] = out.get(s, 0) + p
        else:
            out[s | mask] = out.get(s | mask, 0) + p * q
            if q != one:
                out[s] = out.get(s, 0) + p * (one - q)
    return out


@dataclass
class EdgeAlphaTable:
    alphas: list
    unmatched: list
    diagnostics: list[str] = field(default_factory=list)


def edge_alpha_table(instance: Instance, x: Sequence, c: OcrsConstant | Fraction | float,
                     numeric: NumericPolicy = EXACT, oracle: str = "exact", n: int = 100_000,
                     rng: np.random.Generator | None = None) -> EdgeAlphaTable:
    """Acceptance probabilities ``c / Pr[endpoints free]`` in arrival order.

    Each alpha uses only the prefix before its edge. The exact oracle raises
    :class:`CertificationError` when an alpha would exceed one. The
    Monte-Carlo oracle clamps such alphas to one and records a diagnostic.
    """
    _require_edge_arrival(instance)
    g = instance.graph
    order = [b[0] for b in instance.batches]
    cval = c.value if isinstance(c, OcrsConstant) else c
    cval = numeric.convert(cval)
    xs = [numeric.convert(v) for v in x]
    _check_degree(g, xs)
    table = EdgeAlphaTable([], [])
    masks = _edge_masks_in_order(g, order)
    if oracle == "exact":
        if len(order) > EXACT_PREFIX_CAP + 1:
            raise CapacityError(f"{len(order)} edges exceed the exact prefix cap {EXACT_PREFIX_CAP}")
        one = Fraction(1) if numeric.exact else 1.0
        dist = {0: one}
        for i, e in enumerate(order):
            free = sum((p for s, p in dist.items() if not s & masks[i]), 0 * one)
            if free < cval:
                raise CertificationError(
                    f"edge {e} ({g.edges[e]}): Pr[endpoints free] = {float(free):.6g} < c = {float(cval):.6g}",
                    edge=e, value=free,
                )
            a = cval / free
            table.alphas.append(a)
            table.unmatched.append(free)
            dist = _advance(dist, masks[i], a * xs[e], one)
        return table
    if oracle != "mc":
        raise DomainError(f"unknown alpha oracle {oracle!r}")
    if rng is None:
        raise DomainError("the Monte-Carlo oracle needs an rng")
    matched = np.zeros(n, dtype=np.int64)
    for i, e in enumerate(order):
        free = float(np.mean((matched & masks[i]) == 0))
        raw = float(cval) / free if free > 0 else math.inf
        if raw > 1:
            table.diagnostics.append(f"edge {e}: estimated alpha {raw:.6g} clamped to 1")
            log.warning("edge %d: estimated alpha %.6g clamped to 1", e, raw)
        a = min(raw, 1.0)
        table.alphas.append(numeric.convert(a) if not numeric.exact else Fraction(a))
        table.unmatched.append(free)
        active = rng.random(n) < a * float(xs[e])
        hit = active & ((matched & masks[i]) == 0)
        matched = np.where(hit, matched | masks[i], matched)
    return table


def unmatched_prob_mc(graph: Graph, x: Sequence, order: Sequence[int], alphas: Sequence, position: int,
                      n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Empirical ``Pr[endpoints free]`` in the coupled process and its 95% half-width."""
    if n < 1:
        raise DomainError("n must be positive")
    masks = _edge_masks_in_order(graph, order)
    matched = np.zeros(n, dtype=np.int64)
    for i in range(position):
        active = rng.random(n) < float(alphas[i]) * float(x[order[i]])
        hit = active & ((matched & masks[i]) == 0)
        matched = np.where(hit, matched | masks[i], matched)
    free = (matched & masks[position]) == 0
    p = float(free.mean())
    return p, 1.96 * math.sqrt(p * (1 - p) / n)


class EdgeOCRS(Policy):
    """Match a realized edge with both endpoints free with probability alpha_e."""

    def __init__(self, instance: Instance, x: Sequence, c: OcrsConstant | Fraction | float,
                 numeric: NumericPolicy = EXACT, oracle: str = "exact", n: int = 100_000,
                 rng: np.random.Generator | None = None):
        self.instance = instance
        self.numeric = numeric
        self.c = c
        self.table = edge_alpha_table(instance, x, c, numeric, oracle, n, rng)
        self.alpha = {b[0]: a for b, a in zip(instance.batches, self.table.alphas)}

    def decide(self, t, state, obs, atom):
        one = self.one()
        (e,) = self.instance.batches[t]
        mask = self.instance.graph.edge_masks[e]
        if e not in obs or state & mask:
            return [(one, state, 0)]
        a = self.alpha[e]
        taken = (a, state | mask, 1 << e)
        if a == 1:
            return [taken]
        if a == 0:
            return [(one, state, 0)]
        return [taken, (one - a, state, 0)]


# ---------------------------------------------------------------------------
# Check on active edges


@dataclass(frozen=True)
class GapCheck:
    vertex: int
    exact: Fraction | float
    estimate: float
    sigma: float
    bound: float
    passed: bool


def active_edge_gap_check(instance: Instance, x: Sequence, c: OcrsConstant, vertex: int,
                          rng: np.random.Generator, n: int = 100_000) -> GapCheck:
    """Estimate ``Pr[no edge at vertex is active]`` and compare it with ``(1-2c)/(1-c)``.

    The check passes when the estimate is at least the bound minus five
    standard errors.
    """
    table = edge_alpha_table(instance, x, c)
    order = [b[0] for b in instance.batches]
    q = {e: a * Fraction(x[e]) for e, a in zip(order, table.alphas)}
    incident = instance.graph.incident[vertex]
    exact = Fraction(1)
    for e in incident:
        exact *= 1 - q[e]
    if incident:
        probs = np.array([float(q[e]) for e in incident])
        none_active = np.all(rng.random((n, len(incident))) >= probs, axis=1)
        est = float(none_active.mean())
    else:
        est = 1.0
    sigma = math.sqrt(est * (1 - est) / n)
    cv = float(c.value if isinstance(c, OcrsConstant) else c)
    bound = (1 - 2 * cv) / (1 - cv)
    return GapCheck(vertex, exact, est, sigma, bound, est >= bound - 5 * sigma)


# ---------------------------------------------------------------------------
# Single runs over a given realization stream


@dataclass(frozen=True)
class Selection:
    chosen: tuple[frozenset[int], ...]
    matched: frozenset[int]

    @property
    def elements(self) -> frozenset[int]:
        return frozenset().union(*self.chosen) if self.chosen else frozenset()


def run_policy(policy: Policy, instance: Instance, observations: Sequence, rng: np.random.Generator,
               atoms: Sequence[int] | None = None) -> Selection:
    """Run ``policy`` once; one uniform is drawn per step to pick the action."""
    from .sampling import mask_elements

    state = policy.start()
    chosen = []
    for t, obs in enumerate(observations):
        branches = policy.decide(t, state, obs, atoms[t] if atoms is not None else 0)
        u = rng.random()
        acc = 0.0
        pick = branches[-1]
        for br in branches:
            acc += float(br[0])
            if u < acc:
                pick = br
                break
        state = pick[1]
        chosen.append(mask_elements(pick[2]))
    return Selection(tuple(chosen), mask_elements(state))


def vertex_ocrs_run(instance: Instance, x: Sequence, realizations: Sequence[frozenset[int]],
                    rng: np.random.Generator) -> Selection:
    return run_policy(VertexOCRS(instance, x), instance, [frozenset(r) for r in realizations], rng)


def fractional_vertex_ocrs_run(instance: Instance, x: Sequence, realizations: Sequence[Sequence],
                               rng: np.random.Generator) -> Selection:
    """``realizations[t]`` lists the fractional values over batch ``t`` in batch order."""
    obs = [tuple(Fraction(v) for v in r) for r in realizations]
    return run_policy(FractionalVertexOCRS(instance, x), instance, obs, rng)


def edge_ocrs_run(instance: Instance, x: Sequence, c: OcrsConstant, realizations: Sequence[frozenset[int]],
                  rng: np.random.Generator, oracle: str = "exact", n: int = 100_000,
                  numeric: NumericPolicy = EXACT) -> Selection:
    policy = EdgeOCRS(instance, x, c, numeric, oracle, n, rng if oracle == "mc" else None)
    return run_policy(policy, instance, [frozenset(r) for r in realizations], rng)
