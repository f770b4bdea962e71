"""Built-in gadgets, random instance generation and the pricing counterexample search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
import numpy as np

from .core import (
    BatchStructure,
    DiscreteJointDistribution,
    DomainError,
    ExplicitFamily,
    Graph,
    Instance,
    MatchingFamily,
    as_fraction,
)

D = DiscreteJointDistribution


def _check_eps(eps, upper: Fraction) -> Fraction:
    eps = as_fraction(eps)
    if not 0 < eps <= upper:
        raise DomainError(f"eps must lie in (0, {upper}], got {eps}")
    return eps


def _two_triangles():
    # vertices a..f are 0..5; the two triangles come first, then the cross edges
    fixed = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    cross = [(u, v) for u in range(3) for v in range(3, 6)]
    return Graph(6, tuple(fixed + cross)), fixed, cross


def fig1a_two_triangles(eps=Fraction(1, 1000)) -> Instance:
    """Two unit triangles joined by nine rare heavy edges, triangles arriving first."""
    eps = _check_eps(eps, Fraction(1, 9))
    g, fixed, cross = _two_triangles()
    dists = [D.point([1])] * len(fixed) + [D.two_point(1 / (4 * eps), eps)] * len(cross)
    return Instance.independent(g, BatchStructure.edge(range(g.edge_count)), dists, name="fig1a")


def fig1b_ex_ante_gadget(eps=Fraction(1, 1000)) -> Instance:
    """Two coin-flip triangles joined by nine rare heavy edges, triangles arriving first."""
    eps = _check_eps(eps, Fraction(1, 9))
    g, fixed, cross = _two_triangles()
    dists = [D.two_point(1, Fraction(1, 2))] * len(fixed) + [D.two_point(Fraction(15, 62) / eps, eps)] * len(cross)
    return Instance.independent(g, BatchStructure.edge(range(g.edge_count)), dists, name="fig1b")


BAD_FAMILY_SETS = [(), (0,), (1,), (2,), (3,), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def bad_ocrs_example(eps=Fraction(1, 10**6)) -> Instance:
    """Four elements, every pair feasible except {0, 1}; batches {0, 1} and {2, 3}.

    Elements 0 and 1 weigh ``eps``; elements 2 and 3 weigh 1 or 0 with equal
    odds. Offline ties are split uniformly among inclusion-maximal optima.
    """
    eps = _check_eps(eps, Fraction(1, 100))
    family = ExplicitFamily(4, BAD_FAMILY_SETS)
    dists = [D.point([eps]), D.point([eps]), D.two_point(1, Fraction(1, 2)), D.two_point(1, Fraction(1, 2))]
    return Instance.independent(family, BatchStructure.explicit([(0, 1), (2, 3)]), dists, tie_break="uniform",
                                name="bad-ocrs")


# ---------------------------------------------------------------------------
# Random instances


DENOMINATORS = (1, 2, 3, 4, 5, 6, 8, 12, 16, 32, 64)


@dataclass(frozen=True)
class RandomParams:
    n_vertices: int = 5
    edge_prob: float = 0.5
    support_size: int = 3
    arrival: str = "vertex"
    correlated: bool = False
    max_joint: int = 4096


def _rational(rng: np.random.Generator, low: int = 0, high: int = 8) -> Fraction:
    d = int(rng.choice(DENOMINATORS))
    return Fraction(int(rng.integers(low * d, high * d + 1)), d)


def _probabilities(rng: np.random.Generator, k: int) -> list[Fraction]:
    """``k`` positive probabilities summing to one with denominator 64 at most."""
    d = int(rng.choice([x for x in (4, 8, 16, 32, 64) if x >= k]))
    cuts = sorted(rng.choice(np.arange(1, d), size=k - 1, replace=False).tolist()) if k > 1 else []
    bounds = [0] + cuts + [d]
    return [Fraction(b - a, d) for a, b in zip(bounds, bounds[1:])]


def _distribution(rng: np.random.Generator, width: int, k: int) -> DiscreteJointDistribution:
    atoms: dict[tuple[Fraction, ...], None] = {}
    tries = 0
    while len(atoms) < k and tries < 100:
        atoms[tuple(_rational(rng) for _ in range(width))] = None
        tries += 1
    probs = _probabilities(rng, len(atoms))
    return D(tuple(zip(atoms, probs)))


def random_graph(n_vertices: int, edge_prob: float, rng: np.random.Generator) -> Graph:
    edges = tuple((u, v) for u, v in itertools.combinations(range(n_vertices), 2) if rng.random() < edge_prob)
    return Graph(n_vertices, edges)


def random_instance(n_vertices: int = 5, edge_prob: float = 0.5, support_size: int = 3, arrival: str = "vertex",
                    correlated: bool = False, seed: int = 0, order: tuple | None = None,
                    max_joint: int = 4096) -> Instance:
    """Reproducible random matching instance with rational weights and probabilities.

    Independent instances draw one distribution per edge with at most
    ``support_size`` atoms and can be re-ordered freely. Correlated instances
    draw one joint distribution per batch, so a different ``order`` yields a
    different (but still seed-determined) distribution. Supports are trimmed
    until the joint support has at most ``max_joint`` atoms.
    """
    if not 0 <= n_vertices <= 8:
        raise DomainError("n_vertices must lie in [0, 8]")
    if not 1 <= support_size <= 3:
        raise DomainError("support_size must lie in [1, 3]")
    if arrival not in ("vertex", "edge"):
        raise DomainError(f"unknown arrival kind {arrival!r}")
    rng = np.random.default_rng(seed)
    g = random_graph(n_vertices, edge_prob, rng)
    if order is None:
        size = n_vertices if arrival == "vertex" else g.edge_count
        order = tuple(int(i) for i in rng.permutation(size))
    structure = BatchStructure.vertex(order) if arrival == "vertex" else BatchStructure.edge(order)
    if not correlated:
        sizes = [int(rng.integers(1, support_size + 1)) for _ in g.edges]
        while int(np.prod(sizes, dtype=object)) > max_joint:
            sizes[int(np.argmax(sizes))] -= 1
        dists = [_distribution(rng, 1, k) for k in sizes]
        return Instance.independent(g, structure, dists, name=f"random:{seed}")
    from .core import batches_of

    batches = batches_of(structure, g)
    sizes = [int(rng.integers(1, support_size + 1)) if b else 1 for b in batches]
    while int(np.prod(sizes, dtype=object)) > max_joint:
        sizes[int(np.argmax(sizes))] -= 1
    order_rng = np.random.default_rng([seed, *order])
    dists = [_distribution(order_rng, len(b), k) for b, k in zip(batches, sizes)]
    return Instance(MatchingFamily(g), structure, tuple(dists), name=f"random:{seed}")


def random_orders(instance_size: int, count: int, seed: int) -> list[tuple[int, ...]]:
    """``count`` distinct permutations of ``range(instance_size)`` (fewer if they run out)."""
    rng = np.random.default_rng(seed)
    seen: list[tuple[int, ...]] = []
    limit = 1
    for k in range(2, instance_size + 1):
        limit *= k
    while len(seen) < min(count, limit):
        p = tuple(int(i) for i in rng.permutation(instance_size))
        if p not in seen:
            seen.append(p)
    return seen


def with_order(instance: Instance, order: tuple, seed: int | None = None, **params) -> Instance:
    """Same instance under another arrival order (regenerated when weights are correlated)."""
    if instance.edge_distributions is not None:
        kind = instance.arrival.kind
        return instance.reordered(BatchStructure(kind, order))
    if seed is None:
        raise DomainError("correlated instances are re-ordered by regeneration; pass the seed")
    return random_instance(seed=seed, order=order, correlated=True, **params)


# ---------------------------------------------------------------------------
# Pricing counterexample search


def pricing_instance(weights: dict[tuple[int, int], tuple[Fraction, Fraction]]) -> Instance:
    """Four vertices arriving 0, 1, 2, 3; ``weights[(u, v)] = (high, prob)`` two-point edges."""
    edges = tuple(sorted(weights))
    g = Graph(4, edges)
    dists = []
    for e in edges:
        high, prob = weights[e]
        dists.append(D.point([high]) if prob == 1 or high == 0 else D.two_point(high, prob))
    return Instance.independent(g, BatchStructure.vertex(range(4)), dists, name="pricing-search")


def pricing_ratio(instance: Instance) -> Fraction:
    from .estimation import exact_expectation
    from .prophet import dynamic_pricing
    from .sampling import exact_offline

    opt = exact_offline(instance)["value"]
    if opt == 0:
        return Fraction(1)
    return exact_expectation(dynamic_pricing(instance)).value / opt


PAIRS = list(itertools.combinations(range(4), 2))
# weight and probability ladders; mutations move along them
HIGHS = [Fraction(0)] + [Fraction(k, 8) for k in range(1, 33)] + [Fraction(k) for k in (5, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256)]
PROBS = [Fraction(1, 2**k) for k in range(9)]


def _random_edge(rng: np.random.Generator) -> tuple[int, int]:
    # bad instances are sparse, so half of the proposals switch the edge off
    if rng.random() < 0.5:
        return 0, 0
    return int(rng.integers(1, len(HIGHS))), int(rng.integers(len(PROBS)))


def _mutate(w: dict, rng: np.random.Generator) -> dict:
    w = dict(w)
    if rng.random() < 0.2:
        i, j = rng.choice(len(PAIRS), 2, replace=False)
        w[PAIRS[i]], w[PAIRS[j]] = w[PAIRS[j]], w[PAIRS[i]]
        return w
    p = PAIRS[int(rng.integers(len(PAIRS)))]
    h, q = w[p]
    roll = rng.random()
    if roll < 0.2:
        w[p] = _random_edge(rng)
    elif roll < 0.6:
        w[p] = (int(np.clip(h + rng.choice([-3, -2, -1, 1, 2, 3]), 0, len(HIGHS) - 1)), q)
    else:
        w[p] = (h, int(np.clip(q + rng.choice([-2, -1, 1, 2]), 0, len(PROBS) - 1)))
    return w


def _decode(w: dict) -> dict:
    return {p: (HIGHS[h], PROBS[q]) for p, (h, q) in w.items()}


def pricing_adversarial_search(budget: int = 10_000, seed: int = 0, probe_share: float = 0.1,
                               climbers: int = 12) -> tuple[Instance, Fraction]:
    """Search two-point 4-vertex instances for a small pricing-to-optimum ratio.

    A share of the budget goes to random probes; the best probes then seed
    hill climbers that mutate one edge (or swap two edges) per step and accept
    non-worsening moves. Every candidate is evaluated exactly and counts
    against ``budget``.
    """
    if budget < 1:
        raise DomainError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    probes = max(1, int(budget * probe_share))
    pool = []
    for i in range(probes):
        cand = {p: _random_edge(rng) for p in PAIRS}
        pool.append((pricing_ratio(pricing_instance(_decode(cand))), i, cand))
    pool.sort(key=lambda item: (item[0], item[1]))
    best_r, _, best_w = pool[0]
    tops = [[r, w] for r, _, w in pool[:climbers]]
    per = (budget - probes) // len(tops) if tops else 0
    for top in tops:
        cur, cw = top
        for _ in range(per):
            cand = _mutate(cw, rng)
            if rng.random() < 0.3:
                cand = _mutate(cand, rng)
            r = pricing_ratio(pricing_instance(_decode(cand)))
            if r <= cur:
                cur, cw = r, cand
            if r < best_r:
                best_r, best_w = r, cand
    return pricing_instance(_decode(best_w)), best_r


# ---------------------------------------------------------------------------
# Registry


def by_name(name: str, eps=None) -> Instance:
    """Built-in instance from ``fig1a``, ``fig1b``, ``bad-ocrs`` or ``random[:SEED]``."""
    if name == "fig1a":
        return fig1a_two_triangles(eps if eps is not None else Fraction(1, 1000))
    if name == "fig1b":
        return fig1b_ex_ante_gadget(eps if eps is not None else Fraction(1, 1000))
    if name == "bad-ocrs":
        return bad_ocrs_example(eps if eps is not None else Fraction(1, 10**6))
    if name == "random" or name.startswith("random:"):
        seed = int(name.split(":", 1)[1]) if ":" in name else 0
        return random_instance(seed=seed)
    raise DomainError(f"unknown built-in instance {name!r}")


BUILTINS = ("fig1a", "fig1b", "bad-ocrs", "random")
