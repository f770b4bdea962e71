"""Online algorithms built on top of the realization schemes and OCRSs.

Builders return a :class:`~prophet_match.estimation.Process`, which the exact
and Monte-Carlo engines evaluate. :func:`run_online` performs a single seeded
run and records a replayable transcript.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

from .core import EXACT, ArrivalKind, CapacityError, DomainError, Instance, MatchingFamily, NumericPolicy
from .estimation import Process, simulate_trials
from .ocrs import EdgeOCRS, FractionalVertexOCRS, OcrsConstant, Policy, VertexOCRS, constant
from .oracles import ex_ante_opt
from .sampling import ExAnteRealizer, NullObserver, OptRealizer, exact_offline, mask_elements, mc_marginals, stream


def _marginals(instance: Instance, mode: str, source: str, n: int, seed: int) -> tuple:
    if source == "exact":
        return exact_offline(instance, mode)["marginals"]
    if source == "mc":
        est = mc_marginals(instance, mode, n, stream(seed, 0xA1))
        return tuple(float(v) for v in est.mean)
    raise DomainError(f"unknown marginal source {source!r}")


# ---------------------------------------------------------------------------
# Reductions


def prophet_via_ocrs(instance: Instance, ocrs: str = "vertex_half", c: OcrsConstant | str = "warmup",
                     numeric: NumericPolicy = EXACT, marginals: str = "exact", alpha_oracle: str = "exact",
                     n: int = 100_000, seed: int = 0) -> Process:
    """Resample-and-intersect realizations fed to the vertex or edge OCRS.

    ``ocrs`` is ``"vertex_half"`` (vertex arrival) or ``"edge"`` (edge
    arrival, constant ``c``). The OCRS marginals are ``Pr[e in OPT(w)]``.
    """
    if not instance.is_matching:
        raise DomainError("OCRS reductions need a matching instance")
    x = _marginals(instance, "opt", marginals, n, seed)
    observer = OptRealizer(instance, "opt")
    if ocrs == "vertex_half":
        if instance.arrival.kind is not ArrivalKind.VERTEX:
            raise DomainError("the vertex OCRS needs vertex arrival")
        return Process(instance, VertexOCRS(instance, x, numeric), observer, "vertex-ocrs")
    if ocrs == "edge":
        if instance.arrival.kind is ArrivalKind.VERTEX:
            raise DomainError("the edge OCRS needs edge arrival")
        cc = constant(c) if isinstance(c, str) else c
        rng = stream(seed, 0xA2) if alpha_oracle == "mc" else None
        return Process(instance, EdgeOCRS(instance, x, cc, numeric, alpha_oracle, n, rng), observer, "edge-ocrs")
    raise DomainError(f"unknown OCRS {ocrs!r}")


def prophet_via_fractional_ocrs(instance: Instance, numeric: NumericPolicy = EXACT) -> Process:
    """Fractional-optimum realizations fed to the fractional vertex OCRS."""
    if instance.arrival.kind is not ArrivalKind.VERTEX:
        raise DomainError("the fractional vertex OCRS needs vertex arrival")
    x = exact_offline(instance, "fopt")["marginals"]
    return Process(instance, FractionalVertexOCRS(instance, x, numeric), OptRealizer(instance, "fopt"),
                   "frac-vertex-ocrs")


def edge_ocrs_ex_ante(instance: Instance, c: OcrsConstant | str = "improved", numeric: NumericPolicy = EXACT,
                      alpha_oracle: str = "exact", n: int = 100_000, seed: int = 0) -> Process:
    """Ex-ante tail realizations fed to the edge OCRS with marginals ``y``."""
    sol = ex_ante_opt(instance.graph, instance.marginals())
    cc = constant(c) if isinstance(c, str) else c
    rng = stream(seed, 0xA3) if alpha_oracle == "mc" else None
    policy = EdgeOCRS(instance, sol.y, cc, numeric, alpha_oracle, n, rng)
    return Process(instance, policy, ExAnteRealizer(instance, sol), "edge-ocrs-ex-ante")


# ---------------------------------------------------------------------------
# Greedy baselines


class GreedyOnline(Policy):
    """Take the heaviest positive-weight edge of the batch that keeps a matching."""

    def __init__(self, instance: Instance):
        if not instance.is_matching:
            raise DomainError("greedy matching needs a matching instance")
        self.instance = instance

    def decide(self, t, state, obs, atom):
        g = self.instance.graph
        w = self.instance.distributions[t].atoms[atom][0]
        best = None
        for e, we in zip(self.instance.batches[t], w):
            if we > 0 and not state & g.edge_masks[e] and (best is None or we > best[0]):
                best = (we, e)
        if best is None:
            return [(Fraction(1), state, 0)]
        e = best[1]
        return [(Fraction(1), state | g.edge_masks[e], 1 << e)]


class GreedyBatched(Policy):
    """Add a uniformly random largest subset of ``R_t`` that keeps the selection feasible.

    The state is the bitmask of selected elements.
    """

    def __init__(self, instance: Instance):
        self.instance = instance
        self.family = instance.family

    def decide(self, t, state, obs, atom):
        current = mask_elements(state)
        items = sorted(obs)
        for size in range(len(items), -1, -1):
            options = [s for s in itertools.combinations(items, size) if self.family.is_feasible(current | set(s))]
            if options:
                p = Fraction(1, len(options))
                out = []
                for s in options:
                    mask = 0
                    for e in s:
                        mask |= 1 << e
                    out.append((p, state | mask, mask))
                return out
        raise AssertionError("the empty set is always feasible")


def greedy_online(instance: Instance) -> Process:
    return Process(instance, GreedyOnline(instance), NullObserver(), "greedy")


def prophet_generic_family(instance: Instance) -> Process:
    """Resample-and-intersect realizations with the batched greedy selector."""
    return Process(instance, GreedyBatched(instance), OptRealizer(instance, "opt"), "greedy-batched")


# ---------------------------------------------------------------------------
# Dynamic pricing


@dataclass(frozen=True)
class PriceTable:
    prices: tuple[Fraction, ...]

    def __getitem__(self, v: int) -> Fraction:
        return self.prices[v]


def price_table(instance: Instance) -> PriceTable:
    """``p_v`` is half the expected optimum weight on edges from v to later vertices."""
    if instance.arrival.kind is not ArrivalKind.VERTEX:
        raise DomainError("pricing needs vertex arrival")
    g = instance.graph
    contrib = exact_offline(instance, "opt")["contribution"]
    position = {v: i for i, v in enumerate(instance.arrival.order)}
    prices = [Fraction(0)] * g.vertex_count
    for e, (a, b) in enumerate(g.edges):
        early = a if position[a] < position[b] else b
        prices[early] += contrib[e] / 2
    return PriceTable(tuple(prices))


class DynamicPricing(Policy):
    """Offer the arriving vertex its best free partner net of that partner's price.

    Among free earlier partners ``k`` maximizing ``w_vk - p_k`` (ties to the
    smallest vertex index) the edge is taken iff ``w_vk - p_k >= p_v`` and
    ``w_vk > 0``.
    """

    def __init__(self, instance: Instance, prices: PriceTable | None = None):
        self.instance = instance
        self.prices = prices or price_table(instance)

    def decide(self, t, state, obs, atom):
        g = self.instance.graph
        v = self.instance.arrival.order[t]
        w = self.instance.distributions[t].atoms[atom][0]
        best = None
        for e, we in zip(self.instance.batches[t], w):
            a, b = g.edges[e]
            u = b if a == v else a
            if state >> u & 1:
                continue
            key = (we - self.prices[u], -u)
            if best is None or key > best[0]:
                best = (key, e, we, u)
        if best is not None:
            _, e, we, u = best
            if we > 0 and we - self.prices[u] >= self.prices[v]:
                return [(Fraction(1), state | g.edge_masks[e], 1 << e)]
        return [(Fraction(1), state, 0)]


def dynamic_pricing(instance: Instance) -> Process:
    return Process(instance, DynamicPricing(instance), NullObserver(), "pricing")


# ---------------------------------------------------------------------------
# Optimal online policy


STATE_CAP = 1_000_000


class OptimalOnline(Policy):
    """Backward-induction optimal online policy for a fixed arrival order.

    For matchings the state is the matched-vertex mask, otherwise the mask of
    selected elements. Ties between actions go to the first candidate in
    lexicographic order.
    """

    def __init__(self, instance: Instance, cap: int = STATE_CAP):
        self.instance = instance
        self.cap = cap
        self.matching = isinstance(instance.family, MatchingFamily)
        self._options = [self._batch_options(b) for b in instance.batches]
        self._memo: dict[tuple[int, int], Fraction] = {}

    def _batch_options(self, batch):
        family = self.instance.family
        out = []
        for size in range(len(batch) + 1):
            for s in itertools.combinations(batch, size):
                if family.is_feasible(s):
                    emask = 0
                    for e in s:
                        emask |= 1 << e
                    vmask = 0
                    if self.matching:
                        for e in s:
                            vmask |= family.graph.edge_masks[e]
                    out.append((s, emask, vmask))
        out.sort(key=lambda o: o[0])
        return out

    def _compatible(self, state: int, option) -> bool:
        s, emask, vmask = option
        if self.matching:
            return not state & vmask
        return self.instance.family.is_feasible(mask_elements(state | emask))

    def _next(self, state: int, option) -> int:
        return state | (option[2] if self.matching else option[1])

    def value(self, t: int = 0, state: int = 0) -> Fraction:
        """Optimal expected value collected from batch ``t`` onward."""
        inst = self.instance
        stack = [(t, state)]
        # iterative post-order to avoid deep recursion on long arrival sequences
        while stack:
            tt, st = stack[-1]
            if tt >= inst.n_batches:
                self._memo[(tt, st)] = Fraction(0)
                stack.pop()
                continue
            if (tt, st) in self._memo:
                stack.pop()
                continue
            opts = [o for o in self._options[tt] if self._compatible(st, o)]
            missing = [(tt + 1, self._next(st, o)) for o in opts if (tt + 1, self._next(st, o)) not in self._memo]
            if missing:
                stack.extend(missing)
                continue
            total = Fraction(0)
            for (w, p) in inst.distributions[tt].atoms:
                wd = dict(zip(inst.batches[tt], w))
                total += p * max(sum((wd[e] for e in o[0]), Fraction(0)) + self._memo[(tt + 1, self._next(st, o))]
                                 for o in opts)
            self._memo[(tt, st)] = total
            stack.pop()
            if len(self._memo) > self.cap:
                raise CapacityError(f"optimal-online DP exceeded {self.cap} states")
        return self._memo[(t, state)]

    def decide(self, t, state, obs, atom):
        inst = self.instance
        wd = dict(zip(inst.batches[t], inst.distributions[t].atoms[atom][0]))
        best = None
        for o in self._options[t]:
            if not self._compatible(state, o):
                continue
            ns = self._next(state, o)
            val = sum((wd[e] for e in o[0]), Fraction(0)) + self.value(t + 1, ns)
            if best is None or val > best[0]:
                best = (val, ns, o[1])
        return [(Fraction(1), best[1], best[2])]


def optimal_online_value(instance: Instance, cap: int = STATE_CAP) -> Fraction:
    """Value of the best online policy under the instance's fixed arrival order."""
    return OptimalOnline(instance, cap).value()


def optimal_online(instance: Instance) -> Process:
    return Process(instance, OptimalOnline(instance), NullObserver(), "optimal-online")


# ---------------------------------------------------------------------------
# Single runs


@dataclass(frozen=True)
class OnlineRun:
    instance: Instance
    weights: tuple[Fraction, ...]
    realizations: tuple
    chosen: tuple[frozenset[int], ...]
    coins: tuple[float, ...]
    value: Fraction

    @property
    def selection(self) -> frozenset[int]:
        return frozenset().union(*self.chosen) if self.chosen else frozenset()

    def transcript(self) -> list[dict]:
        return [
            {"batch": t, "realization": r, "chosen": sorted(c), "coin": u}
            for t, (r, c, u) in enumerate(zip(self.realizations, self.chosen, self.coins))
        ]


def run_online(process: Process, seed: int, trial: int = 0) -> OnlineRun:
    """One trial of ``process``; the same ``(seed, trial)`` replays identically."""
    tr = simulate_trials(process, seed, trial, 1)
    inst = process.instance
    atoms = [int(a) for a in tr.atoms[0]]
    weights = inst.assemble(atoms)
    obs = tuple(process.observation(t, int(k)) for t, k in enumerate(tr.keys[0]))
    chosen = tuple(mask_elements(int(c)) for c in tr.chosen[0])
    value = sum((weights[e] for c in chosen for e in c), Fraction(0))
    return OnlineRun(inst, weights, obs, chosen, tuple(float(u) for u in tr.coins[0]), value)
