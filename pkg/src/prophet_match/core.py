"""Graphs, arrival structures, discrete batch distributions and feasibility families.

Everything here is immutable after construction. Weights and probabilities are
``fractions.Fraction`` values; floats are accepted on input and converted
exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence, Union

Number = Union[Fraction, float]


class ProphetMatchError(Exception):
    """Base class for library errors."""


class DomainError(ProphetMatchError, ValueError):
    """An argument lies outside the operation's domain."""


class CapacityError(ProphetMatchError):
    """An exact computation would exceed its enumeration cap."""


class ContractError(ProphetMatchError):
    """A precondition on a realization or selection was violated."""


class CertificationError(ProphetMatchError):
    """An acceptance probability came out above one."""

    def __init__(self, message: str, edge: int | None = None, value: Number | None = None):
        super().__init__(message)
        self.edge = edge
        self.value = value


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def format_fraction(value: Fraction) -> str:
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


# ---------------------------------------------------------------------------
# Graphs and arrival structures


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.vertex_count < 0:
            raise DomainError("vertex_count must be nonnegative")
        normalized = []
        seen = set()
        for pair in self.edges:
            u, v = (int(p) for p in pair)
            if u == v:
                raise DomainError(f"self-loop at vertex {u}")
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count):
                raise DomainError(f"edge ({u},{v}) has an endpoint outside [0, {self.vertex_count})")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise DomainError(f"parallel edge {key}")
            seen.add(key)
            normalized.append(key)
        object.__setattr__(self, "edges", tuple(normalized))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def edge_index(self, u: int, v: int) -> int:
        try:
            return self.index[(min(u, v), max(u, v))]
        except KeyError:
            raise DomainError(f"no edge between {u} and {v}") from None

    @cached_property
    def edge_masks(self) -> tuple[int, ...]:
        return tuple((1 << u) | (1 << v) for u, v in self.edges)

    @cached_property
    def incident(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.vertex_count)]
        for i, (u, v) in enumerate(self.edges):
            out[u].append(i)
            out[v].append(i)
        return tuple(tuple(x) for x in out)


class ArrivalKind(str, Enum):
    VERTEX = "vertex"
    EDGE = "edge"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class BatchStructure:
    """An arrival order.

    ``order`` is a vertex permutation (VERTEX), an edge permutation (EDGE) or a
    sequence of element batches (EXPLICIT).
    """

    kind: ArrivalKind
    order: tuple

    def __post_init__(self):
        kind = ArrivalKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ArrivalKind.EXPLICIT:
            object.__setattr__(self, "order", tuple(tuple(int(e) for e in b) for b in self.order))
        else:
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))

    @classmethod
    def vertex(cls, order: Iterable[int]) -> "BatchStructure":
        return cls(ArrivalKind.VERTEX, tuple(order))

    @classmethod
    def edge(cls, order: Iterable[int]) -> "BatchStructure":
        return cls(ArrivalKind.EDGE, tuple(order))

    @classmethod
    def explicit(cls, batches: Iterable[Iterable[int]]) -> "BatchStructure":
        return cls(ArrivalKind.EXPLICIT, tuple(tuple(b) for b in batches))


def _check_permutation(order: Sequence[int], size: int, what: str) -> None:
    if len(order) != size:
        raise DomainError(f"{what} order has length {len(order)}, expected {size}")
    if sorted(order) != list(range(size)):
        raise DomainError(f"{what} order is not a permutation of 0..{size - 1}")


def batches_of(structure: BatchStructure, graph: Graph | int) -> tuple[tuple[int, ...], ...]:
    """Ordered partition of the ground set induced by ``structure``.

    Vertex arrival keeps empty batches so there is one batch per vertex; the
    edges inside a batch are listed in increasing edge index.
    """
    if structure.kind is ArrivalKind.EXPLICIT:
        size = graph.edge_count if isinstance(graph, Graph) else int(graph)
        flat = [e for b in structure.order for e in b]
        if sorted(flat) != list(range(size)):
            raise DomainError("explicit batches must partition the ground set")
        return tuple(tuple(sorted(b)) for b in structure.order)
    if not isinstance(graph, Graph):
        raise DomainError(f"{structure.kind.value} arrival needs a graph")
    if structure.kind is ArrivalKind.EDGE:
        _check_permutation(structure.order, graph.edge_count, "edge")
        return tuple((e,) for e in structure.order)
    _check_permutation(structure.order, graph.vertex_count, "vertex")
    position = {v: i for i, v in enumerate(structure.order)}
    batches: list[list[int]] = [[] for _ in structure.order]
    for idx, (u, v) in enumerate(graph.edges):
        batches[max(position[u], position[v])].append(idx)
    return tuple(tuple(b) for b in batches)


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True)
class DiscreteJointDistribution:
    """Finite joint distribution of the weights of one batch.

    ``atoms`` holds ``(weights, probability)`` pairs; every weight vector has
    the batch's length (zero for an empty batch).
    """

    atoms: tuple[tuple[tuple[Fraction, ...], Fraction], ...]

    def __post_init__(self):
        if not self.atoms:
            raise DomainError("a distribution needs at least one atom")
        clean = []
        width = None
        seen = set()
        for weights, prob in self.atoms:
            w = tuple(as_fraction(x) for x in weights)
            p = as_fraction(prob)
            if width is None:
                width = len(w)
            elif len(w) != width:
                raise DomainError("atoms have different lengths")
            if any(x < 0 for x in w):
                raise DomainError(f"negative weight in atom {w}")
            if not (0 < p <= 1):
                raise DomainError(f"atom probability {p} outside (0, 1]")
            if w in seen:
                raise DomainError(f"duplicate atom {w}")
            seen.add(w)
            clean.append((w, p))
        if sum(p for _, p in clean) != 1:
            raise DomainError("atom probabilities must sum to exactly 1")
        object.__setattr__(self, "atoms", tuple(clean))

    @classmethod
    def point(cls, weights: Sequence) -> "DiscreteJointDistribution":
        return cls(((tuple(weights), Fraction(1)),))

    @classmethod
    def two_point(cls, high, prob, low=0) -> "DiscreteJointDistribution":
        """Single weight equal to ``high`` with probability ``prob``, else ``low``."""
        prob = as_fraction(prob)
        if prob == 1 or as_fraction(high) == as_fraction(low):
            return cls.point((high,))
        if prob == 0:
            return cls.point((low,))
        return cls((((high,), prob), ((low,), 1 - prob)))

    @classmethod
    def product(cls, parts: Sequence["DiscreteJointDistribution"]) -> "DiscreteJointDistribution":
        atoms = [((), Fraction(1))]
        for part in parts:
            atoms = [(w + pw, p * pp) for w, p in atoms for pw, pp in part.atoms]
        return cls(tuple(atoms))

    @property
    def width(self) -> int:
        return len(self.atoms[0][0])

    @property
    def size(self) -> int:
        return len(self.atoms)

    @cached_property
    def probabilities(self) -> tuple[Fraction, ...]:
        return tuple(p for _, p in self.atoms)

    @cached_property
    def atom_index(self) -> dict[tuple[Fraction, ...], int]:
        return {w: i for i, (w, _) in enumerate(self.atoms)}

    def marginal(self, position: int) -> "DiscreteJointDistribution":
        acc: dict[Fraction, Fraction] = {}
        for w, p in self.atoms:
            acc[w[position]] = acc.get(w[position], Fraction(0)) + p
        return DiscreteJointDistribution(tuple(((k,), v) for k, v in sorted(acc.items(), reverse=True)))

    def mean(self, position: int = 0) -> Fraction:
        return sum((w[position] * p for w, p in self.atoms), Fraction(0))


# ---------------------------------------------------------------------------
# Feasibility families


class MatchingFamily:
    """All matchings of a graph."""

    def __init__(self, graph: Graph):
        self.graph = graph

    @property
    def ground_size(self) -> int:
        return self.graph.edge_count

    def is_feasible(self, elements: Iterable[int]) -> bool:
        used = 0
        for e in elements:
            mask = self.graph.edge_masks[e]
            if used & mask:
                return False
            used |= mask
        return True

    def enumerate_feasible(self, cap: int = 200_000) -> list[tuple[int, ...]]:
        """All matchings, sorted lexicographically by edge-index sequence."""
        masks = self.graph.edge_masks
        m = len(masks)
        out: list[tuple[int, ...]] = []

        def visit(prefix: tuple[int, ...], used: int, start: int) -> None:
            out.append(prefix)
            if len(out) > cap:
                raise CapacityError(f"more than {cap} matchings; enumeration cap exceeded")
            for e in range(start, m):
                if not used & masks[e]:
                    visit(prefix + (e,), used | masks[e], e + 1)

        visit((), 0, 0)
        return out

    def __eq__(self, other):
        return isinstance(other, MatchingFamily) and other.graph == self.graph

    def __hash__(self):
        return hash(("matching", self.graph))


class ExplicitFamily:
    """A downward closed family given by its feasible sets (ground set of at most 20)."""

    MAX_GROUND = 20

    def __init__(self, size: int, sets: Iterable[Iterable[int]], close_downward: bool = False):
        if size > self.MAX_GROUND:
            raise CapacityError(f"explicit families are capped at {self.MAX_GROUND} elements")
        self.size = int(size)
        family = {frozenset(int(e) for e in s) for s in sets}
        family.add(frozenset())
        for s in family:
            if any(not 0 <= e < size for e in s):
                raise DomainError(f"set {sorted(s)} leaves the ground set")
        if close_downward:
            closed = set()
            for s in family:
                for k in range(len(s) + 1):
                    closed.update(frozenset(c) for c in itertools.combinations(sorted(s), k))
            family = closed
        for s in family:
            for e in s:
                if s - {e} not in family:
                    raise DomainError(f"family is not downward closed: {sorted(s)} without {e}")
        self.sets = frozenset(family)

    @property
    def ground_size(self) -> int:
        return self.size

    def is_feasible(self, elements: Iterable[int]) -> bool:
        return frozenset(elements) in self.sets

    def enumerate_feasible(self, cap: int = 200_000) -> list[tuple[int, ...]]:
        return sorted(tuple(sorted(s)) for s in self.sets)

    def __eq__(self, other):
        return isinstance(other, ExplicitFamily) and other.size == self.size and other.sets == self.sets

    def __hash__(self):
        return hash(("explicit", self.size, self.sets))


FeasibilityFamily = Union[MatchingFamily, ExplicitFamily]


def is_feasible(family: FeasibilityFamily, elements: Iterable[int]) -> bool:
    return family.is_feasible(elements)


def weight_of(weights: Sequence[Fraction], elements: Iterable[int]) -> Fraction:
    total = Fraction(0)
    for e in elements:
        if not 0 <= e < len(weights):
            raise DomainError(f"unknown element index {e}")
        total += weights[e]
    return total


@dataclass(frozen=True)
class NumericPolicy:
    mode: str = "exact"
    tolerance: float = 1e-12

    def __post_init__(self):
        if self.mode not in ("exact", "float"):
            raise DomainError(f"unknown numeric mode {self.mode!r}")

    @property
    def exact(self) -> bool:
        return self.mode == "exact"

    def convert(self, value) -> Number:
        return as_fraction(value) if self.exact else float(value)


EXACT = NumericPolicy("exact")
FLOAT = NumericPolicy("float")


# ---------------------------------------------------------------------------
# Instances


@dataclass(frozen=True)
class Instance:
    """A feasibility family, an arrival structure and one distribution per batch.

    ``edge_distributions`` is set when weights are independent across elements;
    it allows re-ordering the instance under another arrival structure.
    ``tie_break`` selects how the offline optimum resolves ties: ``"lex"``
    (lexicographically smallest maximizer) or ``"uniform"`` (uniform over the
    inclusion-maximal maximizers).
    """

    family: FeasibilityFamily
    arrival: BatchStructure
    distributions: tuple[DiscreteJointDistribution, ...]
    edge_distributions: tuple[DiscreteJointDistribution, ...] | None = None
    tie_break: str = "lex"
    name: str = ""
    batches: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.tie_break not in ("lex", "uniform"):
            raise DomainError(f"unknown tie-break rule {self.tie_break!r}")
        target = self.family.graph if isinstance(self.family, MatchingFamily) else self.family.ground_size
        batches = batches_of(self.arrival, target)
        object.__setattr__(self, "batches", batches)
        dists = tuple(self.distributions)
        if len(dists) != len(batches):
            raise DomainError(f"{len(dists)} distributions for {len(batches)} batches")
        for t, (b, d) in enumerate(zip(batches, dists)):
            if d.width != len(b):
                raise DomainError(f"batch {t} has {len(b)} elements but its distribution has width {d.width}")
        object.__setattr__(self, "distributions", dists)
        if self.edge_distributions is not None:
            eds = tuple(self.edge_distributions)
            if len(eds) != self.ground_size or any(d.width != 1 for d in eds):
                raise DomainError("edge_distributions needs one single-element distribution per element")
            object.__setattr__(self, "edge_distributions", eds)

    @classmethod
    def independent(
        cls,
        family: FeasibilityFamily | Graph,
        arrival: BatchStructure,
        edge_distributions: Sequence[DiscreteJointDistribution],
        tie_break: str = "lex",
        name: str = "",
    ) -> "Instance":
        if isinstance(family, Graph):
            family = MatchingFamily(family)
        target = family.graph if isinstance(family, MatchingFamily) else family.ground_size
        batches = batches_of(arrival, target)
        dists = tuple(DiscreteJointDistribution.product([edge_distributions[e] for e in b]) for b in batches)
        return cls(family, arrival, dists, tuple(edge_distributions), tie_break, name)

    @property
    def graph(self) -> Graph:
        if not isinstance(self.family, MatchingFamily):
            raise DomainError("instance is not a matching instance")
        return self.family.graph

    @property
    def is_matching(self) -> bool:
        return isinstance(self.family, MatchingFamily)

    @property
    def ground_size(self) -> int:
        return self.family.ground_size

    @property
    def n_batches(self) -> int:
        return len(self.batches)

    @cached_property
    def batch_of(self) -> tuple[int, ...]:
        out = [0] * self.ground_size
        for t, b in enumerate(self.batches):
            for e in b:
                out[e] = t
        return tuple(out)

    @cached_property
    def position_in_batch(self) -> tuple[int, ...]:
        out = [0] * self.ground_size
        for b in self.batches:
            for i, e in enumerate(b):
                out[e] = i
        return tuple(out)

    @property
    def joint_support_size(self) -> int:
        size = 1
        for d in self.distributions:
            size *= d.size
        return size

    def element_marginal(self, e: int) -> DiscreteJointDistribution:
        if self.edge_distributions is not None:
            return self.edge_distributions[e]
        return self.distributions[self.batch_of[e]].marginal(self.position_in_batch[e])

    def marginals(self) -> tuple[DiscreteJointDistribution, ...]:
        return tuple(self.element_marginal(e) for e in range(self.ground_size))

    def assemble(self, atoms: Sequence[int]) -> tuple[Fraction, ...]:
        """Full weight assignment from one atom index per batch."""
        w = [Fraction(0)] * self.ground_size
        for b, d, a in zip(self.batches, self.distributions, atoms):
            for e, x in zip(b, d.atoms[a][0]):
                w[e] = x
        return tuple(w)

    def reordered(self, arrival: BatchStructure) -> "Instance":
        if self.edge_distributions is None:
            raise DomainError("only instances with independent element weights can be re-ordered")
        return Instance.independent(self.family, arrival, self.edge_distributions, self.tie_break, self.name)

    def expected_value_check(self) -> None:
        """Validate that the joint marginals agree with ``edge_distributions``."""
        if self.edge_distributions is None:
            return
        for e in range(self.ground_size):
            d = self.distributions[self.batch_of[e]].marginal(self.position_in_batch[e])
            if dict(d.atoms) != dict(self.edge_distributions[e].marginal(0).atoms):
                raise DomainError(f"element {e}: batch marginal disagrees with edge distribution")


# ---------------------------------------------------------------------------
# JSON schema


def _dist_to_json(d: DiscreteJointDistribution) -> list[dict]:
    return [{"weights": [format_fraction(x) for x in w], "prob": format_fraction(p)} for w, p in d.atoms]


def _dist_from_json(items) -> DiscreteJointDistribution:
    try:
        return DiscreteJointDistribution(
            tuple((tuple(as_fraction(x) for x in a["weights"]), as_fraction(a["prob"])) for a in items)
        )
    except (KeyError, TypeError, ZeroDivisionError) as exc:
        raise DomainError(f"malformed support: {exc}") from None


def instance_to_json(inst: Instance) -> dict:
    out: dict = {"name": inst.name, "tie_break": inst.tie_break}
    if inst.is_matching:
        out["vertices"] = inst.graph.vertex_count
        out["edges"] = [list(e) for e in inst.graph.edges]
    else:
        out["vertices"] = 0
        out["elements"] = inst.ground_size
        out["family"] = [sorted(s) for s in inst.family.enumerate_feasible()]
    arrival: dict = {"kind": inst.arrival.kind.value}
    if inst.arrival.kind is ArrivalKind.EXPLICIT:
        arrival["order"] = [list(b) for b in inst.arrival.order]
    else:
        arrival["order"] = list(inst.arrival.order)
    out["arrival"] = arrival
    out["batches"] = [
        {"edges": list(b), "support": _dist_to_json(d)} for b, d in zip(inst.batches, inst.distributions)
    ]
    if inst.edge_distributions is not None:
        out["edge_distributions"] = [_dist_to_json(d) for d in inst.edge_distributions]
    return out


def instance_from_json(data: dict) -> Instance:
    try:
        arrival_data = data["arrival"]
        kind = ArrivalKind(arrival_data["kind"])
        if kind is ArrivalKind.EXPLICIT:
            arrival = BatchStructure.explicit(arrival_data.get("order") or [b["edges"] for b in data["batches"]])
        else:
            arrival = BatchStructure(kind, tuple(arrival_data["order"]))
        if "family" in data:
            family: FeasibilityFamily = ExplicitFamily(int(data["elements"]), data["family"])
        else:
            family = MatchingFamily(Graph(int(data["vertices"]), tuple(tuple(e) for e in data["edges"])))
        dists = tuple(_dist_from_json(b["support"]) for b in data["batches"])
        edge_dists = None
        if data.get("edge_distributions") is not None:
            edge_dists = tuple(_dist_from_json(d) for d in data["edge_distributions"])
        inst = Instance(family, arrival, dists, edge_dists, data.get("tie_break", "lex"), data.get("name", ""))
    except ProphetMatchError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed instance: {exc!r}") from None
    declared = [tuple(b.get("edges", ())) for b in data["batches"]]
    if declared != [tuple(b) for b in inst.batches]:
        raise DomainError("declared batch edges disagree with the arrival order")
    inst.expected_value_check()
    return inst


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_json(inst), indent=2)


def loads_instance(text: str) -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"instance file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise DomainError("instance JSON must be an object")
    return instance_from_json(data)
