"""Weight sampling and the realization schemes that feed an OCRS.

Monte-Carlo runs draw all randomness from a counter-based Philox stream. Trial
``i`` owns the contiguous block of uniforms ``[i*B, (i+1)*B)`` of the stream
keyed by the seed, so results never depend on how trials are sharded. Inside a
block the layout is fixed:

    atoms    T uniforms, one per batch (the observed weights)
    resample T*T uniforms, row t holds the fresh draw used at step t
    ties     L uniforms, L = max(T, ground size), for tie-breaks and thresholds
    coins    T uniforms, one per online decision
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .core import CapacityError, DomainError, Instance, MatchingFamily
from .oracles import ExAnteSolution, SetTable, feasible_table, fractional_table

JOINT_CAP = 1_000_000


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(keys))))


# ---------------------------------------------------------------------------
# Trial blocks


@dataclass(frozen=True)
class BlockLayout:
    batches: int
    ties: int

    @property
    def width(self) -> int:
        raw = self.batches * (self.batches + 2) + self.ties
        return -(-raw // 4) * 4

    @classmethod
    def for_instance(cls, instance: Instance) -> "BlockLayout":
        return cls(instance.n_batches, max(instance.n_batches, instance.ground_size))


@dataclass
class TrialBlock:
    """Uniforms for a contiguous range of trials, sliced by purpose."""

    atoms: np.ndarray
    resample: np.ndarray
    ties: np.ndarray
    coins: np.ndarray

    @classmethod
    def draw(cls, layout: BlockLayout, seed: int, start: int, count: int) -> "TrialBlock":
        key = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
        width = layout.width
        counter = np.zeros(4, dtype=np.uint64)
        offset = start * (width // 4)
        counter[0] = offset % 2**64
        counter[1] = offset // 2**64
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        u = gen.random((count, width))
        T = layout.batches
        return cls(
            atoms=u[:, :T],
            resample=u[:, T:T + T * T].reshape(count, T, T),
            ties=u[:, T + T * T:T + T * T + layout.ties],
            coins=u[:, T + T * T + layout.ties:T + T * T + layout.ties + T],
        )

    @classmethod
    def from_rng(cls, layout: BlockLayout, rng: np.random.Generator, count: int = 1) -> "TrialBlock":
        T = layout.batches
        return cls(
            atoms=rng.random((count, T)),
            resample=rng.random((count, T, T)),
            ties=rng.random((count, layout.ties)),
            coins=rng.random((count, T)),
        )


# ---------------------------------------------------------------------------
# Weight encoding


class WeightCodec:
    """Per-batch atom tables scaled to integers by a common denominator."""

    def __init__(self, instance: Instance):
        self.instance = instance
        m = instance.ground_size
        scale = 1
        for d in instance.distributions:
            for w, _ in d.atoms:
                for x in w:
                    scale = math.lcm(scale, x.denominator)
        self.scale = scale
        biggest = 0
        mats = []
        for b, d in zip(instance.batches, instance.distributions):
            rows = [[0] * m for _ in range(d.size)]
            for a, (w, _) in enumerate(d.atoms):
                for e, x in zip(b, w):
                    rows[a][e] = int(x * scale)
                    biggest = max(biggest, rows[a][e])
            mats.append(rows)
        self.dtype = np.int64 if biggest * max(m, 1) * 4 < 2**62 else object
        self.batch_matrices = [np.array(r, dtype=self.dtype).reshape(len(r), m) for r in mats]
        self.cumulative = [np.cumsum([float(p) for p in d.probabilities]) for d in instance.distributions]

    def assemble(self, atoms: np.ndarray) -> np.ndarray:
        """Scaled weight matrix for rows of per-batch atom indices."""
        atoms = np.atleast_2d(atoms)
        out = np.zeros((atoms.shape[0], self.instance.ground_size), dtype=self.dtype)
        for t, mat in enumerate(self.batch_matrices):
            out += mat[atoms[:, t]]
        return out

    def draw_atoms(self, t: int, u: np.ndarray) -> np.ndarray:
        cum = self.cumulative[t]
        return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)

    def draw_all(self, u: np.ndarray) -> np.ndarray:
        """Atom indices for a matrix of uniforms, column t for batch t."""
        return np.stack([self.draw_atoms(t, u[..., t]) for t in range(self.instance.n_batches)], axis=-1) \
            if self.instance.n_batches else np.zeros(u.shape[:-1] + (0,), dtype=np.int64)


def sample_weights(instance: Instance, rng: np.random.Generator) -> tuple[Fraction, ...]:
    """One weight assignment drawn from the instance distribution."""
    atoms = [int(rng.choice(d.size, p=[float(p) for p in d.probabilities])) for d in instance.distributions]
    return instance.assemble(atoms)


# ---------------------------------------------------------------------------
# Joint support


class JointSupport:
    """All atom tuples of the product distribution with exact probabilities.

    ``numerators[i] / denominator`` is the probability of ``atoms[i]``.
    """

    def __init__(self, instance: Instance, cap: int = JOINT_CAP):
        size = instance.joint_support_size
        if size > cap:
            raise CapacityError(f"joint support has {size} atoms > cap {cap}")
        self.instance = instance
        sizes = [d.size for d in instance.distributions]
        if sizes:
            grids = np.indices(sizes).reshape(len(sizes), -1).T
        else:
            grids = np.zeros((1, 0), dtype=np.int64)
        self.atoms = grids.astype(np.int64)
        dens = [math.lcm(*(p.denominator for p in d.probabilities)) for d in instance.distributions]
        self.denominator = math.prod(dens)
        nums = [[int(p * q) for p in d.probabilities] for d, q in zip(instance.distributions, dens)]
        dtype = np.int64 if self.denominator < 2**62 else object
        out = np.ones(len(self.atoms), dtype=dtype)
        for t, row in enumerate(nums):
            out = out * np.array(row, dtype=dtype)[self.atoms[:, t]]
        self.numerators = out
        self.codec = WeightCodec(instance)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.codec.assemble(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def probability(self, i: int) -> Fraction:
        return Fraction(int(self.numerators[i]), self.denominator)

    def expectation(self, values: np.ndarray) -> Fraction:
        """Exact expectation of an integer-valued per-atom column."""
        total = sum(int(n) * int(v) for n, v in zip(self.numerators, values))
        return Fraction(total, self.denominator)


def _group_sum(keys: np.ndarray, values: np.ndarray) -> dict[int, int]:
    uniq, inv = np.unique(keys, return_inverse=True)
    acc = np.zeros(len(uniq), dtype=values.dtype)
    np.add.at(acc, inv.ravel(), values)
    return {int(k): int(v) for k, v in zip(uniq, acc)}


# ---------------------------------------------------------------------------
# Observers


def set_mask(elements) -> int:
    mask = 0
    for e in elements:
        mask |= 1 << e
    return mask


def mask_elements(mask: int) -> frozenset[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return frozenset(out)


class Observer:
    """Produces the realization fed to an online policy at each step.

    ``branches(t, a)`` lists ``(probability, key)`` pairs for the observation at
    step ``t`` given observed atom ``a``; ``sample`` draws keys for many trials.
    """

    fractional = False

    def branches(self, t: int, atom: int) -> list[tuple[Fraction, int]]:
        raise NotImplementedError

    def sample(self, t: int, atoms: np.ndarray, block: TrialBlock) -> np.ndarray:
        raise NotImplementedError

    def decode(self, t: int, key: int):
        return mask_elements(key)


class NullObserver(Observer):
    def branches(self, t, atom):
        return [(Fraction(1), 0)]

    def sample(self, t, atoms, block):
        return np.zeros(len(atoms), dtype=np.int64)


class OptRealizer(Observer):
    """Realizations ``OPT(w_t, fresh w_{-t}) ∩ B_t`` or the fractional analogue.

    In integral mode keys are element bitmasks. In fractional mode a key
    encodes the restriction ``r`` of the fractional optimum to the batch in
    base 3, digit ``i`` being ``2 * r`` for the ``i``-th batch element.
    """

    def __init__(self, instance: Instance, mode: str = "opt"):
        if mode not in ("opt", "fopt"):
            raise DomainError(f"unknown realization mode {mode!r}")
        if mode == "fopt" and not instance.is_matching:
            raise DomainError("fractional realizations need a matching instance")
        if mode == "fopt" and instance.tie_break != "lex":
            raise DomainError("fractional realizations support the lexicographic tie-break only")
        self.instance = instance
        self.mode = mode
        self.fractional = mode == "fopt"
        self.codec = WeightCodec(instance)
        self.table: SetTable = fractional_table(instance.graph) if self.fractional else feasible_table(instance.family)
        self._batch_keys = [self._keys_for_batch(b) for b in instance.batches]
        self._exact: list[dict[int, list[tuple[Fraction, int]]]] | None = None
        self._cache: dict[tuple, list[int]] = {}

    def _keys_for_batch(self, batch: Sequence[int]) -> np.ndarray:
        """Observation key of every candidate row restricted to ``batch``."""
        if not batch:
            return np.zeros(self.table.size, dtype=np.int64)
        sub = self.table.matrix[:, list(batch)]
        if self.fractional:
            base = np.array([3**i for i in range(len(batch))], dtype=np.int64)
        else:
            base = np.array([1 << e for e in batch], dtype=object if max(batch) >= 62 else np.int64)
        return sub @ base

    def decode(self, t: int, key: int):
        if not self.fractional:
            return mask_elements(key)
        out = []
        for _ in self.instance.batches[t]:
            out.append(Fraction(key % 3, 2))
            key //= 3
        return tuple(out)

    # exact ----------------------------------------------------------------

    def _candidate_weights(self, support: JointSupport) -> list[list[tuple[int, int]]] | np.ndarray:
        """Per atom tuple: first maximizer (lex) or ``(row, multiplicity)`` lists (uniform)."""
        if self.instance.tie_break == "lex" or self.fractional:
            return self.table.best(support.weights)
        return [self.table.maximal_maximizers(row) for row in support.weights]

    def exact_tables(self) -> list[dict[int, list[tuple[Fraction, int]]]]:
        if self._exact is not None:
            return self._exact
        inst = self.instance
        support = JointSupport(inst)
        best = self._candidate_weights(support)
        tables = []
        for t, dist in enumerate(inst.distributions):
            keys = self._batch_keys[t]
            if isinstance(best, np.ndarray):
                obs = keys[best]
                joint = _group_sum(support.atoms[:, t] * (int(keys.max()) + 1) + obs, support.numerators)
                width = int(keys.max()) + 1
                groups: dict[int, list[tuple[Fraction, int]]] = {}
                for code, num in joint.items():
                    a, k = divmod(code, width)
                    groups.setdefault(a, []).append((Fraction(num, support.denominator), k))
            else:
                acc: dict[tuple[int, int], Fraction] = {}
                for i, ks in enumerate(best):
                    p = support.probability(i) / len(ks)
                    a = int(support.atoms[i, t])
                    for k in ks:
                        key = (a, int(keys[k]))
                        acc[key] = acc.get(key, Fraction(0)) + p
                groups = {}
                for (a, k), p in acc.items():
                    groups.setdefault(a, []).append((p, k))
            table = {}
            for a, items in groups.items():
                pa = dist.probabilities[a]
                table[a] = sorted(((p / pa, k) for p, k in items), key=lambda x: x[1])
            tables.append(table)
        self._exact = tables
        return tables

    def branches(self, t, atom):
        return self.exact_tables()[t][atom]

    # sampling --------------------------------------------------------------

    def _rows(self, atoms: np.ndarray, ties: np.ndarray) -> np.ndarray:
        uniq, inv = np.unique(atoms, axis=0, return_inverse=True)
        inv = inv.ravel()
        W = self.codec.assemble(uniq)
        if self.instance.tie_break == "lex" or self.fractional:
            return self.table.best(W)[inv]
        choices = []
        for i, row in enumerate(uniq):
            key = tuple(int(x) for x in row)
            if key not in self._cache:
                self._cache[key] = self.table.maximal_maximizers(W[i])
            choices.append(self._cache[key])
        out = np.empty(len(atoms), dtype=np.int64)
        for j, (i, u) in enumerate(zip(inv, ties)):
            ks = choices[i]
            out[j] = ks[min(int(u * len(ks)), len(ks) - 1)]
        return out

    def sample(self, t, atoms, block):
        full = self.codec.draw_all(block.resample[:, t, :])
        full[:, t] = atoms
        rows = self._rows(full, block.ties[:, t])
        return self._batch_keys[t][rows].astype(np.int64)

    def offline(self, atoms: np.ndarray, ties: np.ndarray) -> np.ndarray:
        """Candidate row of the offline optimum for rows of atoms."""
        return self._rows(atoms, ties)


class ExAnteRealizer(Observer):
    """Tail events ``{e : w_e above its ex-ante threshold}``, independent across elements."""

    def __init__(self, instance: Instance, solution: ExAnteSolution):
        if len(solution.y) != instance.ground_size:
            raise DomainError("ex-ante solution does not match the instance")
        self.instance = instance
        self.solution = solution

    def inclusion(self, e: int, w: Fraction) -> Fraction:
        tau = self.solution.thresholds[e]
        if tau is None or w < tau:
            return Fraction(0)
        if w > tau:
            return Fraction(1)
        return self.solution.shares[e]

    def branches(self, t, atom):
        batch = self.instance.batches[t]
        weights = self.instance.distributions[t].atoms[atom][0]
        out = {0: Fraction(1)}
        for e, w in zip(batch, weights):
            q = self.inclusion(e, w)
            nxt: dict[int, Fraction] = {}
            for k, p in out.items():
                if q:
                    nxt[k | 1 << e] = nxt.get(k | 1 << e, Fraction(0)) + p * q
                if q != 1:
                    nxt[k] = nxt.get(k, Fraction(0)) + p * (1 - q)
            out = nxt
        return sorted(((p, k) for k, p in out.items()), key=lambda x: x[1])

    def sample(self, t, atoms, block):
        batch = self.instance.batches[t]
        dist = self.instance.distributions[t]
        keys = np.zeros(len(atoms), dtype=np.int64)
        for i, e in enumerate(batch):
            q = np.array([float(self.inclusion(e, w[i])) for w, _ in dist.atoms])
            keys |= np.where(block.ties[:, e] < q[atoms], 1 << e, 0)
        return keys


def ex_ante_realize(weights: Sequence, solution: ExAnteSolution, rng: np.random.Generator | None = None) -> frozenset[int]:
    """Elements whose weight lies in their ex-ante tail.

    An element sitting exactly at its threshold with a fractional share needs
    ``rng`` for the tie coin.
    """
    out = []
    for e, w in enumerate(weights):
        tau = solution.thresholds[e]
        if tau is None or w < tau:
            continue
        share = solution.shares[e]
        if w > tau or share == 1:
            out.append(e)
        elif share > 0:
            if rng is None:
                raise DomainError(f"element {e} sits at its threshold with share {share}; pass an rng")
            if rng.random() < share:
                out.append(e)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Single-step convenience wrappers


def _single_step(instance: Instance, mode: str, t: int, atom: int, rng: np.random.Generator):
    if not 0 <= t < instance.n_batches:
        raise DomainError(f"batch index {t} out of range")
    if not 0 <= atom < instance.distributions[t].size:
        raise DomainError(f"atom {atom} is not in the support of batch {t}")
    obs = OptRealizer(instance, mode)
    block = TrialBlock.from_rng(BlockLayout.for_instance(instance), rng)
    key = int(obs.sample(t, np.array([atom]), block)[0])
    return obs.decode(t, key)


def realize_opt_batch(instance: Instance, t: int, atom: int, rng: np.random.Generator) -> frozenset[int]:
    """``R_t`` for observed atom ``atom`` of batch ``t`` and a fresh resample of the rest."""
    return _single_step(instance, "opt", t, atom, rng)


def realize_fopt_batch(instance: Instance, t: int, atom: int, rng: np.random.Generator) -> dict[int, Fraction]:
    """Restriction to batch ``t`` of the fractional optimum on a resampled assignment."""
    values = _single_step(instance, "fopt", t, atom, rng)
    return dict(zip(instance.batches[t], values))


# ---------------------------------------------------------------------------
# Marginals and benchmark expectations


def _offline_rows(instance: Instance, mode: str, support: JointSupport):
    obs = OptRealizer(instance, mode)
    if mode == "fopt" or instance.tie_break == "lex":
        rows = obs.table.best(support.weights)
        return obs.table, [[(int(k), Fraction(1))] for k in rows]
    return obs.table, [
        [(k, Fraction(1, len(ks))) for k in ks] for ks in (obs.table.maximal_maximizers(w) for w in support.weights)
    ]


def exact_offline(instance: Instance, mode: str = "opt") -> dict:
    """Exact marginals, expected benchmark value and per-element expected contribution.

    Returns a dict with ``marginals`` (x_e), ``value`` (E[w(OPT)] or
    E[<w, f-OPT>]) and ``contribution`` (E[w_e * share of e in the optimum]).
    """
    support = JointSupport(instance)
    table, rows = _offline_rows(instance, mode, support)
    factor = 2 if mode == "fopt" else 1
    m = instance.ground_size
    if all(len(r) == 1 for r in rows):
        ks = np.array([r[0][0] for r in rows], dtype=np.int64)
        uniq, inv = np.unique(ks, return_inverse=True)
        mass = np.zeros(len(uniq), dtype=support.numerators.dtype)
        np.add.at(mass, inv.ravel(), support.numerators)
        x = [Fraction(0)] * m
        for k, p in zip(uniq, mass):
            for e in np.flatnonzero(table.matrix[k]):
                x[e] += Fraction(int(p) * int(table.matrix[k, e]), support.denominator * factor)
        W = support.weights
        contrib = []
        for e in range(m):
            col = np.asarray(table.matrix[ks, e], dtype=W.dtype) * W[:, e]
            contrib.append(support.expectation(col) / (factor * support.codec.scale))
    else:
        x = [Fraction(0)] * m
        contrib = [Fraction(0)] * m
        for i, r in enumerate(rows):
            p = support.probability(i)
            w = support.weights[i]
            for k, q in r:
                for e in np.flatnonzero(table.matrix[k]):
                    share = Fraction(int(table.matrix[k, e]), factor)
                    x[e] += p * q * share
                    contrib[e] += p * q * share * Fraction(int(w[e]), support.codec.scale)
    return {"marginals": tuple(x), "contribution": tuple(contrib), "value": sum(contrib, Fraction(0))}


def exact_marginals(instance: Instance, mode: str = "opt") -> tuple[Fraction, ...]:
    """Probability that each element is in OPT(w), or the expected f-OPT entry."""
    return exact_offline(instance, mode)["marginals"]


@dataclass(frozen=True)
class MarginalEstimate:
    mean: np.ndarray
    halfwidth: np.ndarray
    n: int


def mc_marginals(instance: Instance, mode: str, n: int, rng: np.random.Generator, chunk: int = 1 << 14) -> MarginalEstimate:
    """Empirical marginals over ``n`` fresh weight draws with 95% normal half-widths."""
    if n < 1:
        raise DomainError("n must be positive")
    obs = OptRealizer(instance, mode)
    m = instance.ground_size
    total = np.zeros(m)
    total_sq = np.zeros(m)
    factor = 2.0 if mode == "fopt" else 1.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        u = rng.random((k, instance.n_batches + 1))
        atoms = obs.codec.draw_all(u[:, :-1])
        rows = obs.offline(atoms, u[:, -1])
        vals = obs.table.matrix[rows].astype(float) / factor
        total += vals.sum(axis=0)
        total_sq += (vals**2).sum(axis=0)
        done += k
    mean = total / n
    var = np.maximum(total_sq / n - mean**2, 0.0) * (n / (n - 1) if n > 1 else 0.0)
    return MarginalEstimate(mean, 1.96 * np.sqrt(var / n), n)


def in_degree_polytope(instance: Instance, x: Sequence) -> bool:
    """Whether ``x`` has nonnegative entries and every vertex sum at most one."""
    if not isinstance(instance.family, MatchingFamily):
        raise DomainError("degree constraints need a matching instance")
    g = instance.graph
    if any(v < 0 for v in x):
        return False
    return all(sum((x[e] for e in g.incident[v]), Fraction(0)) <= 1 for v in range(g.vertex_count))
