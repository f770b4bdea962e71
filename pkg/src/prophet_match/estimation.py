"""Exact and Monte-Carlo evaluation of online processes.

A :class:`Process` couples an instance, an observer (the realization scheme)
and a policy. The exact engine propagates the distribution of policy states
forward through every batch, branching on the observed atom, the realization
and the policy's action. The Monte-Carlo engine samples the same branches,
one uniform per decision, vectorized across trials.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .core import CapacityError, DomainError, Instance
from .ocrs import Policy
from .sampling import BlockLayout, Observer, TrialBlock, WeightCodec, mask_elements

BRANCH_CAP = 10_000_000
CHUNK = 8192


@dataclass
class Process:
    instance: Instance
    policy: Policy
    observer: Observer
    label: str = ""

    def __post_init__(self):
        self._decisions: dict[tuple, list[tuple]] = {}
        self._obs: dict[tuple[int, int], Any] = {}

    def observation(self, t: int, key: int):
        k = (t, key)
        if k not in self._obs:
            self._obs[k] = self.observer.decode(t, key)
        return self._obs[k]

    def decide(self, t: int, state: int, key: int, atom: int) -> list[tuple]:
        k = (t, state, key, atom)
        out = self._decisions.get(k)
        if out is None:
            out = self.policy.decide(t, state, self.observation(t, key), atom)
            self._decisions[k] = out
        return out


@dataclass(frozen=True)
class ExpectationResult:
    value: Fraction | float
    mode: str
    sample_count: int | None = None
    ci_halfwidth: float | None = None
    seed: int | None = None
    std: float | None = None

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class ExactOutcome:
    """Everything the exact engine measures in one pass."""

    result: ExpectationResult
    per_batch: list
    per_element: list
    selected: list
    events: dict[tuple[int, int], Any]
    joint: dict[tuple[int, int], dict[int, Any]]
    branches: int
    final_states: dict[int, Any] = field(default_factory=dict)

    @property
    def value(self):
        return self.result.value


def exact_expectation(process: Process, cap: int = BRANCH_CAP) -> ExactOutcome:
    """Exact expected value of ``process`` by forward enumeration.

    Also returns ``Pr[e in I]``, per-batch expected gains and the joint tables
    ``Pr[e in I_t, R_t = S]`` and ``Pr[R_t = S]`` keyed by ``(t, obs_key)``.
    """
    inst = process.instance
    numeric = process.policy.numeric
    conv = numeric.convert
    zero = conv(0)
    dist: dict[int, Any] = {process.policy.start(): conv(1)}
    m = inst.ground_size
    selected = [zero] * m
    per_element = [zero] * m
    per_batch = []
    events: dict[tuple[int, int], Any] = {}
    joint: dict[tuple[int, int], dict[int, Any]] = {}
    count = 0
    for t, (batch, d) in enumerate(zip(inst.batches, inst.distributions)):
        new: dict[int, Any] = {}
        gain = zero
        atom_probs = [conv(p) for p in d.probabilities]
        atom_weights = [dict(zip(batch, (conv(x) for x in w))) for w, _ in d.atoms]
        obs_branches = [[(conv(q), k) for q, k in process.observer.branches(t, a)] for a in range(d.size)]
        for a, pa in enumerate(atom_probs):
            for q, key in obs_branches[a]:
                ev = (t, key)
                events[ev] = events.get(ev, zero) + pa * q
        for state, ps in dist.items():
            for a, pa in enumerate(atom_probs):
                wa = atom_weights[a]
                for q, key in obs_branches[a]:
                    base = ps * pa * q
                    row = joint.setdefault((t, key), {})
                    for r, ns, chosen in process.decide(t, state, key, a):
                        count += 1
                        if count > cap:
                            raise CapacityError(f"exact enumeration exceeded {cap} branches at batch {t}")
                        p = base * r
                        new[ns] = new.get(ns, zero) + p
                        while chosen:
                            low = chosen & -chosen
                            e = low.bit_length() - 1
                            chosen ^= low
                            selected[e] += p
                            per_element[e] += p * wa.get(e, zero)
                            gain += p * wa.get(e, zero)
                            row[e] = row.get(e, zero) + p
        per_batch.append(gain)
        dist = new
    value = sum(per_batch, zero)
    result = ExpectationResult(value, "exact")
    return ExactOutcome(result, per_batch, per_element, selected, events, joint, count, dist)


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class RunningStats:
    """Mergeable mean and variance accumulator."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, values: np.ndarray) -> "RunningStats":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return self
        other = RunningStats(int(values.size), float(values.mean()), float(((values - values.mean()) ** 2).sum()))
        return self.merge(other)

    def add(self, value: float) -> "RunningStats":
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)
        return self

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def halfwidth(self) -> float:
        return 1.96 * self.std / math.sqrt(self.count) if self.count else math.inf


# ---------------------------------------------------------------------------
# Monte-Carlo engine


def worker_count() -> int:
    raw = os.environ.get("PROPHET_MATCH_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise DomainError(f"PROPHET_MATCH_THREADS must be an integer, got {raw!r}") from None
    return min(4, os.cpu_count() or 1)


@dataclass
class TrialTrace:
    atoms: np.ndarray
    keys: np.ndarray
    chosen: np.ndarray
    coins: np.ndarray
    values: np.ndarray


def simulate_trials(process: Process, seed: int, start: int, count: int) -> TrialTrace:
    """Run trials ``start .. start+count-1`` of ``process`` under ``seed``."""
    inst = process.instance
    layout = BlockLayout.for_instance(inst)
    block = TrialBlock.draw(layout, seed, start, count)
    codec = WeightCodec(inst)
    atoms = codec.draw_all(block.atoms) if inst.n_batches else np.zeros((count, 0), dtype=np.int64)
    T = inst.n_batches
    state = np.full(count, process.policy.start(), dtype=np.int64)
    keys = np.zeros((count, T), dtype=np.int64)
    chosen = np.zeros((count, T), dtype=np.int64)
    values = np.zeros(count)
    for t in range(T):
        obs = process.observer.sample(t, atoms[:, t], block)
        keys[:, t] = obs
        trip = np.stack([state, obs, atoms[:, t]], axis=1)
        uniq, inv = np.unique(trip, axis=0, return_inverse=True)
        inv = inv.ravel()
        batch = inst.batches[t]
        dist = inst.distributions[t]
        rows = [process.decide(t, int(s), int(k), int(a)) for s, k, a in uniq]
        width = max(len(r) for r in rows)
        cum = np.full((len(rows), width), np.inf)
        nstate = np.zeros((len(rows), width), dtype=np.int64)
        cmask = np.zeros((len(rows), width), dtype=np.int64)
        gain = np.zeros((len(rows), width))
        for i, (r, (_, _, a)) in enumerate(zip(rows, uniq)):
            w = dict(zip(batch, dist.atoms[int(a)][0]))
            acc = 0.0
            for j, (p, ns, cm) in enumerate(r):
                acc += float(p)
                cum[i, j] = acc
                nstate[i, j] = ns
                cmask[i, j] = cm
                gain[i, j] = float(sum((w[e] for e in mask_elements(cm)), Fraction(0)))
            cum[i, len(r) - 1] = np.inf
        coin = block.coins[:, t]
        pick = np.minimum((coin[:, None] >= cum[inv]).sum(axis=1), width - 1)
        state = nstate[inv, pick]
        chosen[:, t] = cmask[inv, pick]
        values += gain[inv, pick]
    return TrialTrace(atoms, keys, chosen, block.coins, values)


def mc_expectation(process: Process, n: int, seed: int, workers: int | None = None,
                   chunk: int = CHUNK) -> ExpectationResult:
    """Monte-Carlo estimate of the expected value with a 95% normal interval.

    Trials are cut into fixed chunks whose statistics are merged in chunk
    order, so the estimate is identical for any worker count.
    """
    if n < 2:
        raise DomainError("Monte-Carlo estimation needs n >= 2")
    starts = list(range(0, n, chunk))

    def run(s: int) -> RunningStats:
        return RunningStats().push(simulate_trials(process, seed, s, min(chunk, n - s)).values)

    workers = workers or worker_count()
    if workers > 1 and len(starts) > 1:
        # warm the decision caches single-threaded so shards only read them
        first = run(starts[0])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = [first] + list(pool.map(run, starts[1:]))
    else:
        parts = [run(s) for s in starts]
    total = RunningStats()
    for p in parts:
        total.merge(p)
    return ExpectationResult(total.mean, "mc", n, total.halfwidth, seed, total.std)


def mc_stats(process: Process, n: int, seed: int, start: int = 0, chunk: int = CHUNK) -> RunningStats:
    """Raw accumulator for trials ``start .. start+n-1``; shards merge with :meth:`RunningStats.merge`."""
    total = RunningStats()
    for s in range(start, start + n, chunk):
        total.merge(RunningStats().push(simulate_trials(process, seed, s, min(chunk, start + n - s)).values))
    return total


# ---------------------------------------------------------------------------
# Selectability


@dataclass
class SelectabilityReport:
    entries: list[dict]
    marginal_ratios: dict[int, Any]
    selected: list
    realized: list
    omitted: list[int]
    value: Any

    @property
    def minimum(self):
        vals = [e["ratio"] for e in self.entries]
        return min(vals) if vals else None

    @property
    def min_marginal_ratio(self):
        vals = list(self.marginal_ratios.values())
        return min(vals) if vals else None


def selectability_report(process: Process, cap: int = BRANCH_CAP) -> SelectabilityReport:
    """Conditional selection probabilities ``Pr[e in I_t | R_t = S]`` for every realizable S.

    For fractional realizations the conditioning event is ``r_t = s`` and the
    entry's ``ratio`` is the probability divided by ``s_e``. Elements that are
    never realized are listed in ``omitted``.
    """
    out = exact_expectation(process, cap)
    inst = process.instance
    zero = process.policy.numeric.convert(0)
    realized = [zero] * inst.ground_size
    entries = []
    for (t, key), pe in sorted(out.events.items()):
        if not pe:
            continue
        obs = process.observation(t, key)
        row = out.joint.get((t, key), {})
        if process.observer.fractional:
            members = [(e, s) for e, s in zip(inst.batches[t], obs) if s]
            shown = {e: s for e, s in members}
        else:
            members = [(e, Fraction(1)) for e in sorted(obs)]
            shown = sorted(obs)
        for e, s in members:
            prob = row.get(e, zero) / pe
            realized[e] += pe * process.policy.numeric.convert(s)
            entries.append({
                "batch": t, "realization": shown, "element": e, "event_probability": pe,
                "probability": prob, "ratio": prob / process.policy.numeric.convert(s),
            })
    ratios = {}
    omitted = []
    for e in range(inst.ground_size):
        if realized[e]:
            ratios[e] = out.selected[e] / realized[e]
        else:
            omitted.append(e)
    return SelectabilityReport(entries, ratios, out.selected, realized, omitted, out.value)
