"""Sample sets: recorded base-policy states with exact costs-to-go.

A sample set plays two roles in lookahead: it is the terminal constraint
(terminal states must be members) and the terminal cost (each member carries
the recorded cost of finishing the job with its base policy). Explicit sets
store finitely many sampled states; analytic sets describe infinitely many
members through a predicate and an evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .costs import INF, ensure_cost
from .errors import UnusableTrajectoryError
from .model import (
    Policy,
    ProblemDef,
    Trajectory,
    is_vector_state,
    state_key,
    states_equal,
)


@dataclass(frozen=True)
class SampleEntry:
    """One sampled state with its recorded cost-to-go.

    successor is the next state under the policy that produced the entry;
    it is None only on the frontier of an analytically-tailed recording.
    """

    state: object
    value: float
    policy_id: str
    successor: object | None = None


class ExplicitSampleSet:
    """A finite sample set with tolerance-aware membership lookup.

    Vector states are indexed by a spatial grid hash at the state-equality
    resolution so lookups stay O(1); token states use exact keys.
    """

    def __init__(self, entries: Iterable[SampleEntry], label: str, *,
                 eps_state: float = 1e-9, analytic_tail: bool = False):
        self.label = label
        self.eps_state = eps_state
        self.analytic_tail = analytic_tail
        self._entries: list[SampleEntry] = []
        self._by_key: dict = {}
        self._grid: dict = {}
        for e in entries:
            self._add(e)
        if not self._entries:
            raise ValueError("sample set must contain at least one entry")

    # construction helpers -------------------------------------------------

    def _cell(self, x: np.ndarray) -> tuple:
        return tuple(int(math.floor(c / self.eps_state)) for c in x)

    def _add(self, e: SampleEntry) -> None:
        key = state_key(e.state)
        if key in self._by_key:
            raise ValueError(f"duplicate sample state {e.state!r}")
        self._by_key[key] = len(self._entries)
        if is_vector_state(e.state):
            self._grid.setdefault(self._cell(e.state), []).append(len(self._entries))
        self._entries.append(e)

    # queries --------------------------------------------------------------

    def entries(self) -> tuple:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def policy_ids(self) -> tuple:
        seen = []
        for e in self._entries:
            if e.policy_id not in seen:
                seen.append(e.policy_id)
        return tuple(seen)

    def lookup(self, x) -> SampleEntry | None:
        """The entry matching x within the state tolerance, else None."""
        if is_vector_state(x):
            base = self._cell(x)
            best = None
            for offsets in _neighbor_cells(base):
                for idx in self._grid.get(offsets, ()):
                    e = self._entries[idx]
                    if states_equal(e.state, x, self.eps_state):
                        if best is None or idx < best[0]:
                            best = (idx, e)
            return best[1] if best else None
        idx = self._by_key.get(state_key(x))
        return self._entries[idx] if idx is not None else None

    def contains(self, x) -> bool:
        return self.lookup(x) is not None

    def terminal_cost(self, x) -> float:
        e = self.lookup(x)
        return e.value if e is not None else INF


def _neighbor_cells(cell: tuple):
    if len(cell) == 0:
        yield cell
        return
    first, rest = cell[0], cell[1:]
    for tail in _neighbor_cells(rest):
        for d in (-1, 0, 1):
            yield (first + d,) + tail


class AnalyticSampleSet:
    """A predicate-defined sample set with an exact cost evaluator.

    quadratic, when given, is the matrix P with evaluator(x) = x' P x; the
    continuous solver uses it as a smooth terminal cost.
    """

    def __init__(self, *, label: str, policy_id: str,
                 contains_fn: Callable, value_fn: Callable,
                 sample_member: Callable, quadratic: np.ndarray | None = None):
        self.label = label
        self._policy_id = policy_id
        self._contains = contains_fn
        self._value = value_fn
        self.sample_member = sample_member  # rng -> member state
        self.quadratic = None if quadratic is None else np.asarray(quadratic, dtype=float)

    @property
    def policy_ids(self) -> tuple:
        return (self._policy_id,)

    def contains(self, x) -> bool:
        return bool(self._contains(x))

    def terminal_cost(self, x) -> float:
        return ensure_cost(self._value(x)) if self.contains(x) else INF


def build_from_trajectory(traj: Trajectory, label: str | None = None,
                          eps_state: float = 1e-9) -> ExplicitSampleSet:
    """Turn a recorded trajectory with tail costs into an explicit sample set.

    The last state's successor is itself when the run terminated in the
    stopping set (a recorded fixed point); otherwise the successor is omitted
    and the set is flagged analytic-tailed, exempting that one frontier entry
    from structural invariance checking.
    """
    if traj.tail_costs is None:
        raise UnusableTrajectoryError("trajectory has no tail costs; cannot value its states")
    entries = []
    seen = set()
    n = len(traj.controls)
    for k, x in enumerate(traj.states):
        key = state_key(x)
        if key in seen:
            continue  # a revisited state keeps its first (larger) recorded value
        seen.add(key)
        if k < n:
            succ = traj.states[k + 1]
        elif traj.terminated_in_stopping_set:
            succ = x
        else:
            succ = None
        entries.append(SampleEntry(x, ensure_cost(traj.tail_costs[k]), traj.policy_id, succ))
    return ExplicitSampleSet(
        entries,
        label or f"samples[{traj.policy_id}]",
        eps_state=eps_state,
        analytic_tail=not traj.terminated_in_stopping_set,
    )


def merge(sets: Iterable[ExplicitSampleSet], label: str | None = None) -> ExplicitSampleSet:
    """Union of explicit sets keeping the pointwise minimum value per state.

    Value ties keep the entry from the earliest set in the argument order.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("merge needs at least one sample set")
    merged: list[SampleEntry] = []
    index: dict = {}
    for sset in sets:
        for e in sset.entries():
            key = state_key(e.state)
            if key not in index:
                index[key] = len(merged)
                merged.append(e)
            elif e.value < merged[index[key]].value:
                merged[index[key]] = e
    eps = min(s.eps_state for s in sets)
    return ExplicitSampleSet(
        merged,
        label or "+".join(s.label for s in sets),
        eps_state=eps,
        analytic_tail=any(s.analytic_tail for s in sets),
    )


@dataclass(frozen=True)
class InvarianceViolation:
    state: object
    successor: object
    reason: str


@dataclass(frozen=True)
class InvarianceReport:
    passed: bool
    checked: int
    violations: tuple
    sampled: bool = False


def _policy_for(policies, policy_id: str) -> Policy:
    if isinstance(policies, Policy):
        return policies
    if isinstance(policies, Mapping):
        if policy_id not in policies:
            raise KeyError(f"no policy supplied for id {policy_id!r}")
        return policies[policy_id]
    raise TypeError("policies must be a Policy or a mapping id -> Policy")


def verify_invariance(problem: ProblemDef, policies, sset,
                      rng: np.random.Generator | None = None,
                      samples: int = 1000) -> InvarianceReport:
    """Check that each member's successor under its own policy is a member.

    Explicit sets are checked entry by entry (frontier entries of
    analytic-tailed sets carry no recorded successor and are skipped).
    Predicate-defined sets are checked on randomly sampled members.
    """
    violations = []
    if isinstance(sset, ExplicitSampleSet):
        checked = 0
        for e in sset.entries():
            if e.successor is None:
                if not sset.analytic_tail:
                    violations.append(InvarianceViolation(e.state, None, "missing successor"))
                continue
            pol = _policy_for(policies, e.policy_id)
            nxt = problem.dynamics(e.state, pol.action(e.state))
            checked += 1
            if not states_equal(nxt, e.successor, sset.eps_state):
                violations.append(InvarianceViolation(e.state, nxt, "recorded successor mismatch"))
            elif not sset.contains(nxt):
                violations.append(InvarianceViolation(e.state, nxt, "successor not a member"))
        return InvarianceReport(not violations, checked, tuple(violations))

    rng = rng or np.random.default_rng(0)
    pol = _policy_for(policies, sset.policy_ids[0])
    checked = 0
    for _ in range(samples):
        x = sset.sample_member(rng)
        if not sset.contains(x):
            violations.append(InvarianceViolation(x, None, "sampler produced a non-member"))
            continue
        nxt = problem.dynamics(x, pol.action(x))
        checked += 1
        if not sset.contains(nxt):
            violations.append(InvarianceViolation(x, nxt, "successor not a member"))
    return InvarianceReport(not violations, checked, tuple(violations), sampled=True)
