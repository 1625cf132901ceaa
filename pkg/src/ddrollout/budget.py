"""Trajectory-constraint handling by state augmentation.

A cumulative resource constraint sum_k usage(x_k, u_k) <= e_max becomes an
ordinary state constraint after the state is extended with the remaining
budget e, which evolves as e' = e - usage(x, u). A recorded trajectory that
respects the budget then seeds an infinite sample set in the augmented
space: every (x_k, e) with e at least the trajectory's remaining usage from
step k is a member, valued at the trajectory's remaining cost from step k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .costs import INF, ensure_cost
from .errors import InfeasibleSeedError, UnusableTrajectoryError
from .model import (
    Policy,
    ProblemDef,
    Trajectory,
    state_key,
    states_equal,
)


@dataclass(frozen=True)
class AugmentedState:
    """A base state paired with the remaining resource budget."""

    base: object
    info: float

    def __repr__(self):
        return f"AugmentedState({self.base!r}, e={self.info:.6g})"


@dataclass(frozen=True)
class BudgetConstraintSpec:
    """A nonnegative per-step usage charged against a total budget e_max.

    usage_quad, when given, is the matrix U with usage(x, u) = u' U u; the
    shooting solver needs it to treat the budget as a ball constraint.
    """

    per_step_usage: Callable[[object, object], float]
    e_max: float
    usage_quad: np.ndarray | None = None

    def __post_init__(self):
        if self.e_max < 0:
            raise ValueError("budget must be nonnegative")
        if self.usage_quad is not None:
            object.__setattr__(self, "usage_quad", np.asarray(self.usage_quad, dtype=float))


@dataclass(frozen=True)
class InformationStateMap:
    """Extension point: an information state computed from the history.

    reduce() maps a whole prefix [(x_0, u_0), ...] to the info value;
    transition() advances it one step. The two must be consistent:
    reduce(prefix + [(x, u)]) == transition(reduce(prefix), x, u).
    """

    initial: float
    reduce: Callable[[list], float]
    transition: Callable[[float, object, object], float]


def budget_information_map(spec: BudgetConstraintSpec) -> InformationStateMap:
    """The additive-budget instance of the information-state law."""

    def reduce_prefix(prefix):
        e = spec.e_max
        for x, u in prefix:
            e = e - spec.per_step_usage(x, u)
        return e

    return InformationStateMap(
        initial=spec.e_max,
        reduce=reduce_prefix,
        transition=lambda e, x, u: e - spec.per_step_usage(x, u),
    )


@dataclass(frozen=True)
class BudgetLayer:
    """Marks an augmented ProblemDef and links back to its base problem."""

    base: ProblemDef
    spec: BudgetConstraintSpec


def base_view(state):
    """Strip budget augmentation from a state.

    Base policies are feedback laws on the original state space and never see
    the remaining budget; engines unwrap through this before calling them.
    """
    return state.base if isinstance(state, AugmentedState) else state


def augment_problem(problem: ProblemDef, spec: BudgetConstraintSpec) -> ProblemDef:
    """Lift a problem to the budget-augmented state space.

    Controls are unchanged. A step whose usage exceeds the remaining budget
    costs +inf, so budget feasibility is exactly stage-cost feasibility.
    """

    def dynamics(s: AugmentedState, u):
        return AugmentedState(problem.dynamics(s.base, u),
                              s.info - ensure_cost(spec.per_step_usage(s.base, u)))

    def stage_cost(s: AugmentedState, u):
        if ensure_cost(spec.per_step_usage(s.base, u)) > s.info:
            return INF
        return problem.stage_cost(s.base, u)

    stopping = None
    if problem.stopping_predicate is not None:
        stopping = lambda s: problem.stopping_predicate(s.base)

    return ProblemDef(
        dynamics=dynamics,
        stage_cost=stage_cost,
        control_set=lambda s: problem.control_set(s.base),
        stopping_predicate=stopping,
        eps_state=problem.eps_state,
        name=f"{problem.name}+budget",
        budget=BudgetLayer(base=problem, spec=spec),
    )


class BudgetSampleSet:
    """Augmented sample set seeded by one budget-feasible trajectory.

    Membership of (x, e): x matches some recorded x_k within the state
    tolerance and e >= tail_usage_k, the remaining usage of the recording
    from step k. The budget inequality is exact: resource accounting admits
    no tolerance. The value at a member is the recording's remaining cost
    tail_costs[k].
    """

    def __init__(self, seed: Trajectory, spec: BudgetConstraintSpec, *,
                 usages, tail_usages, label: str, eps_state: float = 1e-9,
                 anchor_usage: float = 0.0):
        self.seed = seed
        self.spec = spec
        self.usages = tuple(usages)
        self.tail_usages = tuple(tail_usages)
        self.label = label
        self.eps_state = eps_state
        self.anchor_usage = anchor_usage
        self.analytic_tail = not seed.terminated_in_stopping_set
        self._policy_id = seed.policy_id

    @property
    def policy_ids(self) -> tuple:
        return (self._policy_id,)

    def __len__(self) -> int:
        return len(self.seed.states)

    def match_index(self, s: AugmentedState) -> int | None:
        """Index of the seed step this augmented state certifies, else None."""
        if not isinstance(s, AugmentedState):
            return None
        for k, xk in enumerate(self.seed.states):
            if states_equal(s.base, xk, self.eps_state) and s.info >= self.tail_usages[k]:
                return k
        return None

    def contains(self, s) -> bool:
        return self.match_index(s) is not None

    def terminal_cost(self, s) -> float:
        k = self.match_index(s)
        return self.seed.tail_costs[k] if k is not None else INF

    def sample_member(self, rng: np.random.Generator) -> AugmentedState:
        # Frontier entries have no recorded successor, so sample before it.
        k = int(rng.integers(0, max(1, len(self.seed.controls))))
        lo = self.tail_usages[k]
        e = float(lo + rng.uniform(0.0, max(0.0, self.spec.e_max - lo)))
        return AugmentedState(self.seed.states[k], e)


def augment_sample_set(traj: Trajectory, spec: BudgetConstraintSpec, *,
                       label: str | None = None, eps_state: float = 1e-9,
                       tail_usage_anchor: Callable[[object], float] | None = None
                       ) -> BudgetSampleSet:
    """Build the augmented sample set certified by one recorded trajectory.

    The seed must carry tail costs and must itself respect the budget; its
    measured usage is reported otherwise. For a recording that does not end
    in the stopping set, tail_usage_anchor supplies the exact usage of the
    unrecorded continuation from the final state (default zero, correct for
    stopped runs).
    """
    if traj.tail_costs is None:
        raise UnusableTrajectoryError("seed trajectory has no tail costs")
    usages = [ensure_cost(spec.per_step_usage(x, u))
              for x, u in zip(traj.states, traj.controls)]
    n = len(usages)
    if traj.terminated_in_stopping_set or tail_usage_anchor is None:
        anchor = 0.0
    else:
        anchor = ensure_cost(tail_usage_anchor(traj.states[-1]))
    tail_usages = [0.0] * (n + 1)
    tail_usages[n] = anchor
    for k in range(n - 1, -1, -1):
        tail_usages[k] = usages[k] + tail_usages[k + 1]
    if tail_usages[0] > spec.e_max:
        raise InfeasibleSeedError(tail_usages[0], spec.e_max)
    return BudgetSampleSet(
        traj, spec, usages=usages, tail_usages=tail_usages,
        label=label or f"budget[{traj.policy_id}]", eps_state=eps_state,
        anchor_usage=anchor,
    )


def augment_policy(policy: Policy, spec: BudgetConstraintSpec) -> Policy:
    """Lift a base-space policy to augmented states (action ignores e)."""
    return Policy(
        action=lambda s: policy.action(s.base),
        id=policy.id,
        analytic_cost=None if policy.analytic_cost is None
        else (lambda s: policy.analytic_cost(s.base)),
    )
