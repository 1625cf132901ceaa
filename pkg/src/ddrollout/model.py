"""Core model: states, controls, problems, policies, trajectories, and checks.

A problem is a deterministic discrete-time system x' = f(x, u) with a
nonnegative extended-real stage cost g(x, u); g = +inf encodes constraint
violations. An optional stopping predicate marks a cost-free, forward
invariant set where trajectories terminate. States are either opaque
hashable tokens (discrete problems), 1-D float vectors (continuous
problems), or resource-augmented pairs built by the budget module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence, Union

import numpy as np

from .costs import INF, ensure_cost, sum_costs
from .errors import (
    ConstraintViolationError,
    CoverageError,
    InfeasibleTrajectoryError,
)

#: Tolerance for vector-state equality (infinity norm).
EPS_STATE = 1e-9

State = Union[Hashable, np.ndarray]
Control = Union[Hashable, np.ndarray]


# ---------------------------------------------------------------------------
# Control set descriptions


@dataclass(frozen=True)
class FiniteControls:
    """A finite enumeration of admissible controls."""

    controls: tuple

    def contains(self, u, eps: float = EPS_STATE) -> bool:
        return any(controls_equal(u, c, eps) for c in self.controls)


@dataclass(frozen=True)
class BoxControls:
    """A per-coordinate box [lo, hi] of admissible control vectors."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("control box bounds must share a shape")
        if np.any(self.lo > self.hi):
            raise ValueError("control box has lo > hi")

    def contains(self, u, eps: float = EPS_STATE) -> bool:
        v = np.asarray(u, dtype=float)
        if v.shape != self.lo.shape:
            return False
        return bool(np.all(v >= self.lo - eps) and np.all(v <= self.hi + eps))

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)


ControlSetSpec = Union[FiniteControls, BoxControls]


# ---------------------------------------------------------------------------
# State and control helpers


def is_vector_state(x) -> bool:
    return isinstance(x, np.ndarray)


def _is_augmented(x) -> bool:
    # Duck-typed so the budget module can define the class without a cycle.
    return hasattr(x, "base") and hasattr(x, "info")


def states_equal(a, b, eps: float = EPS_STATE) -> bool:
    """Equality with an infinity-norm tolerance on vector components.

    Token states compare exactly; the info coordinate of augmented states
    compares exactly as well (resource accounting admits no slack).
    """
    if _is_augmented(a) or _is_augmented(b):
        if not (_is_augmented(a) and _is_augmented(b)):
            return False
        return a.info == b.info and states_equal(a.base, b.base, eps)
    if is_vector_state(a) or is_vector_state(b):
        if not (is_vector_state(a) and is_vector_state(b)):
            return False
        if a.shape != b.shape:
            return False
        return bool(np.max(np.abs(a - b), initial=0.0) <= eps)
    return a == b


def controls_equal(a, b, eps: float = EPS_STATE) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
            return False
        if a.shape != b.shape:
            return False
        return bool(np.max(np.abs(a - b), initial=0.0) <= eps)
    return a == b


def state_key(x) -> Hashable:
    """Exact hashable key for memo tables and value maps."""
    if _is_augmented(x):
        return ("aug", state_key(x.base), float(x.info))
    if is_vector_state(x):
        return ("vec", np.asarray(x, dtype=float).tobytes())
    return x


def control_key(u) -> Hashable:
    if isinstance(u, np.ndarray):
        return ("vec", np.asarray(u, dtype=float).tobytes())
    return u


# ---------------------------------------------------------------------------
# Piecewise-linear dynamics data used by the shooting solver


@dataclass(frozen=True)
class LinearMode:
    """One affine dynamics mode x' = a @ x + b @ u + c."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))


@dataclass(frozen=True)
class PiecewiseLinearStructure:
    """Smooth problem data the continuous solver needs.

    The quadratic stage cost is x' q x + u' r u on the feasible region; the
    optional state box is enforced as a feasibility filter with tolerance
    box_tol (the extended-real stage cost must agree with it).
    """

    modes: tuple
    mode_of: Callable[[np.ndarray], int]
    q: np.ndarray
    r: np.ndarray
    state_box: tuple | None = None
    box_tol: float = EPS_STATE

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))


# ---------------------------------------------------------------------------
# Problem, policy, trajectory


@dataclass(frozen=True)
class ProblemDef:
    """Deterministic control problem with nonnegative extended-real costs."""

    dynamics: Callable[[State, Control], State]
    stage_cost: Callable[[State, Control], float]
    control_set: Callable[[State], ControlSetSpec]
    stopping_predicate: Callable[[State], bool] | None = None
    eps_state: float = EPS_STATE
    name: str = "problem"
    pl: PiecewiseLinearStructure | None = None
    budget: object | None = None  # BudgetLayer for augmented problems

    def is_stopping(self, x) -> bool:
        return bool(self.stopping_predicate(x)) if self.stopping_predicate else False


@dataclass(frozen=True)
class Policy:
    """A stationary feedback law u = action(x).

    analytic_cost, when given, must equal the policy's infinite-horizon cost
    from every state the policy will actually visit; it lets trajectories
    that never terminate carry exact tail costs.
    """

    action: Callable[[State], Control]
    id: str
    analytic_cost: Callable[[State], float] | None = None


@dataclass(frozen=True)
class Trajectory:
    """A recorded closed-loop trajectory.

    states has one more element than controls/stage_costs. tail_costs, when
    present, aligns with states and satisfies
    tail_costs[k] = stage_costs[k] + tail_costs[k+1].
    """

    states: tuple
    controls: tuple
    stage_costs: tuple
    policy_id: str
    terminated_in_stopping_set: bool
    tail_costs: tuple | None = None

    def __post_init__(self):
        n = len(self.controls)
        if len(self.states) != n + 1 or len(self.stage_costs) != n:
            raise ValueError("trajectory arrays are inconsistently sized")
        if self.tail_costs is not None and len(self.tail_costs) != n + 1:
            raise ValueError("tail_costs must align with states")

    def __len__(self) -> int:
        return len(self.controls)

    def cost(self) -> float:
        return trajectory_cost(self)


# ---------------------------------------------------------------------------
# Operations


def _check_admissible(problem: ProblemDef, x, u, step: int) -> None:
    spec = problem.control_set(x)
    if not spec.contains(u, problem.eps_state):
        raise ConstraintViolationError(step, x, u)


def simulate_policy(problem: ProblemDef, policy: Policy, x0, max_steps: int = 10_000) -> Trajectory:
    """Roll the policy forward until the stopping set or the step cap.

    Tail costs are filled in only when they are exact: by backward
    accumulation from zero when the run terminates in the stopping set, or
    from the policy's analytic cost when one is provided.
    """
    states = [x0]
    controls = []
    stage_costs = []
    x = x0
    terminated = problem.is_stopping(x)
    step = 0
    while not terminated and step < max_steps:
        u = policy.action(x)
        _check_admissible(problem, x, u, step)
        g = ensure_cost(problem.stage_cost(x, u))
        if g == INF:
            raise InfeasibleTrajectoryError(step, x, u)
        controls.append(u)
        stage_costs.append(g)
        x = problem.dynamics(x, u)
        states.append(x)
        terminated = problem.is_stopping(x)
        step += 1

    tail = None
    if terminated:
        tail = [0.0] * len(states)
        for k in range(len(controls) - 1, -1, -1):
            tail[k] = stage_costs[k] + tail[k + 1]
    elif policy.analytic_cost is not None:
        tail = [ensure_cost(policy.analytic_cost(s)) for s in states]

    return Trajectory(
        states=tuple(states),
        controls=tuple(controls),
        stage_costs=tuple(stage_costs),
        policy_id=policy.id,
        terminated_in_stopping_set=terminated,
        tail_costs=tuple(tail) if tail is not None else None,
    )


def trajectory_cost(traj: Trajectory) -> float:
    """Total cost of the trajectory.

    With tail costs present this is tail_costs[0], which includes the exact
    cost of the unrecorded continuation; otherwise it is the saturating sum
    of the recorded stage costs.
    """
    if traj.tail_costs is not None:
        return traj.tail_costs[0]
    return sum_costs(traj.stage_costs)


def validate_trajectory(problem: ProblemDef, traj: Trajectory, rel: float = 1e-10) -> None:
    """Assert the structural trajectory invariants; raises ValueError on failure."""
    for k, (x, u) in enumerate(zip(traj.states, traj.controls)):
        nxt = problem.dynamics(x, u)
        if not states_equal(nxt, traj.states[k + 1], problem.eps_state):
            raise ValueError(f"transition mismatch at step {k}")
        g = problem.stage_cost(x, u)
        if not math.isclose(g, traj.stage_costs[k], rel_tol=rel, abs_tol=rel):
            raise ValueError(f"stage cost mismatch at step {k}")
    if traj.tail_costs is not None:
        for k in range(len(traj.controls)):
            lhs = traj.tail_costs[k]
            rhs = traj.stage_costs[k] + traj.tail_costs[k + 1]
            if abs(lhs - rhs) > rel * max(1.0, abs(lhs)):
                raise ValueError(f"tail cost recursion fails at step {k}")
        if traj.terminated_in_stopping_set and traj.tail_costs[-1] != 0.0:
            raise ValueError("terminated trajectory must end with zero tail cost")


def as_value_fn(values) -> Callable[[State], float]:
    """Adapt a mapping or callable into a total value lookup.

    Mappings are keyed by state_key; a missing state raises CoverageError.
    """
    if callable(values):
        return values
    table = {state_key(k): v for k, v in values.items()}

    def lookup(x):
        key = state_key(x)
        if key not in table:
            raise CoverageError(x)
        return table[key]

    return lookup


@dataclass(frozen=True)
class ResidualRow:
    state: object
    value: float
    backed_up: float
    residual: float
    ok: bool


@dataclass(frozen=True)
class CheckReport:
    rows: tuple
    passed: bool

    @property
    def failures(self):
        return [r for r in self.rows if not r.ok]


def _backed_up(problem: ProblemDef, policy: Policy, value_fn, x) -> float:
    u = policy.action(x)
    g = ensure_cost(problem.stage_cost(x, u))
    nxt = problem.dynamics(x, u)
    return g + value_fn(nxt) if g != INF else INF


def check_fixed_point(
    problem: ProblemDef,
    policy: Policy,
    values,
    states: Iterable,
    eps_residual: float = 1e-8,
) -> CheckReport:
    """Check v(x) = g(x, policy(x)) + v(f(x, policy(x))) on the given states.

    The residual is relative to max(1, |v(x)|). Two infinities agree; one
    infinity against a finite value fails.
    """
    value_fn = as_value_fn(values)
    rows = []
    for x in states:
        v = value_fn(x)
        b = _backed_up(problem, policy, value_fn, x)
        if v == INF or b == INF:
            resid = 0.0 if v == b else INF
        else:
            resid = abs(v - b) / max(1.0, abs(v))
        rows.append(ResidualRow(x, v, b, resid, resid <= eps_residual))
    return CheckReport(tuple(rows), all(r.ok for r in rows))


def check_upper_bound(
    problem: ProblemDef,
    policy: Policy,
    candidate,
    states: Iterable,
    eps_slack: float = 1e-12,
) -> CheckReport:
    """Check g(x, policy(x)) + c(f(x, policy(x))) <= c(x) on the given states.

    Passing certifies the candidate as an upper bound on the policy's cost
    from those states. Equality passes; the slack tolerance only absorbs
    floating-point rounding.
    """
    value_fn = as_value_fn(candidate)
    rows = []
    for x in states:
        v = value_fn(x)
        b = _backed_up(problem, policy, value_fn, x)
        if v == INF:
            ok, resid = True, 0.0
        elif b == INF:
            ok, resid = False, INF
        else:
            slack = v - b
            ok = slack >= -eps_slack * max(1.0, abs(v))
            resid = max(0.0, -slack)
        rows.append(ResidualRow(x, v, b, resid, ok))
    return CheckReport(tuple(rows), all(r.ok for r in rows))
