"""Multistep lookahead with a sample-set terminal constraint.

The l-step problem from x minimizes

    sum_{k<l} g(x_k, u_k) + terminal(x_l)

where terminal() is the sample set's recorded cost (+inf off the set). The
discrete backend solves it exactly by memoized enumeration; the continuous
backends live in the shooting module and are dispatched through solve().
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

from .costs import INF
from .errors import AssumptionViolationError
from .model import (
    BoxControls,
    FiniteControls,
    Policy,
    ProblemDef,
    control_key,
    state_key,
)

BACKENDS = ("discrete", "shooting", "hybrid")


@dataclass(frozen=True)
class SolverConfig:
    """Tunable solver parameters; every tolerance used anywhere lives here."""

    ell: int = 1
    backend: str = "discrete"
    eps_term: float = 1e-6      # terminal-state mismatch accepted by shooting
    eps_tail: float = 1e-6      # residual tail cost that closes a rollout run
    max_iters: int = 5000       # projected-gradient iteration cap
    penalty_init: float = 1e2   # terminal-mismatch penalty continuation start
    penalty_growth: float = 10.0
    penalty_max: float = 1e12
    seed: int = 0
    workers: int = 1
    node_cap: int = 2_000_000
    mode_cap: int = 128         # hybrid: exhaustive mode enumeration up to this many
    diagnostics: bool = True

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("lookahead depth must be at least 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.eps_term <= 0:
            raise ValueError("eps_term must be positive")
        if self.mode_cap < 1:
            raise ValueError("mode_cap must be at least 1")


@dataclass(frozen=True)
class LookaheadSolution:
    """An l-step control plan with its achieved value.

    value is the exact objective of the plan: stage costs accumulated
    right-to-left plus the terminal sample's recorded cost. An infeasible
    problem is reported as value +inf with an empty plan.
    """

    controls: tuple
    terminal_state: object | None
    value: float
    terminal_sample_id: object | None = None
    per_stage_values: tuple | None = None
    diagnostics: dict | None = None

    def recompute(self, problem: ProblemDef, sset, x) -> float:
        """Re-evaluate the plan's objective from scratch (for audits)."""
        if self.value == INF:
            return INF
        states = [x]
        for u in self.controls:
            states.append(problem.dynamics(states[-1], u))
        if self.terminal_sample_id is not None and hasattr(sset, "tail_usages"):
            # budget-augmented set: the id is a seed index; re-check that the
            # remaining budget still covers the recorded tail usage
            k = self.terminal_sample_id
            covered = float(states[-1].info) >= sset.tail_usages[k]
            terminal = sset.seed.tail_costs[k] if covered else INF
        elif self.terminal_sample_id is not None and hasattr(sset, "entries"):
            terminal = _entry_value(sset, self.terminal_sample_id)
        else:
            terminal = sset.terminal_cost(states[-1])
        total = terminal
        for k in range(len(self.controls) - 1, -1, -1):
            g = problem.stage_cost(states[k], self.controls[k])
            total = g + total
        return total


def _entry_value(sset, sample_id) -> float:
    for e in sset.entries():
        if state_key(e.state) == sample_id:
            return e.value
    return INF


def _sorted_controls(spec) -> tuple:
    if isinstance(spec, BoxControls):
        raise ValueError("discrete backend requires finite control sets")
    if not isinstance(spec, FiniteControls):
        raise TypeError(f"unsupported control set {spec!r}")
    if not spec.controls:
        raise ValueError("control set must be nonempty")
    return tuple(sorted(spec.controls))


def _sample_id_at(sset, x):
    if hasattr(sset, "lookup"):
        e = sset.lookup(x)
        if e is not None:
            return state_key(e.state)
    return None


def _discrete_minimize(problem: ProblemDef, sset, x, ell: int,
                       controls_at: Callable) -> tuple[dict, Callable]:
    """Memoized exact minimization; returns the memo and the recursion.

    Values are computed with right-associated additions so a later
    replay of the returned plan reproduces them bit for bit. Among
    minimizing plans the one deferring the least cost wins (smallest
    continuation value, so free self-loops cannot postpone progress
    forever), then the earliest in sorted control order.
    """
    memo: dict = {}

    def rec(state, depth_left: int):
        key = (state_key(state), depth_left)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if depth_left == 0:
            v = sset.terminal_cost(state)
            out = (v, (), state if v < INF else None, _sample_id_at(sset, state) if v < INF else None)
            memo[key] = out
            return out
        step = ell - depth_left
        best = (INF, (), None, None)
        best_tail = INF
        for u in _sorted_controls(controls_at(state, step)):
            g = problem.stage_cost(state, u)
            if g == INF:
                continue
            tail_v, tail_us, term, sid = rec(problem.dynamics(state, u), depth_left - 1)
            if tail_v == INF:
                continue
            v = g + tail_v
            if v < best[0] or (v == best[0] and tail_v < best_tail):
                best = (v, (u,) + tail_us, term, sid)
                best_tail = tail_v
        memo[key] = best
        return best

    return memo, rec


def solve_discrete(problem: ProblemDef, sset, x, cfg: SolverConfig) -> LookaheadSolution:
    """Exact l-step lookahead by depth-bounded enumeration with memoization."""
    _, rec = _discrete_minimize(problem, sset, x, cfg.ell,
                                lambda s, k: problem.control_set(s))
    value, controls, terminal, sid = rec(x, cfg.ell)
    stages = None
    if cfg.diagnostics:
        stages = tuple(rec(x, k)[0] for k in range(cfg.ell + 1))
    return LookaheadSolution(
        controls=controls,
        terminal_state=terminal,
        value=value,
        terminal_sample_id=sid,
        per_stage_values=stages,
    )


def vi_sequence(problem: ProblemDef, sset, states: Iterable, ell: int) -> dict:
    """Value-iteration iterates J_0..J_ell at the given states.

    J_0 is the sample set's terminal cost and J_k the k-step lookahead
    value, all computed from one shared memo table.
    """
    _, rec = _discrete_minimize(problem, sset, None, ell,
                                lambda s, k: problem.control_set(s))
    return {state_key(x): [rec(x, k)[0] for k in range(ell + 1)] for x in states}


def solve_restricted(problem: ProblemDef, sset, x, restricted_controls: Callable,
                     cfg: SolverConfig, policy: Policy | None = None) -> LookaheadSolution:
    """Lookahead over a restricted control set Ubar(x) <= U(x).

    When the base policy is supplied, every member state visited by the
    search must keep its base action inside Ubar; a violation raises, since
    the improvement guarantee depends on it.
    """

    def controls_at(state, step):
        spec = restricted_controls(state)
        if policy is not None and sset.contains(state):
            if not spec.contains(policy.action(state), problem.eps_state):
                raise AssumptionViolationError(state, policy.action(state))
        return spec

    _, rec = _discrete_minimize(problem, sset, x, cfg.ell, controls_at)
    value, controls, terminal, sid = rec(x, cfg.ell)
    return LookaheadSolution(controls=controls, terminal_state=terminal,
                             value=value, terminal_sample_id=sid)


def solve(problem: ProblemDef, sset, x, cfg: SolverConfig,
          seeds: Sequence = (), base_policy: Policy | None = None) -> LookaheadSolution:
    """Dispatch to the configured backend."""
    if cfg.backend == "discrete":
        return solve_discrete(problem, sset, x, cfg)
    from .shooting import solve_continuous

    return solve_continuous(problem, sset, x, cfg, seeds=seeds, base_policy=base_policy)
