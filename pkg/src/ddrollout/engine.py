"""Rollout driving loops.

Each loop applies the first control of a fresh lookahead solve, steps the
dynamics, and repeats. Runs close out in one of four ways: the state enters
the stopping region ("stopped"), the sample set already prices the state
below eps_tail ("closed_in_set", the recorded tail is appended to the cost),
the step horizon runs out ("horizon"), or a disturbance pushes the state
somewhere the solver cannot price ("infeasible_after_disturbance").
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum

from .budget import base_view
from .costs import INF
from .errors import InfeasibleStepError, InitialInfeasibilityError
from .lookahead import SolverConfig, _discrete_minimize, solve
from .model import FiniteControls, Policy, ProblemDef, Trajectory
from .shooting import FreeTerminal


@dataclass(frozen=True)
class RolloutRun:
    """Everything produced by one rollout: the realized trajectory, the
    per-step lookahead values, solver diagnostics, and how the run ended."""

    trajectory: Trajectory
    per_step_values: tuple
    solver_reports: tuple
    config: SolverConfig
    status: str
    closing_tail: float = 0.0
    variant: str = "basic"
    initial_set_value: float = INF

    @property
    def total_cost(self) -> float:
        return fsum(self.trajectory.stage_costs) + self.closing_tail

    @property
    def steps(self) -> int:
        return len(self.trajectory)


def _tails_from(stage_costs, terminal_tail):
    tails = [terminal_tail]
    for g in reversed(stage_costs):
        tails.append(g + tails[-1])
    tails.reverse()
    return tuple(tails)


def _finish(states, controls, stage_costs, values, reports, cfg, status,
            closing, variant, initial_set_value, policy_id):
    terminated = status == "stopped"
    tails = None
    if status in ("stopped", "closed_in_set"):
        tails = _tails_from(stage_costs, closing if status == "closed_in_set" else 0.0)
    traj = Trajectory(
        states=tuple(states),
        controls=tuple(controls),
        stage_costs=tuple(stage_costs),
        policy_id=policy_id,
        terminated_in_stopping_set=terminated,
        tail_costs=tails,
    )
    return RolloutRun(
        trajectory=traj,
        per_step_values=tuple(values),
        solver_reports=tuple(reports),
        config=cfg,
        status=status,
        closing_tail=closing if status == "closed_in_set" else 0.0,
        variant=variant,
        initial_set_value=initial_set_value,
    )


def run_rollout(problem: ProblemDef, sset, x0, cfg: SolverConfig, horizon: int,
                base_policy: Policy | None = None, disturbance=None,
                residual_close: bool = True, variant: str = "basic",
                policy_id: str = "rollout") -> RolloutRun:
    """Roll the lookahead policy forward from x0 for at most horizon steps.

    disturbance, when given, is called as disturbance(t, x_next) after each
    nominal transition and its return value replaces the state; an
    unresolvable state after a disturbance ends the run with a flagged
    status instead of raising.
    """
    states = [x0]
    controls, stage_costs, values, reports = [], [], [], []
    initial_set_value = sset.terminal_cost(x0)
    prev = None
    status = "horizon"
    closing = 0.0

    for t in range(horizon):
        x = states[-1]
        if problem.is_stopping(x):
            status = "stopped"
            break
        if residual_close:
            tc = sset.terminal_cost(x)
            if tc <= cfg.eps_tail:
                status = "closed_in_set"
                closing = tc
                break

        seeds = []
        if prev is not None and len(prev.controls) == cfg.ell and base_policy is not None:
            shifted = tuple(prev.controls[1:])
            try:
                ext = base_policy.action(base_view(prev.terminal_state))
                seeds.append(shifted + (ext,))
            except Exception:
                pass
        sol = solve(problem, sset, x, cfg, seeds=seeds, base_policy=base_policy)

        if sol.value == INF:
            if t == 0:
                raise InitialInfeasibilityError(x)
            if disturbance is not None:
                status = "infeasible_after_disturbance"
                break
            raise InfeasibleStepError(t, x)

        u = sol.controls[0]
        g = problem.stage_cost(x, u)
        if g == INF:  # defensive: a finite solve must have a feasible first step
            raise InfeasibleStepError(t, x)
        nxt = problem.dynamics(x, u)
        if disturbance is not None:
            nxt = disturbance(t, nxt)
        states.append(nxt)
        controls.append(u)
        stage_costs.append(g)
        values.append(sol.value)
        reports.append(_report_of(sol))
        prev = sol

    return _finish(states, controls, stage_costs, values, reports, cfg, status,
                   closing, variant, initial_set_value, policy_id)


def _report_of(sol):
    rep = {"value": sol.value, "sample_id": sol.terminal_sample_id}
    if sol.per_stage_values is not None:
        rep["per_stage_values"] = sol.per_stage_values
    if sol.diagnostics:
        for key in ("mismatch", "penalty", "iterations", "candidates", "converged"):
            if key in sol.diagnostics:
                rep[key] = sol.diagnostics[key]
    return rep


def run_with_disturbance(problem, sset, x0, cfg, horizon, disturbance,
                         base_policy: Policy | None = None) -> RolloutRun:
    return run_rollout(problem, sset, x0, cfg, horizon, base_policy=base_policy,
                       disturbance=disturbance, variant="disturbance")


def run_classical_mpc(problem: ProblemDef, x0, cfg: SolverConfig, horizon: int,
                      terminal: str = "origin", terminal_quadratic=None,
                      base_policy: Policy | None = None) -> RolloutRun:
    """Receding-horizon baseline that uses no sampled data.

    terminal="origin" pins the lookahead's final state to zero (the
    textbook stabilizing terminal constraint); terminal="free" leaves it
    unconstrained under a designed quadratic cost (zero by default).
    """
    if terminal == "origin":
        import numpy as np

        from .sample_sets import ExplicitSampleSet, SampleEntry

        dim = np.asarray(x0, dtype=float).size
        tset = ExplicitSampleSet([SampleEntry(np.zeros(dim), 0.0, "terminal")],
                                 label="origin")
        residual = True
    elif terminal == "free":
        tset = FreeTerminal(terminal_quadratic)
        residual = False
    else:
        raise ValueError(f"unknown terminal mode {terminal!r}")
    return run_rollout(problem, tset, x0, cfg, horizon, base_policy=base_policy,
                       residual_close=residual, variant="classical-mpc",
                       policy_id="classical-mpc")


# ---------------------------------------------------------------------------
# Multiagent simplified rollout


@dataclass(frozen=True)
class AgentPartition:
    """Splits a joint control into per-agent components.

    agents: ordered agent ids. options(state, agent) lists that agent's
    moves. combine(joint, agent, move) replaces one component of a joint
    control. The one-agent-at-a-time search scales with the sum, not the
    product, of the per-agent option counts.
    """

    agents: tuple
    options: object
    combine: object


def _plan_of_policy(problem, policy, x, ell):
    plan = []
    cur = x
    for _ in range(ell):
        u = policy.action(base_view(cur))
        if problem.stage_cost(cur, u) == INF:
            return None
        plan.append(u)
        cur = problem.dynamics(cur, u)
    return tuple(plan)


def _eval_plan(problem, sset, x, plan):
    states = [x]
    for u in plan:
        states.append(problem.dynamics(states[-1], u))
    total = sset.terminal_cost(states[-1])
    for k in range(len(plan) - 1, -1, -1):
        total = problem.stage_cost(states[k], plan[k]) + total
    return total, states[-1]


def run_multiagent(problem: ProblemDef, sset, x0, cfg: SolverConfig, horizon: int,
                   partition: AgentPartition, base_policy: Policy,
                   sweeps: int = 2) -> RolloutRun:
    """Rollout with agent-by-agent coordinate descent on the joint plan.

    Each step starts from the better of the base-policy plan and the shifted
    previous plan, then lets every agent re-optimize its own control sequence
    while the others hold theirs fixed, repeated for the given number of
    sweeps. The incumbent only ever improves, so the step value stays at or
    below the base policy's.
    """
    states = [x0]
    controls, stage_costs, values, reports = [], [], [], []
    initial_set_value = sset.terminal_cost(x0)
    prev_plan = None
    prev_terminal = None
    status = "horizon"
    closing = 0.0

    for t in range(horizon):
        x = states[-1]
        if problem.is_stopping(x):
            status = "stopped"
            break
        tc = sset.terminal_cost(x)
        if tc <= cfg.eps_tail:
            status = "closed_in_set"
            closing = tc
            break

        candidates = []
        base_plan = _plan_of_policy(problem, base_policy, x, cfg.ell)
        if base_plan is not None:
            candidates.append(base_plan)
        if prev_plan is not None and prev_terminal is not None:
            candidates.append(tuple(prev_plan[1:])
                              + (base_policy.action(base_view(prev_terminal)),))

        value, plan = INF, None
        for idx, cand in enumerate(candidates):
            v, _ = _eval_plan(problem, sset, x, cand)
            if plan is None or v < value:
                value, plan = v, cand
        if plan is None or value == INF:
            if t == 0:
                raise InitialInfeasibilityError(x)
            raise InfeasibleStepError(t, x)

        sweep_values = [value]
        for _ in range(sweeps):
            for agent in partition.agents:
                def controls_at(state, step, _plan=plan, _agent=agent):
                    opts = partition.options(state, _agent)
                    return FiniteControls(tuple(
                        partition.combine(_plan[step], _agent, o) for o in opts))

                _, rec = _discrete_minimize(problem, sset, x, cfg.ell, controls_at)
                v, ctrl, term, _sid = rec(x, cfg.ell)
                if v < value:
                    value, plan = v, ctrl
            sweep_values.append(value)

        _, terminal = _eval_plan(problem, sset, x, plan)
        u = plan[0]
        g = problem.stage_cost(x, u)
        states.append(problem.dynamics(x, u))
        controls.append(u)
        stage_costs.append(g)
        values.append(value)
        reports.append({"value": value, "sweep_values": tuple(sweep_values)})
        prev_plan, prev_terminal = plan, terminal

    return _finish(states, controls, stage_costs, values, reports, cfg, status,
                   closing, "multiagent", initial_set_value, "multiagent-rollout")
