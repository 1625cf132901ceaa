"""Closed-loop behavior: descent, statuses, disturbance handling, agents."""

from dataclasses import replace

import numpy as np
import pytest

from ddrollout import (
    SolverConfig,
    run_classical_mpc,
    run_multiagent,
    run_rollout,
    run_with_disturbance,
)
from ddrollout.budget import AugmentedState
from ddrollout.costs import INF

from conftest import make_random_instance, nested_pair


def _vals_descend_exactly(run):
    vals = run.per_step_values
    return all(vals[k + 1] <= vals[k] for k in range(len(vals) - 1))


def test_discrete_rollout_descends_and_stops(grid):
    policy = next(iter(grid.base_policies.values()))
    sset = grid.sample_sets["trajectory"]
    cfg = replace(grid.solver_defaults, ell=2)
    run = run_rollout(grid.problem, sset, grid.start_states[0], cfg, 60,
                      base_policy=policy)
    assert run.status == "stopped"
    assert run.trajectory.terminated_in_stopping_set
    assert _vals_descend_exactly(run)
    assert run.total_cost <= grid.notes["base_cost"]


def test_random_instance_rollout_matches_certified_chain():
    problem, base, n, _ = make_random_instance(41)
    _, sset = nested_pair(problem, base, n, 41)
    cfg = replace(SolverConfig(), ell=2, backend="discrete")
    for x0 in (n - 1, n // 2):
        if sset.terminal_cost(x0) == INF:
            continue
        run = run_rollout(problem, sset, x0, cfg, 400, base_policy=base)
        assert run.status == "stopped"
        assert _vals_descend_exactly(run)
        # realized <= first lookahead value <= certified set value
        assert run.total_cost <= run.per_step_values[0] <= sset.terminal_cost(x0)


def test_spiral_rollout_closes_inside_the_disk(spiral):
    policy = next(iter(spiral.base_policies.values()))
    cfg = replace(spiral.solver_defaults, ell=5)
    run = run_rollout(spiral.problem, spiral.sample_sets["disk"],
                      np.array([1.0, 1.0]), cfg, 60, base_policy=policy)
    assert run.status == "closed_in_set"
    # the closing tail is the disk's recorded cost at the final state
    final = run.trajectory.states[-1]
    assert run.closing_tail == pytest.approx(
        spiral.sample_sets["disk"].terminal_cost(final), rel=1e-12)
    vals = run.per_step_values
    for k in range(len(vals) - 1):
        assert vals[k + 1] <= vals[k] + 1e-6 * max(1.0, abs(vals[k]))
    assert run.total_cost <= spiral.notes["base_costs"][(1.0, 1.0)]


def test_disturbance_inside_coverage_recovers(spiral):
    policy = next(iter(spiral.base_policies.values()))
    cfg = replace(spiral.solver_defaults, ell=5)
    bump = lambda t, x: x + np.array([0.5, -0.5]) if t == 3 else x
    run = run_with_disturbance(spiral.problem, spiral.sample_sets["disk"],
                               np.array([1.0, 1.0]), cfg, 60, bump,
                               base_policy=policy)
    assert run.status in ("closed_in_set", "stopped", "horizon")
    assert run.total_cost < INF
    assert run.variant == "disturbance"


def test_disturbance_outside_coverage_flags_instead_of_crashing(spiral):
    policy = next(iter(spiral.base_policies.values()))
    cfg = replace(spiral.solver_defaults, ell=5)
    kick = lambda t, x: x + np.array([100.0, 100.0]) if t == 3 else x
    run = run_with_disturbance(spiral.problem, spiral.sample_sets["disk"],
                               np.array([1.0, 1.0]), cfg, 60, kick,
                               base_policy=policy)
    assert run.status == "infeasible_after_disturbance"
    # costs up to the flagged step are still reported
    assert run.total_cost < INF
    assert len(run.trajectory.controls) >= 3


def test_classical_mpc_free_terminal_runs_the_integrator(integrator):
    cfg = replace(integrator.solver_defaults, ell=8)
    run = run_classical_mpc(integrator.problem, integrator.start_states[0],
                            cfg, 60, terminal="free",
                            terminal_quadratic=integrator.mpc_quadratic)
    assert run.status == "horizon"
    assert run.variant == "classical-mpc"
    assert run.total_cost < integrator.notes["base_cost"]


def test_classical_mpc_rejects_unknown_terminal(integrator):
    with pytest.raises(ValueError):
        run_classical_mpc(integrator.problem, integrator.start_states[0],
                          integrator.solver_defaults, 10, terminal="nonsense")


def test_multiagent_never_loses_to_the_base_policy(grid):
    policy = next(iter(grid.base_policies.values()))
    cfg = replace(grid.solver_defaults, ell=2)
    run = run_multiagent(grid.problem, grid.sample_sets["trajectory"],
                         grid.start_states[0], cfg, 40, grid.partition, policy)
    assert run.status == "stopped"
    assert run.total_cost <= grid.notes["base_cost"]
    assert _vals_descend_exactly(run)


def test_multiagent_any_sweep_count_beats_base(grid):
    # closed-loop cost is not monotone in sweeps, but the per-run guarantee
    # against the base policy holds for every sweep count
    policy = next(iter(grid.base_policies.values()))
    cfg = replace(grid.solver_defaults, ell=2)
    for sweeps in (1, 2, 3):
        run = run_multiagent(grid.problem, grid.sample_sets["trajectory"],
                             grid.start_states[0], cfg, 40, grid.partition,
                             policy, sweeps=sweeps)
        assert run.total_cost <= grid.notes["base_cost"]


def test_budget_run_tracks_the_head_exactly(integrator):
    policy = next(iter(integrator.base_policies.values()))
    cfg = replace(integrator.solver_defaults, ell=5)
    cap = integrator.budget_spec.e_max
    run = run_rollout(integrator.augmented_problem,
                      integrator.augmented_sets["budget"],
                      AugmentedState(integrator.start_states[0], cap),
                      cfg, 12, base_policy=policy)
    xs = run.trajectory.states
    for k, u in enumerate(run.trajectory.controls):
        spent = float(np.asarray(u) @ np.asarray(u))
        assert xs[k + 1].info == xs[k].info - spent  # bit-exact bookkeeping
    assert xs[-1].info >= 0.0
