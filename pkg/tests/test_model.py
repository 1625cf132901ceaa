import math

import numpy as np
import pytest

from ddrollout import (
    BoxControls,
    CoverageError,
    FiniteControls,
    Policy,
    ProblemDef,
    Trajectory,
    check_fixed_point,
    check_upper_bound,
    simulate_policy,
    trajectory_cost,
    validate_trajectory,
)
from ddrollout.costs import INF
from ddrollout.model import as_value_fn, control_key, state_key, states_equal

from conftest import make_random_instance


def test_states_equal_tolerates_eps_on_vectors():
    a = np.array([1.0, 2.0])
    assert states_equal(a, a + 5e-10)
    assert not states_equal(a, a + 1e-6)
    assert states_equal("A", "A")
    assert not states_equal("A", "B")
    assert states_equal((1, 2), (1, 2))


def test_state_key_distinguishes_kinds():
    # int 1 and vector [1.] must not collide in memo tables
    assert state_key(1) != state_key(np.array([1.0]))
    assert state_key(np.array([1.0, 2.0])) == state_key(np.array([1.0, 2.0]))
    assert control_key("up") == "up"


def test_box_controls_project_and_contain():
    box = BoxControls(np.array([-1.0]), np.array([1.0]))
    assert box.contains(np.array([0.3]))
    assert not box.contains(np.array([1.5]))
    assert box.project(np.array([2.0]))[0] == 1.0


def test_finite_controls_membership():
    fc = FiniteControls(("a", "b"))
    assert fc.contains("a")
    assert not fc.contains("z")


def test_simulate_policy_terminates_and_backfills_tails():
    problem, base, n, _ = make_random_instance(3)
    traj = simulate_policy(problem, base, n - 1)
    assert traj.terminated_in_stopping_set
    assert traj.states[-1] == 0
    assert traj.tail_costs[-1] == 0.0
    # tail recursion identity holds exactly by construction
    for k in range(len(traj)):
        assert traj.tail_costs[k] == traj.stage_costs[k] + traj.tail_costs[k + 1]
    assert trajectory_cost(traj) == traj.tail_costs[0]
    validate_trajectory(problem, traj)


def test_simulate_policy_without_stopping_has_no_tails():
    problem = ProblemDef(
        dynamics=lambda x, u: x,
        stage_cost=lambda x, u: 1.0,
        control_set=lambda x: FiniteControls((0,)),
    )
    loop = Policy(action=lambda x: 0, id="loop")
    traj = simulate_policy(problem, loop, "s", max_steps=5)
    assert not traj.terminated_in_stopping_set
    assert traj.tail_costs is None
    assert trajectory_cost(traj) == 5.0


def test_trajectory_shape_is_validated():
    with pytest.raises(ValueError):
        Trajectory(states=("a",), controls=(0,), stage_costs=(1.0,),
                   policy_id="p", terminated_in_stopping_set=False)


def test_as_value_fn_mapping_raises_on_missing_state():
    fn = as_value_fn({0: 0.0, 1: 2.5})
    assert fn(1) == 2.5
    with pytest.raises(CoverageError):
        fn(99)


def _chain_problem():
    # 2 -> 1 -> 0 with unit costs, 0 absorbing and free
    problem = ProblemDef(
        dynamics=lambda x, u: max(x - 1, 0),
        stage_cost=lambda x, u: 0.0 if x == 0 else 1.0,
        control_set=lambda x: FiniteControls((0,)),
        stopping_predicate=lambda x: x == 0,
    )
    return problem, Policy(action=lambda x: 0, id="down")


def test_check_fixed_point_accepts_the_true_cost():
    problem, policy = _chain_problem()
    report = check_fixed_point(problem, policy, {0: 0.0, 1: 1.0, 2: 2.0}, [1, 2])
    assert report.passed and not report.failures


def test_check_fixed_point_flags_a_perturbed_value():
    problem, policy = _chain_problem()
    report = check_fixed_point(problem, policy, {0: 0.0, 1: 1.0, 2: 2.3}, [1, 2])
    assert not report.passed
    assert [r.state for r in report.failures] == [2]


def test_check_upper_bound_accepts_slack_and_rejects_optimism():
    problem, policy = _chain_problem()
    # inflated values are a valid upper bound, deflated ones are not
    assert check_upper_bound(problem, policy, {0: 0.0, 1: 1.5, 2: 3.0}, [1, 2]).passed
    assert not check_upper_bound(problem, policy, {0: 0.0, 1: 1.0, 2: 1.5}, [1, 2]).passed


def test_check_handles_infinite_values():
    problem, policy = _chain_problem()
    # both sides infinite agree; finite claim backed by an infinite successor fails
    report = check_fixed_point(problem, policy, {0: 0.0, 1: INF, 2: INF}, [2])
    assert report.passed
    report = check_fixed_point(problem, policy, {0: 0.0, 1: INF, 2: 5.0}, [2])
    assert not report.passed
    assert math.isinf(report.rows[0].residual)
