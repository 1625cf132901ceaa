import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddrollout import (
    AnalyticSampleSet,
    ExplicitSampleSet,
    Policy,
    SampleEntry,
    UnusableTrajectoryError,
    build_from_trajectory,
    merge,
    simulate_policy,
    verify_invariance,
)
from ddrollout.costs import INF
from ddrollout.model import Trajectory

from conftest import make_random_instance


def _base_set(seed, start=None):
    problem, base, n, _ = make_random_instance(seed)
    traj = simulate_policy(problem, base, start if start is not None else n - 1)
    return problem, base, build_from_trajectory(traj, label="run")


def test_built_set_records_cost_to_go_and_successors():
    problem, base, sset = _base_set(11)
    for e in sset.entries():
        if e.state == 0:
            assert e.value == 0.0
            assert e.successor == 0  # recorded fixed point at the stop state
        else:
            succ = sset.lookup(e.successor)
            assert succ is not None
            assert e.value == problem.stage_cost(e.state, 0) + succ.value


def test_build_requires_tail_costs():
    traj = Trajectory(states=(2, 1), controls=(0,), stage_costs=(1.0,),
                      policy_id="p", terminated_in_stopping_set=False)
    with pytest.raises(UnusableTrajectoryError):
        build_from_trajectory(traj)


def test_vector_lookup_tolerates_eps_perturbation():
    e = SampleEntry(np.array([1.0, -2.0]), 3.0, "p", np.array([1.0, -2.0]))
    sset = ExplicitSampleSet([e], label="one")
    assert sset.contains(np.array([1.0, -2.0]) + 2e-10)
    assert not sset.contains(np.array([1.0, -2.0]) + 1e-6)
    assert sset.terminal_cost(np.array([5.0, 5.0])) == INF


def test_duplicate_states_rejected():
    e = SampleEntry("A", 1.0, "p", "A")
    with pytest.raises(ValueError):
        ExplicitSampleSet([e, e], label="dup")


def test_merge_keeps_pointwise_minimum_with_earliest_tie():
    a = ExplicitSampleSet([SampleEntry("x", 5.0, "p1", "x"),
                           SampleEntry("y", 2.0, "p1", "y")], label="a")
    b = ExplicitSampleSet([SampleEntry("x", 3.0, "p2", "x"),
                           SampleEntry("y", 2.0, "p2", "y"),
                           SampleEntry("z", 1.0, "p2", "z")], label="b")
    m = merge([a, b])
    assert m.terminal_cost("x") == 3.0 and m.lookup("x").policy_id == "p2"
    # tie at y: the earliest argument wins
    assert m.lookup("y").policy_id == "p1"
    assert m.terminal_cost("z") == 1.0
    assert set(m.policy_ids) == {"p1", "p2"}


def test_merge_never_raises_values():
    problem, base, n, _ = make_random_instance(21)
    t1 = simulate_policy(problem, base, n - 1)
    t2 = simulate_policy(problem, base, n // 2)
    s1 = build_from_trajectory(t1, label="one")
    m = merge([s1, build_from_trajectory(t2, label="two")])
    for e in s1.entries():
        assert m.terminal_cost(e.state) <= e.value


def test_invariance_passes_on_base_built_sets():
    problem, base, sset = _base_set(5)
    report = verify_invariance(problem, base, sset)
    assert report.passed
    assert report.checked == len(sset)


def test_invariance_detects_a_broken_successor():
    problem, base, sset = _base_set(5)
    entries = list(sset.entries())
    victim = next(e for e in entries if e.state != 0)
    entries[entries.index(victim)] = SampleEntry(
        victim.state, victim.value, victim.policy_id, successor=victim.state)
    broken = ExplicitSampleSet(entries, label="broken")
    report = verify_invariance(problem, base, broken)
    assert not report.passed
    assert any(v.reason == "recorded successor mismatch" for v in report.violations)


def test_invariance_requires_a_policy_per_id():
    problem, base, sset = _base_set(5)
    with pytest.raises(KeyError):
        verify_invariance(problem, {"other": base}, sset)
    with pytest.raises(TypeError):
        verify_invariance(problem, [base], sset)


def test_analytic_set_membership_and_sampled_invariance():
    # closed disk under a linear contraction: invariant and quadratic-valued
    p = np.eye(2) * 2.0
    a = np.eye(2) * 0.5
    problem_dyn = lambda x, u: a @ x

    sset = AnalyticSampleSet(
        label="disk",
        policy_id="contract",
        contains_fn=lambda x: float(x @ x) <= 1.0 + 1e-12,
        value_fn=lambda x: float(x @ p @ x),
        sample_member=lambda rng: _disk_point(rng),
        quadratic=p,
    )
    from ddrollout import ProblemDef

    problem = ProblemDef(dynamics=problem_dyn, stage_cost=lambda x, u: 0.0,
                         control_set=lambda x: None)
    pol = Policy(action=lambda x: None, id="contract")
    report = verify_invariance(problem, pol, sset, samples=200)
    assert report.passed and report.sampled
    assert sset.contains(np.zeros(2))
    assert not sset.contains(np.array([2.0, 0.0]))
    assert sset.terminal_cost(np.array([0.5, 0.0])) == 0.5


def _disk_point(rng):
    while True:
        x = rng.uniform(-1.0, 1.0, size=2)
        if float(x @ x) <= 1.0:
            return x


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_any_base_built_set_is_invariant(seed):
    problem, base, n, _ = make_random_instance(seed)
    traj = simulate_policy(problem, base, n - 1)
    sset = build_from_trajectory(traj)
    assert verify_invariance(problem, base, sset).passed
