import numpy as np
import pytest

from tapgrid.experiments import PairedComparison, ball, reduction_case, reduction_experiment, set_feasibility_true, two_sample_p
from tapgrid.gridworld import TaskSpec
from tapgrid.target_generator import make_task


def test_two_sample_p():
    assert two_sample_p([1, 1, 1], [1, 1, 1]) == 1.0
    assert two_sample_p([0, 0.1, 0.05, 0.02], [5, 5.1, 4.9, 5.05]) < 1e-3


def test_paired_comparison_separation():
    c = PairedComparison(np.array([0.0, 0.01, 0.02]), np.array([0.5, 0.52, 0.48]))
    assert c.separated and c.ratio < 0.1


def test_reduction_case_parts_are_disjoint_from_sources():
    ctx = make_task(TaskSpec("ssm", 6, 6, 0.3, 1, "abs"))
    case = reduction_case(ctx, np.random.default_rng(1))
    assert case is not None
    assert (case.reduced <= case.mixed).all() and case.reduced.sum() < case.mixed.sum()
    assert case.sources.size > 0


def test_set_feasibility_of_a_ball_is_one_from_inside_neighbours():
    ctx = make_task(TaskSpec("ssm", 6, 6, 0.3, 1, "abs"))
    live = np.flatnonzero(~ctx.mdp.terminal)
    members = ball(ctx.mdp, [live[0]])
    pol = np.full((ctx.mdp.n_states, 4), 0.25)
    u = set_feasibility_true(ctx.mdp, pol, members, 1)
    assert u[live[0]] == pytest.approx(1.0)


def test_reduction_experiment_small():
    out = reduction_experiment(1, sweeps=200)
    assert out["sources"] > 0
    assert out["gap"] <= 0.02
