import numpy as np
import pytest

from tapgrid import dp_oracle as dp
from tapgrid import gridworld as gw
from tapgrid.mpc_search import BEST_FIRST, RANDOM, exact_model, plan_episode, tree_search

# A three-action instance that plays out the documented best-first example:
# the root prefers a0, its child is worse than the root's a2, a2 leads to s2
# whose a0 reaches a terminal with cumulative return 0.4.
WALK_Q = {0: [0.6, 0.2, 0.5], 1: [0.3, 0.1, 0.2], 2: [0.3, 0.1, 0.0], 3: [0.0, 0.0, 0.0]}
WALK_T = {(0, 0): (1, 0.0, False), (0, 2): (2, 0.1, False), (2, 0): (3, 0.3, True)}


def walk_model(s, a):
    return WALK_T.get((s, a), (s, 0.0, False))


def walkthrough():
    return tree_search(0, range(3), walk_model, lambda s: np.array(WALK_Q[s]), 1.0, 3, BEST_FIRST)


def test_walkthrough_order_and_answer():
    res = walkthrough()
    assert res.expanded == [(0, 0), (0, 2), (2, 0)]
    assert res.model_calls == 3
    assert res.action == 2
    assert res.value == pytest.approx(0.4)


def test_budget_bounds_model_calls():
    calls = []

    def model(s, a):
        calls.append((s, a))
        return s + 1, 0.0, False

    res = tree_search(0, range(2), model, lambda s: np.zeros(2), 0.9, 7, max_depth=None)
    assert res.model_calls == 7 == len(calls)


def test_random_heuristic_needs_rng():
    with pytest.raises(ValueError):
        tree_search(0, range(3), walk_model, lambda s: np.array(WALK_Q[s]), 1.0, 3, RANDOM)
    with pytest.raises(ValueError):
        tree_search(0, range(3), walk_model, lambda s: np.array(WALK_Q[s]), 1.0, 0)


def test_priority_does_not_change_the_final_comparison():
    # a budget that exhausts the depth-2 tree leaves both heuristics with the same leaves
    q = lambda s: np.array(WALK_Q[s])
    best = tree_search(0, range(3), walk_model, q, 1.0, 50, BEST_FIRST, max_depth=2)
    for seed in range(5):
        rnd = tree_search(0, range(3), walk_model, q, 1.0, 50, RANDOM, np.random.default_rng(seed), max_depth=2)
        assert (rnd.action, rnd.value) == (best.action, pytest.approx(best.value))


def test_mpc_with_exact_model_reaches_goal():
    spec = gw.TaskSpec("rds", 6, 6, 0.25, 1, "abs")
    mdp = gw.compile_mdp(gw.generate_task(spec), init="eval")
    v, _ = dp.value_iteration(mdp, 0.99)
    q = dp.q_from_v(mdp, v, 0.99)
    out = plan_episode(mdp, q, np.random.default_rng(0), budget=15)
    assert out["success"]
    assert exact_model(mdp)(out["states"][-2], out["actions"][-1])[2]
