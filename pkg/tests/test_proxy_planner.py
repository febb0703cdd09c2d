import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tapgrid.agents import random_replay
from tapgrid.estimators import GoalLearners
from tapgrid.gridworld import TaskSpec
from tapgrid.proxy_planner import (
    build_proxy,
    kmedoids,
    kmedoids_prune,
    prune_edges,
    smdp_value_iteration,
    symmetric_truncated,
)
from tapgrid.replay import PRESETS
from tapgrid.target_generator import GeneratorConfig, TargetGenerator, make_task


def _points(rng, n):
    x = rng.normal(size=(n, 2))
    return np.linalg.norm(x[:, None] - x[None], axis=-1)


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(5, 25), k=st.integers(1, 5))
def test_forced_medoid_survives_and_cost_never_rises(seed, n, k):
    rng = np.random.default_rng(seed)
    d = _points(rng, n)
    forced = [int(rng.integers(n))]
    res = kmedoids(d, k, forced)
    assert forced[0] in res.medoids
    assert len(res.medoids) == min(k, n)
    assert all(b <= a + 1e-12 for a, b in zip(res.cost_history, res.cost_history[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_matches_exhaustive_search(seed):
    d = _points(np.random.default_rng(seed), 12)
    best = min(d[:, list(c)].min(1).sum() for c in itertools.combinations(range(12), 3))
    assert kmedoids(d, 3).cost == pytest.approx(best)


def test_prune_keeps_candidates_when_few():
    assert kmedoids_prune(["a", "b"], np.zeros((2, 2)), 5) == ["a", "b"]


def test_symmetric_truncation():
    D = np.array([[0.0, 30.0], [2.0, 0.0]])
    assert np.array_equal(symmetric_truncated(D, 16), [[0.0, 2.0], [2.0, 0.0]])


def test_smdp_value_iteration_picks_best_hop():
    # 0 -> 1 pays 0.2 with discount 0.9; 0 -> 2 pays 0 but 2 -> 1... 1 is the goal
    R = np.array([[0.0, 0.2, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    G = np.array([[0.0, 0.9, 0.9], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    pruned = np.zeros((3, 3), dtype=bool)
    plan = smdp_value_iteration(R, G, pruned, iterations=None)
    assert plan.selected == 2
    assert plan.q0[2] == pytest.approx(0.9)
    assert smdp_value_iteration(R, G, prune_edges(np.full((3, 3), 10.0))).selected is None


def test_build_proxy_keeps_goal_and_respects_k():
    ctx = make_task(TaskSpec("rds", 6, 6, 0.25, 0, "abs"))
    rng = np.random.default_rng(0)
    replay = random_replay([ctx], 100, rng)
    learners = GoalLearners(ctx.mdp.n_states, 4, ctx.space)
    for _ in range(50):
        learners.update(replay.sample_training_batch(0, PRESETS["e"], 512, rng))
    s = int(np.flatnonzero(ctx.mdp.init)[0])
    gen = TargetGenerator(GeneratorConfig(0.0, 0.0))
    proxy = build_proxy(ctx, s, gen, learners, rng, replay, k=5)
    assert proxy.tags[0] == "current" and len(proxy) <= 6
    assert ctx.mdp.encodings[ctx.goal_state] in proxy.encodings
    assert proxy.R.shape == proxy.Gamma.shape == proxy.pruned.shape == (len(proxy), len(proxy))
    assert (proxy.Gamma[:, 0] == 0).all()
    import json
    data = json.loads(proxy.to_json())
    assert set(data) == {"vertices", "R", "Gamma", "D", "pruned"}
