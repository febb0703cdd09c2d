import numpy as np
import pytest
from hypothesis import given, strategies as st

from tapgrid import gridworld as gw
from tapgrid.dp_oracle import bfs_distances
from tapgrid.errors import UsageError


def _spec(**kw):
    base = dict(kind="rds", width=6, height=6, difficulty=0.4, seed=0, action_space="abs")
    base.update(kw)
    return gw.TaskSpec(**base)


def test_generation_is_deterministic():
    a = gw.dumps(_spec(seed=7), gw.generate_task(_spec(seed=7)))
    b = gw.dumps(_spec(seed=7), gw.generate_task(_spec(seed=7)))
    assert a == b


def test_json_round_trip():
    spec = _spec(kind="ssm", width=8, height=8, seed=3)
    layout = gw.generate_task(spec)
    spec2, layout2 = gw.from_json(gw.dumps(spec, layout))
    assert spec2 == spec
    assert layout2 == layout


def test_json_has_the_documented_fields():
    import json
    data = json.loads(gw.dumps(_spec(), gw.generate_task(_spec())))
    assert list(data) == ["kind", "width", "height", "difficulty", "seed", "action_space", "action_noise",
                          "lava", "goal", "spawn", "sword", "shield", "monster"]


@pytest.mark.parametrize("bad", [dict(difficulty=1.5), dict(action_noise=-0.1), dict(width=3),
                                 dict(kind="ssm", action_space="tof"), dict(orientation="diagonal")])
def test_invalid_specs_are_rejected(bad):
    with pytest.raises(ValueError):
        _spec(**bad)


@given(seed=st.integers(0, 10_000), difficulty=st.floats(0.0, 1.0), kind=st.sampled_from(["rds", "ssm"]))
def test_goal_is_always_reachable(seed, difficulty, kind):
    spec = _spec(kind=kind, seed=seed, difficulty=difficulty)
    mdp = gw.compile_mdp(gw.generate_task(spec), init="eval")
    start = int(np.flatnonzero(mdp.init)[0])
    d = bfs_distances(mdp, start)
    assert np.isfinite(d[list(mdp.goal_states)]).any()


@given(seed=st.integers(0, 1000), space=st.sampled_from(["tof", "abs", "taf"]),
       noise=st.sampled_from([0.0, 0.1]))
def test_compiled_rows_are_distributions(seed, space, noise):
    mdp = gw.compile_mdp(gw.generate_task(_spec(seed=seed, action_space=space, action_noise=noise)))
    mdp.check()
    assert mdp.n_actions == (3 if space == "tof" else 4)


def test_difficulty_zero_has_no_lava():
    layout = gw.generate_task(_spec(difficulty=0.0))
    assert not layout.lava


def test_lava_ends_the_episode_without_reward():
    layout = gw.GridLayout(4, 4, frozenset({(1, 0)}), goal=(3, 3), spawn=((0, 0),))
    s, r, done = gw.step(layout, gw.EnvState((0, 0)), 0)
    assert done and r == 0.0 and s.pos == (1, 0)


def test_goal_pays_one():
    layout = gw.GridLayout(4, 4, frozenset(), goal=(1, 0), spawn=((0, 0),))
    _, r, done = gw.step(layout, gw.EnvState((0, 0)), 0)
    assert done and r == 1.0


def test_walls_keep_the_agent_in_place():
    layout = gw.GridLayout(4, 4, frozenset(), goal=(3, 3), spawn=((0, 0),))
    s, r, done = gw.step(layout, gw.EnvState((0, 0)), 3)
    assert s.pos == (0, 0) and not done


def test_turn_or_forward_semantics():
    layout = gw.GridLayout(4, 4, frozenset(), goal=(3, 3), spawn=((0, 0),), action_space="tof")
    s0 = gw.EnvState((1, 1), facing=0)
    left, _, _ = gw.step(layout, s0, 0)
    right, _, _ = gw.step(layout, s0, 1)
    fwd, _, _ = gw.step(layout, s0, 2)
    assert (left.pos, left.facing) == ((1, 1), 3)
    assert (right.pos, right.facing) == ((1, 1), 1)
    assert (fwd.pos, fwd.facing) == ((2, 1), 0)


def test_turn_and_forward_semantics():
    layout = gw.GridLayout(5, 5, frozenset(), goal=(4, 4), spawn=((0, 0),), action_space="taf")
    s0 = gw.EnvState((2, 2), facing=0)
    moves = [gw.step(layout, s0, a)[0] for a in range(4)]
    assert [(m.pos, m.facing) for m in moves] == [((3, 2), 0), ((2, 3), 1), ((2, 1), 3), ((1, 2), 2)]


def test_ssm_needs_both_items():
    layout = gw.GridLayout(5, 5, frozenset(), goal=(4, 0), spawn=((0, 0),), sword=(1, 0), shield=(2, 0),
                           monster=(4, 0), kind="ssm")
    s = gw.EnvState((3, 0), sword=True)
    _, r, done = gw.step(layout, s, 0)
    assert done and r == 0.0
    _, r, done = gw.step(layout, gw.EnvState((3, 0), sword=True, shield=True), 0)
    assert done and r == 1.0
    picked, _, _ = gw.step(layout, gw.EnvState((0, 0)), 0)
    assert picked.situation == (1, 0)


def test_noise_requires_rng():
    layout = gw.GridLayout(4, 4, frozenset(), goal=(3, 3), spawn=((0, 0),), action_noise=0.5)
    with pytest.raises(UsageError):
        gw.step(layout, gw.EnvState((0, 0)), 0)


def test_noise_spreads_mass_uniformly():
    layout = gw.GridLayout(4, 4, frozenset(), goal=(3, 3), spawn=((0, 0),), action_noise=0.2)
    mdp = gw.compile_mdp(layout)
    i = mdp.index[gw.encode(layout, gw.EnvState((1, 1)))]
    right = mdp.index[gw.encode(layout, gw.EnvState((2, 1)))]
    assert mdp.P[i, 0, right] == pytest.approx(0.8 + 0.2 / 4)


def test_stepping_from_terminal_is_an_error():
    with pytest.raises(UsageError):
        gw.step(gw.GridLayout(4, 4, goal=(3, 3)), gw.EnvState((3, 3), terminal=True), 0)


def test_render_marks_agent_and_goal():
    layout = gw.GridLayout(4, 4, frozenset({(1, 1)}), goal=(3, 3), spawn=((0, 0),))
    text = gw.render_ascii(layout, gw.EnvState((0, 0)))
    assert text.splitlines() == ["A...", ".L..", "....", "...G"]


def test_env_truncates():
    mdp = gw.compile_mdp(gw.generate_task(_spec(difficulty=0.0)))
    env = gw.GridEnv(mdp, max_steps=2)
    rng = np.random.default_rng(0)
    env.reset(rng, mdp.init)
    flags = [env.step(3, rng) for _ in range(2)]
    assert flags[-1][2] or flags[-1][3]
