"""Generate a small RandDistShift task, look at it, and read off exact ground truths.

Run: python3 demos/01_oracle_tour.py
"""
import numpy as np

from tapgrid import dp_oracle as dp
from tapgrid import gridworld as gw

spec = gw.TaskSpec("rds", 6, 6, difficulty=0.35, seed=3, action_space="abs")
layout = gw.generate_task(spec)
mdp = gw.compile_mdp(layout, init="eval")
start = int(np.flatnonzero(mdp.init)[0])
print(gw.render_ascii(layout, mdp.states[start]))
print(f"{mdp.n_states} states, {mdp.n_actions} actions, goal state {mdp.goal_states[0]}")

# optimal values are a discount raised to the shortest-path length
v, pi = dp.value_iteration(mdp, 0.99)
bfs = dp.bfs_distances(mdp, start)[mdp.goal_states[0]]
print(f"v*(start) = {v[start]:.6f}; 0.99^(BFS - 1) = {0.99 ** (bfs - 1):.6f}")

# pairwise hitting times under the goal-reaching policy
pol = dp.goal_conditioned_policy(mdp)
D, never = dp.pairwise_distance(mdp, pol)
reach = np.isfinite(D[start])
print(f"from the start {reach.sum()} states are reachable, mean distance {D[start, reach].mean():.2f}")

# the first few rows of the oracle table written by `tapgrid solve`
print("\n".join(dp.oracle_csv(mdp, pol, 0.99).splitlines()[:6]))

# SSM: items are never dropped, so states without them become unreachable
ssm = gw.compile_mdp(gw.generate_task(gw.TaskSpec("ssm", 6, 6, 0.3, 1, "abs")))
armed = next(s for s, e in enumerate(ssm.encodings) if not ssm.terminal[s] and e[3:5] == (1, 1))
bare = next(s for s, e in enumerate(ssm.encodings) if not ssm.terminal[s] and e[3:5] == (0, 0))
print("armed -> bare:", dp.classify_target(ssm, armed, ssm.encodings[bare]).value)
print("bare -> armed:", dp.classify_target(ssm, bare, ssm.encodings[armed]).value)
print("off-grid encoding:", dp.classify_target(ssm, bare, (9, 9, -1, 0, 0, 0)).value)
