"""Decision-time planning: best-first tree search over an exact model.

First a three-action toy where every simulation can be followed by hand,
then whole episodes on a gridworld with the optimal Q as leaf estimate.

Run: python3 demos/02_tree_search.py
"""
import numpy as np

from tapgrid import dp_oracle as dp
from tapgrid import gridworld as gw
from tapgrid.mpc_search import BEST_FIRST, RANDOM, plan_episode, tree_search

Q = {0: [0.6, 0.2, 0.5], 1: [0.3, 0.1, 0.2], 2: [0.3, 0.1, 0.0], 3: [0.0, 0.0, 0.0]}
T = {(0, 0): (1, 0.0, False), (0, 2): (2, 0.1, False), (2, 0): (3, 0.3, True)}

res = tree_search(0, range(3), lambda s, a: T.get((s, a), (s, 0.0, False)), lambda s: np.array(Q[s]),
                  gamma=1.0, budget=3)
print("simulated branches:", res.expanded)
print(f"chosen root action a{res.action}, best return {res.value:.1f}")

spec = gw.TaskSpec("rds", 8, 8, 0.35, 5, "abs")
mdp = gw.compile_mdp(gw.generate_task(spec), init="eval")
v, _ = dp.value_iteration(mdp, 0.99)
q = dp.q_from_v(mdp, v, 0.99)
for heuristic in (BEST_FIRST, RANDOM):
    rng = np.random.default_rng(0)
    wins = [plan_episode(mdp, q, rng, budget=15, heuristic=heuristic)["success"] for _ in range(20)]
    print(f"{heuristic:>10}: {np.mean(wins):.0%} of 20 episodes reach the goal")

# a noisy leaf estimate picks a wrong greedy action in a quarter of the states;
# with the depth cap lifted, a large enough budget searches past the noise
noisy = q + np.random.default_rng(1).normal(0, 0.02, q.shape)
live = ~mdp.terminal
agree = np.isclose(q[live].max(1), q[live][np.arange(live.sum()), noisy[live].argmax(1)])
print(f"noisy Q is greedy-optimal in {agree.mean():.0%} of states")
for budget in (1, 10, 50, 200):
    rng = np.random.default_rng(0)
    wins = [plan_episode(mdp, noisy, rng, budget=budget, max_depth=None, max_steps=60)["success"]
            for _ in range(5)]
    print(f"noisy Q, budget {budget:>3}: {np.mean(wins):.0%}")
