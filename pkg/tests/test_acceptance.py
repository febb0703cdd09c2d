"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line that the session summary prints (see
conftest.py); run ``pytest tests/test_acceptance.py -v`` to see them. The
thresholds here are the agreed ones and must not be loosened.
"""
import dataclasses
import itertools
import subprocess
import sys
import time

import numpy as np
import pytest

from tapgrid import dp_oracle as dp
from tapgrid import gridworld as gw
from tapgrid.distributional import Histogram, distance_support, expectation, support_swap_to_discount
from tapgrid.estimators import GoalLearners, TablePolicy
from tapgrid.experiments import (
    delusion_comparison,
    dyna_comparison,
    exhaustive_batch,
    feasibility_experiment,
    reduction_experiment,
    two_sample_p,
)
from tapgrid.mdp import random_mdp, random_policy
from tapgrid.metrics import bound_check, mean_ci
from tapgrid.mpc_search import BEST_FIRST, exact_model, tree_search
from tapgrid.proxy_planner import kmedoids
from tapgrid.target_generator import singleton_space

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

SEEDS_20 = range(20)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def open_grid(difficulty: float, seed: int = 0):
    return gw.compile_mdp(gw.generate_task(gw.TaskSpec("rds", 6, 6, difficulty, seed, "abs")))


# ---------------------------------------------------------------------------


def test_1_oracle_consistency():
    rng = np.random.default_rng(1)
    worst_gap, worst_ratio = 0.0, 0.0
    with Timer() as tm:
        for _ in range(100):
            mdp = random_mdp(int(rng.integers(2, 51)), int(rng.integers(1, 5)), rng)
            gamma = float(rng.uniform(0.5, 0.99))
            pi = random_policy(mdp, rng)
            exact = dp.policy_evaluation_exact(mdp, pi, gamma)
            it = dp.policy_evaluation_iterative(mdp, pi, gamma, tol=1e-10)
            worst_gap = max(worst_gap, float(np.max(np.abs(exact - it))))
            for _ in range(5):
                u, v = rng.normal(size=(2, mdp.n_states)) * 10
                num = np.max(np.abs(dp.bellman_operator(mdp, pi, u, gamma) - dp.bellman_operator(mdp, pi, v, gamma)))
                worst_ratio = max(worst_ratio, num / np.max(np.abs(u - v)) / gamma)
    ok = worst_gap <= 1e-8 and worst_ratio <= 1 + 1e-12 and tm.seconds < 10
    record(1, ok, f"max |exact - iterative| = {worst_gap:.2e}, max ratio / gamma = {worst_ratio:.4f}, "
                  f"{tm.seconds:.1f}s")
    assert ok


def test_2_value_iteration():
    mdp = open_grid(0.0)
    v, pi = dp.value_iteration(mdp, 0.99, tol=1e-12)
    goal = mdp.goal_states[0]
    err, bad = 0.0, 0
    nxt = np.argmax(mdp.P, axis=2)
    for s in np.flatnonzero(~mdp.terminal):
        d = dp.bfs_distances(mdp, s)[goal]
        err = max(err, abs(v[s] - 0.99 ** (d - 1)))
        s2 = nxt[s, int(np.argmax(pi[s]))]
        if not (s2 == goal and d == 1) and dp.bfs_distances(mdp, int(s2))[goal] != d - 1:
            bad += 1
    ok = err <= 1e-9 and bad == 0
    record(2, ok, f"max |v - 0.99^(BFS-1)| = {err:.2e}, non-BFS-optimal greedy states = {bad}")
    assert ok


def test_3_tree_search():
    from test_mpc_search import walkthrough

    with Timer() as tm:
        walk = walkthrough()
        walk_ok = walk.action == 2 and abs(walk.value - 0.4) < 1e-12 and walk.expanded == [(0, 0), (0, 2), (2, 0)]
        match = total = 0
        for seed in range(5):
            mdp = open_grid(0.25, seed)
            v, _ = dp.value_iteration(mdp, 0.99, tol=1e-12)
            q = dp.q_from_v(mdp, v, 0.99)
            model = exact_model(mdp)
            for s in np.flatnonzero(~mdp.terminal):
                a = tree_search(int(s), range(mdp.n_actions), model, lambda x: q[x], 0.99, 15, BEST_FIRST).action
                match += q[s, a] >= q[s].max() - 1e-9
                total += 1
    rate = match / total
    ok = walk_ok and rate >= 0.99 and tm.seconds < 30
    record(3, ok, f"walkthrough root action a{walk.action} value {walk.value:.1f}; "
                  f"DP-optimal match {match}/{total} = {rate:.2%}, {tm.seconds:.1f}s")
    assert ok


def test_4_update_rule_fixed_points():
    with Timer() as tm:
        mdp = open_grid(0.0)
        pol = dp.goal_conditioned_policy(mdp)
        learners = GoalLearners(mdp.n_states, mdp.n_actions, singleton_space(mdp), gamma=0.99,
                                fixed_policy=TablePolicy(pol))
        batch = exhaustive_batch(mdp, mdp.n_states)
        # the 0.1 step-size floor contracts rewards by 1 - 0.1 (1 - gamma) per sweep
        for _ in range(5000):
            learners.update(batch)
        D, _ = dp.pairwise_distance(mdp, pol)
        V, _ = dp.pairwise_reward_discount(mdp, pol, 0.99)
        live = np.flatnonzero(~mdp.terminal)
        S, G = (x.ravel() for x in np.meshgrid(live, np.arange(mdp.n_states), indexing="ij"))
        d_hat = learners.distance.marginal(S, G, learners.policy) @ learners.distance.support
        v_hat = learners.reward.marginal(S, G, learners.policy) @ learners.reward.support
        finite = D[S, G] < learners.distance.n_bins
        d_err = float(np.abs(d_hat - D[S, G])[finite].max())
        v_err = float(np.abs(v_hat - V[S, G]).max())
    ok = d_err <= 0.01 and v_err <= 0.01 and tm.seconds < 120
    record(4, ok, f"max distance error {d_err:.2e} over {finite.sum()} pairs, max reward error {v_err:.2e}, "
                  f"{tm.seconds:.1f}s")
    assert ok


def test_5_support_swap():
    rng = np.random.default_rng(5)
    sup = distance_support(16)
    worst = 0.0
    for _ in range(1000):
        h = Histogram(sup, rng.dirichlet(rng.uniform(0.1, 2.0, 16)))
        gamma = float(rng.uniform(0.5, 0.999))
        direct = sum(h.probs[t - 1] * gamma ** t for t in range(1, 16))
        worst = max(worst, abs(support_swap_to_discount(h, gamma) - direct))
    p = np.zeros(16)
    p[0] = p[2] = 0.5
    witness = Histogram(sup, p)
    swap, naive = support_swap_to_discount(witness, 0.9), 0.9 ** expectation(witness)
    ok = worst <= 1e-12 and abs(swap - 0.8145) < 1e-12 and abs(naive - 0.81) < 1e-12
    record(5, ok, f"max swap error {worst:.1e}; witness E[0.9^D] = {swap:.4f} vs 0.9^E[D] = {naive:.2f}")
    assert ok


def test_6_kmedoids():
    rng = np.random.default_rng(6)
    kept = monotone = exhaustive = 0
    with Timer() as tm:
        for _ in range(100):
            n = int(rng.integers(6, 30))
            x = rng.normal(size=(n, 2))
            d = np.linalg.norm(x[:, None] - x[None], axis=-1)
            goal = int(rng.integers(n))
            res = kmedoids(d, int(rng.integers(1, 6)), forced=[goal])
            kept += goal in res.medoids
            monotone += all(b <= a + 1e-12 for a, b in zip(res.cost_history, res.cost_history[1:]))
        for _ in range(20):
            x = rng.normal(size=(12, 2))
            d = np.linalg.norm(x[:, None] - x[None], axis=-1)
            best = min(d[:, list(c)].min(1).sum() for c in itertools.combinations(range(12), 3))
            exhaustive += abs(kmedoids(d, 3).cost - best) <= 1e-9
    ok = kept == 100 and monotone == 100 and exhaustive == 20 and tm.seconds < 10
    record(6, ok, f"goal kept {kept}/100, monotone cost {monotone}/100, exhaustive optimum {exhaustive}/20, "
                  f"{tm.seconds:.1f}s")
    assert ok


def test_7_bound():
    with Timer() as tm:
        trials = bound_check(50, 0.9, 1e-4, 1e-4, seed=7)
        zero = bound_check(50, 0.9, 0.0, 0.0, seed=7)
    within = sum(t.ok for t in trials)
    zero_err = max(t.error for t in zero)
    ok = within == 50 and zero_err <= 1e-9 and tm.seconds < 60
    record(7, ok, f"{within}/50 within bound (max error/bound {max(t.ratio for t in trials):.3g}), "
                  f"zero-error case {zero_err:.1e}, {tm.seconds:.1f}s")
    assert ok


EVALUATOR_SEEDS = range(3)


def test_8_feasibility_rejection():
    with Timer() as tm:
        epg = [feasibility_experiment(s, "epg") for s in EVALUATOR_SEEDS]
        epi = [feasibility_experiment(s, "e") for s in EVALUATOR_SEEDS]
        comp = delusion_comparison(SEEDS_20)
    e1 = float(np.mean([r.e1 for r in epg]))
    e2 = float(np.mean([r.e2 for r in epg]))
    e2_episode = float(np.mean([r.e2 for r in epi]))
    _, diff_lo, _ = mean_ci(comp.control - comp.treated)
    ok_eval = e1 <= 0.5 and e2 <= 0.5 and e2_episode >= 5
    ok_gate = comp.ratio < 0.2 and comp.separated and diff_lo > 0
    ok = ok_eval and ok_gate and tm.seconds < 20 * 60
    m_t, lo_t, hi_t = comp.ci("treated")
    m_c, lo_c, hi_c = comp.ci("control")
    record(8, ok, f"EPG E1 {e1:.3f} E2 {e2:.3f}, episode-only E2 {e2_episode:.2f}; delusion gated "
                  f"{m_t:.3f} [{lo_t:.3f}, {hi_t:.3f}] vs ungated {m_c:.3f} [{lo_c:.3f}, {hi_c:.3f}] "
                  f"(ratio {comp.ratio:.3f}), {tm.seconds / 60:.1f} min")
    assert ok


def test_9_dyna_plus():
    with Timer() as tm:
        noisy = dyna_comparison(SEEDS_20, 0.1)
        clean = dyna_comparison(SEEDS_20, 0.0)
    p = two_sample_p(clean.treated, clean.control)
    ok = noisy.ratio <= 0.5 and p > 0.05 and tm.seconds < 10 * 60
    record(9, ok, f"10% injection: Dyna+ {noisy.treated.mean():.3f} vs Dyna {noisy.control.mean():.3f} "
                  f"(ratio {noisy.ratio:.3f}); 0% injection p = {p:.3f}, {tm.seconds / 60:.1f} min")
    assert ok


def test_10_feasibility_reduction():
    with Timer() as tm:
        runs = [reduction_experiment(seed) for seed in range(12)]
    used = [r for r in runs if r["sources"] > 0]
    gap = max(r["gap"] for r in used)
    oracle = max(r["oracle_gap"] for r in used)
    ok = len(used) >= 5 and gap <= 0.02 and tm.seconds < 5 * 60
    record(10, ok, f"{len(used)} instances, max mixed-vs-reduced gap {gap:.2e} "
                   f"(max learned-vs-exact {oracle:.1e}), {tm.seconds:.1f}s")
    assert ok


CLI_RUNS = [
    ("gen", "--env", "rds", "--size", "12", "12", "--difficulty", "0.4", "--seed", "7"),
    ("gen", "--env", "ssm", "--size", "8", "8", "--seed", "3"),
    ("solve", "--env", "rds", "--size", "6", "6", "--difficulty", "0.25", "--seed", "1"),
    ("train", "--agent", "skipper-regen", "--env", "ssm", "--size", "6", "6", "--steps", "600", "--seed", "2"),
    ("train", "--agent", "dyna-plus", "--env", "rds", "--size", "6", "6", "--steps", "1000", "--seed", "4"),
    ("train", "--agent", "q", "--env", "rds", "--size", "6", "6", "--steps", "500", "--action-space", "tof",
     "--action-noise", "0.1"),
]


def test_11_determinism():
    same = 0
    for argv in CLI_RUNS:
        outs = [subprocess.run([sys.executable, "-m", "tapgrid", *argv], capture_output=True, check=True).stdout
                for _ in range(2)]
        same += outs[0] == outs[1] and len(outs[0]) > 0
    ok = same == len(CLI_RUNS)
    record(11, ok, f"{same}/{len(CLI_RUNS)} gen/solve/train invocations byte-identical across two processes")
    assert ok
