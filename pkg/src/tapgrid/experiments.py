"""Desk-scale experiments: evaluator training under relabeling mixtures,
delusion frequency with and without the feasibility gate, Dyna vs Dyna+, and
the reduction property of non-singleton targets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import dp_oracle as dp
from .agents import (
    AgentConfig,
    ExplorationSchedule,
    TrainingLog,
    evaluator_errors,
    random_replay,
    run_dyna,
    run_skipper,
    sample_error_pairs,
)
from .estimators import GoalLearners
from .gridworld import TaskSpec
from .metrics import MetricsReport, delusion_frequency, mean_ci
from .replay import PRESETS, PairBatch
from .target_generator import GeneratorConfig, TargetGenerator, TargetSpace, make_task

SSM_8 = TaskSpec("ssm", 8, 8, 0.4, 0, "abs")
RDS_6 = TaskSpec("rds", 6, 6, 0.25, 0, "abs")


# ---------------------------------------------------------------------------
# evaluator errors per relabeling mixture


def train_evaluator(ctx, relabel: str, n_batches: int, rng, batch_size: int = 4096,
                    replay=None, n_episodes: int = 300, g1_rate: float = 0.03, g2_rate: float = 0.05):
    """Fully keyed Q plus feasibility table trained offline on random-policy episodes."""
    mdp = ctx.mdp
    replay = random_replay([ctx], n_episodes, rng) if replay is None else replay
    gen = TargetGenerator(GeneratorConfig(g1_rate, g2_rate))
    learners = GoalLearners(mdp.n_states, mdp.n_actions, ctx.space, with_reward=False,
                            with_distance=False, with_feasibility=True)
    for _ in range(n_batches):
        learners.update(replay.sample_training_batch(ctx.task_id, PRESETS[relabel], batch_size, rng, gen, ctx))
    return learners


def evaluator_report(ctx, learners, rng, n_pairs: int = 400) -> MetricsReport:
    n = ctx.mdp.n_states
    s = np.repeat(np.arange(n)[None, :], n, 0)
    g = np.repeat(np.arange(n)[:, None], n, 1)
    policy = learners.q.tie_weights(s, g)
    return evaluator_errors(ctx, learners.feasibility.expectation, policy, rng, n_pairs)


def feasibility_experiment(seed: int, relabel: str, n_batches: int = 4000, spec: TaskSpec = SSM_8,
                           batch_size: int = 4096) -> MetricsReport:
    ctx = make_task(dataclasses.replace(spec, seed=seed))
    rng = np.random.default_rng([seed, 8])
    learners = train_evaluator(ctx, relabel, n_batches, rng, batch_size)
    return evaluator_report(ctx, learners, np.random.default_rng([seed, 9]))


# ---------------------------------------------------------------------------
# delusions with and without the gate


def delusion_config(seed: int, gated: bool, steps: int = 1500, pretrain_batches: int = 1200) -> AgentConfig:
    return AgentConfig(
        seed=seed, steps=steps, eval_every=steps, eval_episodes=1, n_train_tasks=1, ood_tasks=0,
        gated=gated, aliased=True, relabel="epg", error_pairs=0,
        pretrain_episodes=300, pretrain_batches=pretrain_batches,
        exploration=ExplorationSchedule(0.1, 0.1, 0),
    )


def delusion_run(seed: int, gated: bool, spec: TaskSpec = SSM_8, variant: str = "regen", **kw) -> float:
    """Fraction of checkpoint selections that were G1 or G2 targets."""
    ctx = make_task(dataclasses.replace(spec, seed=seed))
    log = run_skipper([ctx], delusion_config(seed, gated, **kw), variant)
    g1, g2 = delusion_frequency([e.target_class for e in log.events])
    return g1 + g2


@dataclass
class PairedComparison:
    treated: np.ndarray
    control: np.ndarray

    def ci(self, which: str):
        return mean_ci(getattr(self, which))

    @property
    def ratio(self) -> float:
        c = self.control.mean()
        return float(self.treated.mean() / c) if c > 0 else np.inf

    @property
    def separated(self) -> bool:
        _, _, hi_t = mean_ci(self.treated)
        _, lo_c, _ = mean_ci(self.control)
        return hi_t < lo_c


def delusion_comparison(seeds, **kw) -> PairedComparison:
    gated = np.array([delusion_run(s, True, **kw) for s in seeds])
    ungated = np.array([delusion_run(s, False, **kw) for s in seeds])
    return PairedComparison(gated, ungated)


# ---------------------------------------------------------------------------
# Dyna vs Dyna+


def dyna_config(seed: int, steps: int = 30_000) -> AgentConfig:
    return AgentConfig(seed=seed, steps=steps, eval_every=steps, eval_episodes=1, n_train_tasks=1,
                       ood_tasks=0, exploration=ExplorationSchedule(1.0, 0.1, steps // 3))


def dyna_error(seed: int, plus: bool, inject_rate: float, spec: TaskSpec = RDS_6, steps: int = 30_000) -> TrainingLog:
    ctx = make_task(dataclasses.replace(spec, seed=seed))
    return run_dyna([ctx], dyna_config(seed, steps), plus=plus, inject_rate=inject_rate)


def dyna_comparison(seeds, inject_rate: float, **kw):
    """Final ``max |Q - q*|`` of Dyna+ (treated) and Dyna (control) on paired seeds."""
    plus = np.array([dyna_error(s, True, inject_rate, **kw).final["max_q_error"] for s in seeds])
    base = np.array([dyna_error(s, False, inject_rate, **kw).final["max_q_error"] for s in seeds])
    return PairedComparison(plus, base)


def two_sample_p(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.allclose(a, b, rtol=0, atol=1e-12):
        return 1.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


# ---------------------------------------------------------------------------
# non-singleton targets and their reachable reduction


def ball(mdp, states) -> np.ndarray:
    """States equal to or one transition away from any of ``states``."""
    out = np.zeros(mdp.n_states, dtype=bool)
    adj = dp.adjacency(mdp)
    for s in states:
        out[s] = True
        out[adj[s]] = True
        for t in range(mdp.n_states):
            if s in adj[t]:
                out[t] = True
    return out


@dataclass
class ReductionCase:
    space: TargetSpace
    sources: np.ndarray  # states where column 0 reduces to column 1
    mixed: np.ndarray
    reduced: np.ndarray


def reduction_case(ctx, rng) -> ReductionCase | None:
    """A mixed target and, for sources holding every item, its reachable part.

    The mixed target joins the neighbourhood of a state holding both items with
    the neighbourhood of a state holding none; from states that hold both items
    the second part can never be entered.
    """
    mdp = ctx.mdp
    enc = mdp.encodings
    full = [s for s in range(mdp.n_states) if not mdp.terminal[s] and tuple(enc[s][3:5]) == (1, 1)]
    empty = [s for s in range(mdp.n_states) if not mdp.terminal[s] and tuple(enc[s][3:5]) == (0, 0)]
    if not full or not empty:
        return None
    a, b = int(rng.choice(full)), int(rng.choice(empty))
    near_a, near_b = ball(mdp, [a]), ball(mdp, [b])
    mixed = near_a | near_b
    sources = []
    for s in full:
        reach = dp.reachable_set(mdp, s)
        if not (reach & near_b & ~near_a).any():
            sources.append(s)
    reduced = mixed.copy()
    reduced[near_b & ~near_a] = False
    hit = np.stack([mixed, reduced], axis=1)
    space = TargetSpace([("mixed",), ("reduced",)], hit, np.array([-1, -1]))
    return ReductionCase(space, np.array(sources), mixed, reduced)


def exhaustive_batch(mdp, n_targets: int) -> PairBatch:
    """Every non-terminal (s, a) paired with every target, using the most likely successor."""
    live = np.flatnonzero(~mdp.terminal)
    s = np.repeat(live, mdp.n_actions * n_targets)
    a = np.tile(np.repeat(np.arange(mdp.n_actions), n_targets), live.size)
    g = np.tile(np.arange(n_targets), live.size * mdp.n_actions)
    s2 = np.argmax(mdp.P[s, a], axis=1)
    r = mdp.R[s, a, s2]
    z = np.zeros(s.size, dtype=np.int64)
    return PairBatch(0, s, a, r, s2, mdp.terminal[s2], g, z, z, z)


def reduction_experiment(seed: int, sweeps: int = 300, spec: TaskSpec = TaskSpec("ssm", 6, 6, 0.3, 0, "abs"),
                         taus=(2, 4, 8)) -> dict:
    """Largest gap in learned ``P(D <= tau)`` between a mixed target and its reduction."""
    ctx = make_task(dataclasses.replace(spec, seed=seed))
    case = reduction_case(ctx, np.random.default_rng(seed))
    if case is None or case.sources.size == 0:
        return {"gap": np.nan, "oracle_gap": np.nan, "sources": 0}
    mdp = ctx.mdp
    learners = GoalLearners(mdp.n_states, mdp.n_actions, case.space, with_reward=False, with_distance=False,
                            with_feasibility=True)
    batch = exhaustive_batch(mdp, 2)
    for _ in range(sweeps):
        learners.update(batch)
    ev = learners.feasibility
    src = case.sources
    gaps, oracle_gaps = [], []
    policy = np.stack([learners.q.tie_weights(np.arange(mdp.n_states), np.full(mdp.n_states, g)) for g in (0, 1)])
    for tau in taus:
        p_mixed = ev.query(src, np.zeros_like(src))[:, :tau].sum(1)
        p_red = ev.query(src, np.ones_like(src))[:, :tau].sum(1)
        gaps.append(np.abs(p_mixed - p_red).max())
        truth = [set_feasibility_true(mdp, policy[g], case.space.hit[:, g], tau)[src] for g in (0, 1)]
        oracle_gaps.append(max(np.abs(truth[0] - p_mixed).max(), np.abs(truth[1] - p_red).max()))
    return {"gap": float(max(gaps)), "oracle_gap": float(max(oracle_gaps)), "sources": int(src.size)}


def set_feasibility_true(mdp, policy: np.ndarray, members: np.ndarray, tau: int) -> np.ndarray:
    """``P(D <= tau)`` of entering ``members`` under a ``[S, A]`` policy, for every source."""
    P_pi, _ = mdp.policy_dynamics(policy)
    # u[s] = probability of having entered the set within k steps
    u = np.zeros(mdp.n_states)
    for _ in range(tau):
        u = P_pi @ np.where(members, 1.0, np.where(mdp.terminal, 0.0, u))
    return u
