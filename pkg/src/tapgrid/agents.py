"""Agent loops: tabular Q-learning, a checkpoint-planning agent, and Dyna / Dyna+.

All three share one driver. It runs epsilon-greedy episodes on a set of
training instances, adds finished episodes to a replay, and writes one log
row every ``eval_every`` steps. Evaluation uses its own RNG stream, so changing
the evaluation frequency never changes what the agent learns.

Tables are per task instance. A tabular learner has nothing to transfer to
an unseen layout, so the out-of-distribution columns measure the untrained
behaviour on fresh instances: the greedy action of an all-zero table, or
random actions for the planning agent whose replay is empty there.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import dp_oracle as dp
from .estimators import ALPHA_MIN, GoalLearners, step_sizes
from .gridworld import GridEnv, TaskSpec
from .metrics import delusion_frequency, feasibility_errors
from .proxy_planner import build_proxy, reannotate, smdp_value_iteration
from .replay import PRESETS, ReplayBuffer, Trajectory
from .target_generator import (
    GeneratorConfig,
    OFF_MDP,
    TargetGenerator,
    TaskContext,
    aliased_space,
    make_task,
    source_state,
    unreachable_situation_states,
)

LOG_COLUMNS = (
    "step", "train_success", "ood_025", "ood_035", "ood_045", "ood_055",
    "e0_err", "e1_err", "e2_err", "delusion_freq_g1", "delusion_freq_g2", "reject_rate",
)
OOD_DIFFICULTIES = (0.25, 0.35, 0.45, 0.55)
NAN = float("nan")


@dataclass(frozen=True)
class ExplorationSchedule:
    """Linear annealing of epsilon from ``start`` to ``end``."""

    start: float = 1.0
    end: float = 0.05
    anneal_steps: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ValueError("need 0 <= end <= start <= 1")
        if self.anneal_steps < 0:
            raise ValueError("anneal_steps must be non-negative")

    def value(self, t: int) -> float:
        if self.anneal_steps == 0:
            return self.end
        frac = min(1.0, t / self.anneal_steps)
        return self.start + (self.end - self.start) * frac


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    gamma_int: float = 0.95
    replan_interval: int = 8
    train_every: int = 4
    relabel_count: int = 4
    batch_transitions: int = 16
    relabel: str = "epg"
    seed: int = 0
    steps: int = 20_000
    eval_every: int = 2_000
    eval_episodes: int = 2
    max_episode_steps: int = 128
    exploration: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    alpha_min: float = ALPHA_MIN
    n_train_tasks: int = 10
    ood_tasks: int = 5
    # checkpoint planner
    n_candidates: int = 32
    n_medoids: int = 12
    edge_threshold: float = 8.0
    g1_rate: float = 0.03
    g2_rate: float = 0.05
    gated: bool = True
    aliased: bool = True
    gate_never: float = 0.5
    error_pairs: int = 200
    pretrain_episodes: int = 0
    pretrain_batches: int = 0
    pretrain_batch_size: int = 4096
    replay_capacity: int = 10_000
    # Dyna
    theta: float = 0.5
    inject_rate: float = 0.0

    def __post_init__(self):
        if self.relabel not in PRESETS:
            raise ValueError(f"unknown relabel preset {self.relabel!r}")
        for name in ("replan_interval", "train_every", "relabel_count", "batch_transitions",
                     "steps", "eval_every", "max_episode_steps", "n_train_tasks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("inject_rate", "theta", "gate_never"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def mixture(self):
        return PRESETS[self.relabel]

    @property
    def batch_size(self) -> int:
        return self.batch_transitions * self.relabel_count


@dataclass
class SelectionEvent:
    step: int
    task_id: int
    provenance: str
    target_class: str


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in self.rows:
            writer.writerow([row["step"]] + [_fmt(row[c]) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.6g}"


# ---------------------------------------------------------------------------
# tasks


def eval_init(mdp) -> np.ndarray:
    """Start distribution over the spawn cells with no items held."""
    init = np.zeros(mdp.n_states)
    for i, st in enumerate(mdp.states):
        if not st.terminal and st.pos in mdp.layout.spawn and st.situation == (0, 0):
            init[i] = 1.0
    return init / init.sum()


def training_tasks(spec: TaskSpec, n: int) -> list[TaskContext]:
    """``n`` fixed instances sharing everything in ``spec`` but the seed."""
    return [make_task(dataclasses.replace(spec, seed=spec.seed * 1000 + i), task_id=i) for i in range(n)]


def ood_tasks(spec: TaskSpec, n: int, difficulties=OOD_DIFFICULTIES) -> dict:
    out = {}
    for j, diff in enumerate(difficulties):
        out[diff] = [
            make_task(dataclasses.replace(spec, difficulty=diff, seed=10_000 + spec.seed * 100 + 10 * j + i),
                      task_id=-1)
            for i in range(n)
        ]
    return out


def _as_tasks(tasks, config: AgentConfig) -> list[TaskContext]:
    if isinstance(tasks, TaskSpec):
        return training_tasks(tasks, config.n_train_tasks)
    if isinstance(tasks, TaskContext):
        return [tasks]
    tasks = list(tasks)
    for i, ctx in enumerate(tasks):
        if ctx.task_id != i:
            raise ValueError("task ids must be 0..n-1 in order")
    return tasks


def random_replay(tasks, n_episodes: int, rng: np.random.Generator, max_steps: int = 64,
                  replay: ReplayBuffer | None = None) -> ReplayBuffer:
    """Episodes of the uniform random policy from the training start distribution."""
    replay = ReplayBuffer(capacity=max(10_000, n_episodes * len(tasks))) if replay is None else replay
    for ep in range(n_episodes):
        for ctx in tasks:
            env = GridEnv(ctx.mdp, max_steps, ctx.task_id)
            states, actions, rewards, terms = [env.reset(rng)], [], [], []
            while True:
                a = int(rng.integers(ctx.mdp.n_actions))
                s2, r, done, trunc = env.step(a, rng)
                states.append(s2)
                actions.append(a)
                rewards.append(r)
                terms.append(done)
                if done or trunc:
                    break
            replay.add(Trajectory(ctx.task_id, np.array(states), np.array(actions),
                                  np.array(rewards, dtype=float), np.array(terms), ep))
    return replay


# ---------------------------------------------------------------------------
# agents


class _TabularQ:
    """Task-reward Q-learning table with per-pair step sizes."""

    def __init__(self, n_states: int, n_actions: int, gamma: float, alpha_min: float):
        self.q = np.zeros((n_states, n_actions))
        self.counts = np.zeros((n_states, n_actions), dtype=np.int64)
        self.gamma = gamma
        self.alpha_min = alpha_min

    def update(self, s: int, a: int, r: float, s2: int, done: bool) -> None:
        self.counts[s, a] += 1
        alpha = max(self.alpha_min, 1.0 / math.sqrt(self.counts[s, a]))
        target = r if done else r + self.gamma * self.q[s2].max()
        self.q[s, a] += alpha * (target - self.q[s, a])


def _eps_greedy(values: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return int(rng.integers(values.size))
    return int(np.argmax(values))


class QAgent:
    name = "q"

    def __init__(self, tasks, config: AgentConfig):
        self.config = config
        self.tasks = tasks
        self.tables = [_TabularQ(c.mdp.n_states, c.mdp.n_actions, config.gamma, config.alpha_min) for c in tasks]

    # interface used by the driver
    def begin_episode(self, task: int, s: int, step: int, rng) -> None:
        pass

    def act(self, task: int, s: int, eps: float, rng) -> int:
        return _eps_greedy(self.tables[task].q[s], eps, rng)

    def observe(self, task: int, s: int, a: int, r: float, s2: int, done: bool, step: int, rng) -> None:
        self.tables[task].update(s, a, r, s2, done)

    def end_episode(self, task: int, traj: Trajectory, rng) -> None:
        pass

    def eval_policy(self, task: int):
        q = self.tables[task].q
        return lambda s, rng: int(np.argmax(q[s]))

    def zero_shot_action(self, ctx, s: int, rng) -> int:
        return 0  # argmax of an all-zero row

    def metrics(self, step: int, rng) -> dict:
        return {}

    def final_metrics(self) -> dict:
        errs = []
        for ctx, table in zip(self.tasks, self.tables):
            errs.append(q_error(ctx.mdp, table.q, self.config.gamma))
        return {"max_q_error": float(max(errs))}


def optimal_q(mdp, gamma: float) -> np.ndarray:
    v, _ = dp.value_iteration(mdp, gamma, tol=1e-12)
    return dp.q_from_v(mdp, v, gamma)


def q_error(mdp, q: np.ndarray, gamma: float) -> float:
    """``max |Q - q*|`` over non-terminal states."""
    live = ~mdp.terminal
    return float(np.abs(q[live] - optimal_q(mdp, gamma)[live]).max())


class DynaAgent(QAgent):
    """Q-learning plus one simulated update per real step from a count model.

    With probability ``inject_rate`` the simulated next state is replaced by
    a uniformly drawn state of the task, a hallucinated transition. Its reward
    and termination are what the model would believe of that state. The plus
    variant skips a simulated update unless the distance table puts at least
    ``theta`` mass on reaching the next state in exactly one step.
    """

    def __init__(self, tasks, config: AgentConfig, plus: bool = False):
        super().__init__(tasks, config)
        self.name = "dyna-plus" if plus else "dyna"
        self.plus = plus
        self.models = []
        for ctx in tasks:
            n_s, n_a = ctx.mdp.n_states, ctx.mdp.n_actions
            self.models.append({
                "counts": np.zeros((n_s, n_a, n_s), dtype=np.int64),
                "rsum": np.zeros((n_s, n_a, n_s)),
                "seen": [],
            })
        self.evaluators = None
        if plus:
            self.evaluators = [
                GoalLearners(c.mdp.n_states, c.mdp.n_actions, c.space, config.gamma, config.gamma_int,
                             alpha_min=config.alpha_min, with_reward=False)
                for c in tasks
            ]
            self.generator = TargetGenerator(GeneratorConfig(config.g1_rate, config.g2_rate))
        self.replay = ReplayBuffer(config.replay_capacity)
        self.n_sim = self.n_rejected = self.n_injected = 0
        self._window = [0, 0]

    def observe(self, task, s, a, r, s2, done, step, rng) -> None:
        super().observe(task, s, a, r, s2, done, step, rng)
        m = self.models[task]
        if m["counts"][s, a].sum() == 0:
            m["seen"].append((s, a))
        m["counts"][s, a, s2] += 1
        m["rsum"][s, a, s2] += r
        self._simulate(task, rng)
        due = (step + 1) % self.config.train_every == 0
        if self.plus and due and task in self.replay.task_ids():
            batch = self.replay.sample_training_batch(task, self.config.mixture, self.config.batch_size, rng,
                                                      self.generator, self.tasks[task])
            self.evaluators[task].update(batch)

    def _simulate(self, task: int, rng) -> None:
        ctx, m = self.tasks[task], self.models[task]
        s, a = m["seen"][int(rng.integers(len(m["seen"])))]
        row = m["counts"][s, a]
        s2 = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
        injected = rng.random() < self.config.inject_rate
        if injected:
            s2 = int(rng.integers(ctx.mdp.n_states))
        if row[s2] > 0:
            r = m["rsum"][s, a, s2] / row[s2]
        else:
            r = 1.0 if s2 in ctx.mdp.goal_states else 0.0
        self.n_sim += 1
        self._window[0] += 1
        self.n_injected += injected
        if self.plus:
            p1 = self.evaluators[task].distance.probs[s, a, s2, 0]
            if p1 < self.config.theta:
                self.n_rejected += 1
                self._window[1] += 1
                return
        self.tables[task].update(s, a, r, s2, bool(ctx.mdp.terminal[s2]))

    def end_episode(self, task, traj, rng) -> None:
        self.replay.add(traj)

    def metrics(self, step, rng) -> dict:
        n, rej = self._window
        self._window = [0, 0]
        return {"reject_rate": rej / n if n else NAN}

    def final_metrics(self) -> dict:
        out = super().final_metrics()
        out.update(simulated=self.n_sim, rejected=self.n_rejected, injected=self.n_injected)
        return out


@dataclass
class _Cursor:
    """Where the planning agent currently is in its plan for one episode."""

    proxy: object = None
    target: int | None = None
    since: int = 0


class SkipperAgent:
    """Checkpoint-planning agent.

    At every trigger (checkpoint reached, or ``replan_interval`` steps since the
    last plan) it plans over a proxy problem and then follows the
    goal-conditioned greedy policy toward the chosen checkpoint. The ``once``
    variant keeps the checkpoints from the start of the episode and only moves
    the current-state vertex. The ``regen`` variant regenerates the whole proxy
    problem.

    With ``aliased`` the planner's tables address targets by position and
    facing only, the tabular stand-in for partial target descriptions. With
    ``gated`` a second, fully keyed feasibility table trained with the same
    relabeling vetoes candidates whose never-mass is at least ``gate_never``.
    """

    def __init__(self, tasks, config: AgentConfig, variant: str = "regen"):
        if variant not in ("once", "regen"):
            raise ValueError(f"unknown variant {variant!r}")
        self.config = config
        self.tasks = tasks
        self.variant = variant
        self.name = f"skipper-{variant}"
        self.generator = TargetGenerator(GeneratorConfig(config.g1_rate, config.g2_rate))
        self.replay = ReplayBuffer(config.replay_capacity)
        self.planners, self.gates, self.alias, self.lookup = [], [], [], []
        for ctx in tasks:
            mdp = ctx.mdp
            if config.aliased:
                space, lookup = aliased_space(mdp)
                alias = np.array([lookup(e) for e in ctx.space.encodings])
            else:
                space, lookup = ctx.space, ctx.space.id_of
                alias = np.arange(len(ctx.space))
            self.planners.append(GoalLearners(mdp.n_states, mdp.n_actions, space, config.gamma,
                                              config.gamma_int, alpha_min=config.alpha_min))
            self.alias.append(alias)
            self.lookup.append(lookup)
            self.gates.append(
                GoalLearners(mdp.n_states, mdp.n_actions, ctx.space, config.gamma, config.gamma_int,
                             alpha_min=config.alpha_min, with_reward=False, with_distance=False,
                             with_feasibility=True)
                if config.gated else None)
        self.cursors = [_Cursor() for _ in tasks]
        self.events: list[SelectionEvent] = []
        self._window = {"selected": [], "proposed": 0, "rejected": 0}

    # -- learning ------------------------------------------------------------

    def train_batch(self, task: int, n: int, rng) -> None:
        if task not in self.replay.task_ids() or self.replay.n_transitions(task) == 0:
            return
        batch = self.replay.sample_training_batch(task, self.config.mixture, n, rng, self.generator,
                                                  self.tasks[task])
        if self.gates[task] is not None:
            self.gates[task].update(batch)
        ids = self.alias[task][batch.target]
        keep = ids >= 0
        sub = batch.subset(keep)
        sub.target = ids[keep]
        self.planners[task].update(sub)

    def pretrain(self, rng) -> None:
        cfg = self.config
        if cfg.pretrain_episodes:
            random_replay(self.tasks, cfg.pretrain_episodes, rng, cfg.max_episode_steps // 2, self.replay)
        for _ in range(cfg.pretrain_batches):
            for task in range(len(self.tasks)):
                self.train_batch(task, cfg.pretrain_batch_size, rng)

    # -- planning ------------------------------------------------------------

    def _gate(self, task: int):
        gate = self.gates[task]
        if gate is None:
            return None
        window = self._window

        def keep(s, ids):
            ok = gate.feasibility.never(np.full(ids.size, s), ids) < self.config.gate_never
            window["proposed"] += ids.size
            window["rejected"] += int((~ok).sum())
            return ok

        return keep

    def _plan(self, task: int, s: int, cur: _Cursor, rng, step: int | None) -> None:
        ctx, cfg = self.tasks[task], self.config
        cur.since = 0
        cur.target = None
        if task not in self.replay.task_ids():
            return
        kwargs = dict(gamma=cfg.gamma, threshold=cfg.edge_threshold, target_of=self.lookup[task],
                      source_of=lambda e: source_state(ctx.mdp, e))
        if self.variant == "regen" or cur.proxy is None:
            cur.proxy = build_proxy(ctx, s, self.generator, self.planners[task], rng, self.replay,
                                    k=cfg.n_medoids, n_gen=cfg.n_candidates, gate=self._gate(task), **kwargs)
        else:
            cur.proxy = reannotate(cur.proxy, ctx, s, self.planners[task], **kwargs)
        plan = smdp_value_iteration(cur.proxy.R, cur.proxy.Gamma, cur.proxy.pruned)
        if not plan.ok:
            return
        j = plan.selected
        cur.target = int(cur.proxy.targets[j])
        if step is not None:
            cls = dp.classify_target(ctx.mdp, s, cur.proxy.encodings[j]).value
            self.events.append(SelectionEvent(step, task, cur.proxy.tags[j], cls))
            self._window["selected"].append(cls)

    def _act(self, task: int, s: int, cur: _Cursor, eps: float, rng) -> int:
        if cur.target is None:
            return int(rng.integers(self.tasks[task].mdp.n_actions))
        return _eps_greedy(self.planners[task].q.q[s, :, cur.target], eps, rng)

    def _advance(self, task: int, s2: int, cur: _Cursor) -> bool:
        """Update the cursor after a step; True when a new plan is due."""
        cur.since += 1
        hit = cur.target is not None and self.planners[task].space.hit[s2, cur.target]
        return bool(hit or cur.since >= self.config.replan_interval)

    # -- driver interface ----------------------------------------------------

    def begin_episode(self, task, s, step, rng) -> None:
        cur = self.cursors[task] = _Cursor()
        self._plan(task, s, cur, rng, step)

    def act(self, task, s, eps, rng) -> int:
        return self._act(task, s, self.cursors[task], eps, rng)

    def observe(self, task, s, a, r, s2, done, step, rng) -> None:
        cur = self.cursors[task]
        if (step + 1) % self.config.train_every == 0:
            self.train_batch(task, self.config.batch_size, rng)
        if not done and self._advance(task, s2, cur):
            self._plan(task, s2, cur, rng, step)

    def end_episode(self, task, traj, rng) -> None:
        self.replay.add(traj)

    def eval_policy(self, task: int):
        cur = _Cursor()
        state = {"fresh": True}

        def policy(s, rng):
            if state["fresh"] or self._advance(task, s, cur):
                state["fresh"] = False
                self._plan(task, s, cur, rng, None)
            return self._act(task, s, cur, 0.0, rng)

        return policy

    def zero_shot_action(self, ctx, s, rng) -> int:
        return int(rng.integers(ctx.mdp.n_actions))  # no replay, so never a plan

    def estimated_distance(self, task: int, s: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Expected hitting time read from the gate table, else from the planner."""
        if self.gates[task] is not None:
            return self.gates[task].feasibility.expectation(s, ids)
        planner = self.planners[task]
        alias = self.alias[task][ids]
        out = np.full(s.size, float(planner.distance.n_bins))
        m = alias >= 0
        out[m] = planner.distance.marginal(s[m], alias[m], planner.policy) @ planner.distance.support
        return out

    def state_target_policy(self, task: int) -> np.ndarray:
        """``[G, S, A]`` policy used when chasing each state target."""
        n = self.tasks[task].mdp.n_states
        s = np.repeat(np.arange(n)[None, :], n, 0)
        g = np.repeat(np.arange(n)[:, None], n, 1)
        if self.gates[task] is not None:
            return self.gates[task].q.tie_weights(s, g)
        planner = self.planners[task]
        return planner.q.weights(s, self.alias[task][g])

    def metrics(self, step, rng) -> dict:
        w = self._window
        g1, g2 = delusion_frequency(w["selected"]) if w["selected"] else (NAN, NAN)
        out = {"delusion_freq_g1": g1, "delusion_freq_g2": g2,
               "reject_rate": w["rejected"] / w["proposed"] if self.config.gated and w["proposed"] else NAN}
        self._window = {"selected": [], "proposed": 0, "rejected": 0}
        if self.config.error_pairs and 0 in self.replay.task_ids():
            rep = evaluator_errors(self.tasks[0], lambda s, g: self.estimated_distance(0, s, g),
                                   self.state_target_policy(0),
                                   rng, self.config.error_pairs)
            out.update(e0_err=rep.e0, e1_err=rep.e1, e2_err=rep.e2)
        return out

    def final_metrics(self) -> dict:
        g1, g2 = delusion_frequency([e.target_class for e in self.events])
        return {"selections": len(self.events), "delusion_g1": g1, "delusion_g2": g2}


def sample_error_pairs(ctx: TaskContext, rng, n: int) -> dict:
    """Source/target id pairs for each class, ``None`` where a class has no member."""
    mdp = ctx.mdp
    live = np.flatnonzero(~mdp.terminal)
    src = rng.choice(live, size=n)
    reach = np.stack([dp.reachable_set(mdp, int(s)) for s in src])
    out = {}
    g0 = [(s, int(rng.choice(np.flatnonzero(r)))) for s, r in zip(src, reach) if r.any()]
    out["G0"] = np.array(g0) if g0 else None
    n_vocab = len(ctx.space) - mdp.n_states
    out["G1"] = np.stack([src, mdp.n_states + rng.integers(n_vocab, size=n)], 1) if n_vocab else None
    g2 = []
    for s in src:
        pool = unreachable_situation_states(ctx, int(s))
        if pool.size:
            g2.append((s, int(rng.choice(pool))))
    out["G2"] = np.array(g2) if g2 else None
    return out


def evaluator_errors(ctx: TaskContext, estimate, policy: np.ndarray, rng, n: int = 200, pairs=None):
    """E0/E1/E2 of ``estimate(s, ids)`` against the oracle under ``policy``."""
    pairs = sample_error_pairs(ctx, rng, n) if pairs is None else pairs
    n_bins = 16
    est, classes, truth = [], [], []
    clipped = None
    for cls in ("G0", "G1", "G2"):
        p = pairs.get(cls)
        if p is None:
            continue
        if cls == "G0":
            if clipped is None:
                probs = dp.distance_distribution(ctx.mdp, policy, n_bins)
                clipped = probs @ np.arange(1, n_bins + 1, dtype=float)
            truth.append(clipped[p[:, 0], p[:, 1]])
        else:
            truth.append(np.full(len(p), float(n_bins)))
        est.append(estimate(p[:, 0], p[:, 1]))
        classes += [cls] * len(p)
    return feasibility_errors(np.concatenate(est), classes, np.concatenate(truth), n_bins)


# ---------------------------------------------------------------------------
# driver


def _run(agent, tasks, config: AgentConfig, ood=None) -> TrainingLog:
    rng = np.random.default_rng([config.seed, 1])
    eval_rng = np.random.default_rng([config.seed, 2])
    log = TrainingLog()
    if hasattr(agent, "pretrain"):
        agent.pretrain(rng)
    envs = [GridEnv(c.mdp, config.max_episode_steps, c.task_id) for c in tasks]
    episode, task, traj = 0, 0, None
    s = None
    for step in range(config.steps):
        if s is None:
            task = episode % len(tasks)
            s = envs[task].reset(rng)
            traj = ([s], [], [], [])
            agent.begin_episode(task, s, step, rng)
        eps = config.exploration.value(step)
        a = agent.act(task, s, eps, rng)
        s2, r, done, trunc = envs[task].step(a, rng)
        agent.observe(task, s, a, r, s2, done, step, rng)
        for lst, v in zip(traj, (s2, a, r, done)):
            lst.append(v)
        s = s2
        if done or trunc:
            t = Trajectory(task, np.array(traj[0]), np.array(traj[1]), np.array(traj[2], dtype=float),
                           np.array(traj[3]), episode)
            agent.end_episode(task, t, rng)
            episode += 1
            s = None
        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            log.rows.append(_evaluate(agent, tasks, config, ood, step + 1, eval_rng))
    log.final = agent.final_metrics()
    log.events = list(getattr(agent, "events", []))
    return log


def _episode_success(mdp, policy, init, max_steps: int, rng) -> bool:
    env = GridEnv(mdp, max_steps)
    s = env.reset(rng, init)
    total = 0.0
    while True:
        s, r, done, trunc = env.step(policy(s, rng), rng)
        total += r
        if done or trunc:
            return total > 0


def _evaluate(agent, tasks, config: AgentConfig, ood, step: int, rng) -> dict:
    row = {c: NAN for c in LOG_COLUMNS}
    row["step"] = step
    wins = []
    for i, ctx in enumerate(tasks):
        init = eval_init(ctx.mdp)
        for _ in range(config.eval_episodes):
            wins.append(_episode_success(ctx.mdp, agent.eval_policy(i), init, config.max_episode_steps, rng))
    row["train_success"] = float(np.mean(wins))
    for diff, ctxs in (ood or {}).items():
        wins = []
        for ctx in ctxs:
            policy = (lambda c: lambda s, r: agent.zero_shot_action(c, s, r))(ctx)
            for _ in range(config.eval_episodes):
                wins.append(_episode_success(ctx.mdp, policy, eval_init(ctx.mdp), config.max_episode_steps, rng))
        row[f"ood_{int(round(diff * 100)):03d}"] = float(np.mean(wins))
    row.update(agent.metrics(step, rng))
    return row


def _ood_for(tasks, config: AgentConfig):
    spec = tasks[0].spec
    if spec is None or config.ood_tasks == 0:
        return None
    return ood_tasks(spec, config.ood_tasks)


def run_q_baseline(tasks, config: AgentConfig = AgentConfig()) -> TrainingLog:
    tasks = _as_tasks(tasks, config)
    return _run(QAgent(tasks, config), tasks, config, _ood_for(tasks, config))


def run_skipper(tasks, config: AgentConfig = AgentConfig(), variant: str = "regen") -> TrainingLog:
    tasks = _as_tasks(tasks, config)
    return _run(SkipperAgent(tasks, config, variant), tasks, config, _ood_for(tasks, config))


def run_dyna(tasks, config: AgentConfig = AgentConfig(), plus: bool = False,
             inject_rate: float | None = None) -> TrainingLog:
    if inject_rate is not None:
        config = dataclasses.replace(config, inject_rate=inject_rate)
    tasks = _as_tasks(tasks, config)
    return _run(DynaAgent(tasks, config, plus), tasks, config, _ood_for(tasks, config))


AGENTS = ("q", "skipper-once", "skipper-regen", "dyna", "dyna-plus")


def make_agent(name: str, tasks, config: AgentConfig = AgentConfig()):
    """Agent object by CLI name, on already resolved task contexts."""
    if name == "q":
        return QAgent(tasks, config)
    if name.startswith("skipper-"):
        return SkipperAgent(tasks, config, name.split("-", 1)[1])
    if name in ("dyna", "dyna-plus"):
        return DynaAgent(tasks, config, plus=name == "dyna-plus")
    raise ValueError(f"unknown agent {name!r}")


def run_agent(name: str, tasks, config: AgentConfig = AgentConfig()) -> TrainingLog:
    tasks = _as_tasks(tasks, config)
    return _run(make_agent(name, tasks, config), tasks, config, _ood_for(tasks, config))
