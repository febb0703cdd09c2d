"""Target addressing and a tabular checkpoint generator.

A :class:`TargetSpace` gives every target an integer id so that the
estimators can store dense tables. Ids ``0..S-1`` are the MDP states
themselves; higher ids hold the reserved off-MDP encodings that only the
hallucination injector ever emits. Each target also owns a column of the
``hit`` matrix, which plays the role of the indicator ``h(s, g)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .gridworld import Kind, compile_mdp, generate_task, TaskSpec
from .mdp import TabularMdp

OFF_MDP = -1
EXPERIENCED, INJECTED_G1, INJECTED_G2 = "experienced", "injected-G1", "injected-G2"
N_DUPLICATE_MARKERS = 8
N_LAVA_PLACEMENTS = 8


@dataclass
class TargetSpace:
    encodings: list
    hit: np.ndarray  # [S, G] bool
    state_of: np.ndarray  # [G] state index or OFF_MDP
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {e: i for i, e in enumerate(self.encodings)}
        self.hit = np.asarray(self.hit, dtype=bool)
        self.state_of = np.asarray(self.state_of, dtype=int)

    def __len__(self) -> int:
        return len(self.encodings)

    def id_of(self, encoding) -> int:
        return self.index[encoding]


def encode_state(mdp: TabularMdp, s: int):
    return mdp.encodings[s]


def decode(mdp: TabularMdp, encoding) -> int:
    """State index of ``encoding`` or ``OFF_MDP`` when it names no state."""
    return mdp.index.get(encoding, OFF_MDP)


def hallucination_vocabulary(mdp: TabularMdp, seed: int = 0, n_duplicates: int = N_DUPLICATE_MARKERS,
                             n_lava: int = N_LAVA_PLACEMENTS) -> list:
    """Reserved off-MDP encodings for one task.

    Two flavours: the agent placed on a lava cell, and a valid non-terminal
    state carrying a second agent marker. Both are drawn with a seeded RNG so
    that the vocabulary stays small enough for dense tables.
    """
    layout = mdp.layout
    facing = 0 if layout.action_space.has_facing else -1
    situations = ((0, 0), (0, 1), (1, 0), (1, 1)) if layout.kind is Kind.SSM else ((0, 0),)
    placements = [(x, y, facing, sw, sh, 0) for sw, sh in situations for x, y in sorted(layout.lava)]
    rng = np.random.default_rng(seed)
    vocab = []
    if placements:
        picks = rng.choice(len(placements), size=min(n_lava, len(placements)), replace=False)
        vocab = [placements[i] for i in sorted(picks)]
    live = np.flatnonzero(~mdp.terminal)
    picks = rng.choice(live, size=min(n_duplicates, live.size), replace=False)
    vocab += [tuple(mdp.encodings[s][:5]) + (1,) for s in sorted(picks)]
    return vocab


def singleton_space(mdp: TabularMdp, vocabulary: list | None = None) -> TargetSpace:
    """Every state is its own target; hallucinated encodings are never hit."""
    vocabulary = [] if vocabulary is None else vocabulary
    n = mdp.n_states
    hit = np.zeros((n, n + len(vocabulary)), dtype=bool)
    hit[:, :n] = np.eye(n, dtype=bool)
    state_of = np.concatenate([np.arange(n), np.full(len(vocabulary), OFF_MDP)])
    return TargetSpace(list(mdp.encodings) + list(vocabulary), hit, state_of)


def partial_key(encoding) -> tuple:
    """Position and facing only, dropping items and the duplicate marker."""
    return tuple(encoding[:3])


def aliased_space(mdp: TabularMdp) -> tuple[TargetSpace, callable]:
    """Targets described only by ``partial_key``.

    Returns the space and a function mapping any encoding to its target id
    (``OFF_MDP`` when no state shares its partial description). Terminal
    states with a lava sink encoding are never hit.
    """
    keys = sorted({partial_key(e) for e, term in zip(mdp.encodings, mdp.terminal) if e[0] >= 0})
    kid = {k: i for i, k in enumerate(keys)}
    hit = np.zeros((mdp.n_states, len(keys)), dtype=bool)
    for s, e in enumerate(mdp.encodings):
        k = kid.get(partial_key(e))
        if k is not None:
            hit[s, k] = True
    state_of = np.full(len(keys), OFF_MDP)
    space = TargetSpace(keys, hit, state_of)

    def lookup(encoding) -> int:
        return kid.get(partial_key(encoding), OFF_MDP)

    return space, lookup


def source_state(mdp: TabularMdp, encoding) -> int:
    """State an estimator should read when ``encoding`` is used as a source.

    Duplicate-marker encodings read their clean twin; agent-on-lava encodings
    have no twin and come back as ``OFF_MDP`` (callers treat them as terminal).
    """
    s = mdp.index.get(encoding)
    if s is None and encoding[-1] == 1:
        s = mdp.index.get(tuple(encoding[:5]) + (0,))
    return OFF_MDP if s is None else s


@dataclass
class TaskContext:
    """Everything the learners need to know about one task instance."""

    task_id: int
    spec: TaskSpec | None
    mdp: TabularMdp
    space: TargetSpace
    vocabulary: list

    @property
    def layout(self):
        return self.mdp.layout

    @property
    def goal_state(self) -> int:
        return self.mdp.goal_states[0]


def make_task(spec: TaskSpec, task_id: int = 0, init: str = "train") -> TaskContext:
    layout = generate_task(spec)
    mdp = compile_mdp(layout, init=init)
    vocab = hallucination_vocabulary(mdp, seed=spec.seed)
    return TaskContext(task_id, spec, mdp, singleton_space(mdp, vocab), vocab)


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorConfig:
    g1_rate: float = 0.03
    g2_rate: float = 0.05
    source: str = "replay"  # or "enumeration"
    include_goal: bool = True

    def __post_init__(self):
        if min(self.g1_rate, self.g2_rate) < 0 or self.g1_rate + self.g2_rate > 1:
            raise ValueError("injection rates must be non-negative and sum to at most 1")
        if self.source not in ("replay", "enumeration"):
            raise ValueError(f"unknown candidate source {self.source!r}")


@dataclass
class CandidateSet:
    encodings: list
    ids: np.ndarray
    tags: list

    def __len__(self) -> int:
        return len(self.encodings)


def _situation(encoding) -> tuple[int, int]:
    return int(encoding[3]), int(encoding[4])


def unreachable_situation_states(ctx: TaskContext, s: int) -> np.ndarray:
    """Non-terminal states whose item flags cannot follow the flags of ``s``.

    Items are never dropped, so a situation is reachable only if it holds
    every item already held.
    """
    cache = ctx.__dict__.setdefault("_g2_cache", {})
    sit = _situation(ctx.mdp.encodings[s])
    if sit not in cache:
        cache[sit] = np.array([
            t for t, e in enumerate(ctx.mdp.encodings)
            if not ctx.mdp.terminal[t] and (e[3] < sit[0] or e[4] < sit[1])
        ], dtype=int)
    return cache[sit]


class TargetGenerator:
    """Proposes checkpoint targets for a task.

    Experienced candidates are hindsight futures of the current state taken
    from the replay. When the state has never been seen, stored states sharing
    its item flags are used instead. Each candidate is independently swapped for
    an injected hallucination with the configured probabilities.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        self.config = config

    def _pool(self, ctx: TaskContext, sit, replay) -> np.ndarray:
        enc = ctx.mdp.encodings
        if replay is not None and self.config.source == "replay":
            cand = np.unique(replay.task_states(ctx.task_id))
        else:
            cand = np.flatnonzero(~ctx.mdp.terminal)
        same = np.array([t for t in cand if _situation(enc[t]) == sit], dtype=int)
        return same if same.size else cand

    def _experienced(self, ctx: TaskContext, sources: np.ndarray, rng, replay) -> np.ndarray:
        if self.config.source == "replay":
            if replay is None or replay.n_states(ctx.task_id) == 0:
                raise GenerationError("replay source requested but the task replay is empty")
            out = replay.future_batch(ctx.task_id, sources, rng)
        else:
            out = np.full(len(sources), -1, dtype=np.int64)
        missing = np.flatnonzero(out < 0)
        if missing.size:
            sits = [_situation(ctx.mdp.encodings[s]) for s in sources[missing]]
            for sit in sorted(set(sits)):
                rows = missing[[x == sit for x in sits]]
                out[rows] = rng.choice(self._pool(ctx, sit, replay), size=rows.size)
        return out

    def _inject(self, ctx: TaskContext, sources: np.ndarray, ids: np.ndarray, rng) -> list:
        cfg = self.config
        tags = [EXPERIENCED] * len(ids)
        u = rng.random(len(ids))
        vocab_ids = np.arange(ctx.mdp.n_states, len(ctx.space))
        for i in np.flatnonzero(u < cfg.g1_rate + cfg.g2_rate):
            g2_pool = unreachable_situation_states(ctx, int(sources[i]))
            if u[i] >= cfg.g1_rate and g2_pool.size:
                ids[i] = rng.choice(g2_pool)
                tags[i] = INJECTED_G2
            elif vocab_ids.size:
                # no hallucination of the second kind exists from here, fall back to the first
                ids[i] = rng.choice(vocab_ids)
                tags[i] = INJECTED_G1
        return tags

    def propose(self, ctx: TaskContext, s: int, n: int, rng: np.random.Generator, replay=None,
                include_goal: bool | None = None) -> CandidateSet:
        include_goal = self.config.include_goal if include_goal is None else include_goal
        sources = np.full(n, s, dtype=np.int64)
        ids = self._experienced(ctx, sources, rng, replay)
        tags = self._inject(ctx, sources, ids, rng)
        ids = [int(g) for g in ids]
        if include_goal and ctx.goal_state not in ids:
            ids.append(ctx.goal_state)
            tags.append(EXPERIENCED)
        encodings = [ctx.space.encodings[g] for g in ids]
        return CandidateSet(encodings, np.array(ids, dtype=int), tags)

    def sample_ids(self, ctx: TaskContext, sources: np.ndarray, rng: np.random.Generator, replay=None) -> np.ndarray:
        """One generated target id per source state, for just-in-time relabeling."""
        sources = np.asarray(sources, dtype=np.int64)
        ids = self._experienced(ctx, sources, rng, replay)
        self._inject(ctx, sources, ids, rng)
        return ids
