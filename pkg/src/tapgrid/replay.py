"""Trajectory replay and hindsight relabeling.

Relabeled targets are drawn lazily when a batch is sampled. The replay keeps
flat per-task arrays next to the trajectory list so batches can be drawn with
vectorized indexing.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyReplayError, NoFutureError

EPISODE, FUTURE, PERTASK, GENERATE = 0, 1, 2, 3
TAG_NAMES = ("episode", "future", "pertask", "generate")


@dataclass(eq=False)
class Trajectory:
    """States ``s_0..s_T`` plus the ``T`` actions, rewards and termination flags between them."""

    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    episode: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.terminals = np.asarray(self.terminals, dtype=bool)
        n = self.actions.size
        if n < 1 or self.states.size != n + 1 or self.rewards.size != n or self.terminals.size != n:
            raise ValueError("trajectory needs T >= 1 transitions and T + 1 states")
        if self.terminals[:-1].any():
            raise ValueError("only the last transition may be terminal")

    def __len__(self) -> int:
        return self.actions.size

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "episode": self.episode,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "terminals": self.terminals.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(d["task_id"], d["states"], d["actions"], d["rewards"], d["terminals"], d.get("episode", 0))


@dataclass
class SourceTargetPair:
    task_id: int
    episode: int
    t: int
    s: int
    a: int
    r: float
    s_next: int
    terminal: bool
    target: int
    tag: str


@dataclass
class PairBatch:
    """Struct-of-arrays batch of source-target pairs from one task."""

    task_id: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    target: np.ndarray
    tag: np.ndarray
    episode: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return self.s.size

    def __getitem__(self, i: int) -> SourceTargetPair:
        return SourceTargetPair(
            self.task_id, int(self.episode[i]), int(self.t[i]), int(self.s[i]), int(self.a[i]),
            float(self.r[i]), int(self.s_next[i]), bool(self.terminal[i]), int(self.target[i]),
            TAG_NAMES[self.tag[i]],
        )

    def subset(self, mask: np.ndarray) -> "PairBatch":
        return PairBatch(self.task_id, *(getattr(self, f)[mask] for f in
                                         ("s", "a", "r", "s_next", "terminal", "target", "tag", "episode", "t")))


@dataclass(frozen=True)
class MixtureSpec:
    """Proportions over episode/future/pertask plus a just-in-time generate chance."""

    episode: float = 1.0
    future: float = 0.0
    pertask: float = 0.0
    generate_p: float = 0.0

    def __post_init__(self):
        props = (self.episode, self.future, self.pertask)
        if min(props) < 0 or abs(sum(props) - 1.0) > 1e-9:
            raise ValueError("strategy proportions must be non-negative and sum to 1")
        if not 0.0 <= self.generate_p <= 1.0:
            raise ValueError("generate probability must lie in [0, 1]")

    def tag_probs(self) -> np.ndarray:
        keep = 1.0 - self.generate_p
        return np.array([keep * self.episode, keep * self.future, keep * self.pertask, self.generate_p])


PRESETS = {
    "e": MixtureSpec(1.0, 0.0, 0.0, 0.0),
    "eg": MixtureSpec(1.0, 0.0, 0.0, 0.5),
    "ep": MixtureSpec(0.5, 0.0, 0.5, 0.0),
    "epg": MixtureSpec(2.0 / 3.0, 0.0, 1.0 / 3.0, 0.25),
    "f": MixtureSpec(0.0, 1.0, 0.0, 0.0),
}


@dataclass
class _TaskStore:
    trajs: list = field(default_factory=list)
    dirty: bool = True
    built: int = 0  # episodes already folded into the flat arrays
    evicted: bool = False
    n_states: int = 0
    n_transitions: int = 0
    states: np.ndarray = None  # flat s_0..s_T of every episode
    ep_start: np.ndarray = None
    ep_len: np.ndarray = None  # transitions per episode
    tr_ep: np.ndarray = None  # per transition: episode slot
    tr_t: np.ndarray = None
    actions: np.ndarray = None
    rewards: np.ndarray = None
    terminals: np.ndarray = None
    occ_order: np.ndarray = None  # non-final flat positions sorted by state
    occ_offsets: np.ndarray = None


class ReplayBuffer:
    """Whole-episode FIFO replay keyed by task."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._order: deque = deque()
        self._tasks: dict[int, _TaskStore] = {}

    # -- storage ------------------------------------------------------------

    def add(self, traj: Trajectory) -> None:
        store = self._tasks.setdefault(traj.task_id, _TaskStore())
        store.trajs.append(traj)
        store.dirty = True
        store.n_states += len(traj) + 1
        store.n_transitions += len(traj)
        self._order.append(traj)
        while len(self._order) > self.capacity:
            old = self._order.popleft()
            st = self._tasks[old.task_id]
            # per-task lists are FIFO as well, so the evicted episode is first
            st.trajs.pop(0)
            st.dirty = st.evicted = True
            st.n_states -= len(old) + 1
            st.n_transitions -= len(old)

    def __len__(self) -> int:
        return len(self._order)

    def trajectories(self, task_id: int | None = None) -> list:
        if task_id is None:
            return list(self._order)
        return list(self._tasks.get(task_id, _TaskStore()).trajs)

    def task_ids(self) -> list:
        return sorted(t for t, st in self._tasks.items() if st.trajs)

    def _store(self, task_id: int) -> _TaskStore:
        st = self._tasks.get(task_id)
        if st is None or not st.trajs:
            raise EmptyReplayError(f"no episodes stored for task {task_id}")
        if st.dirty:
            self._rebuild(st)
        return st

    @staticmethod
    def _rebuild(st: _TaskStore) -> None:
        if st.evicted or st.states is None:
            st.built = 0
            for name in ("ep_len", "ep_start", "states", "actions", "rewards", "terminals", "tr_ep", "tr_t"):
                setattr(st, name, None)
        new = st.trajs[st.built:]
        lens = np.array([len(tr) for tr in new], dtype=np.int64)
        offset = 0 if st.states is None else st.states.size
        starts = offset + np.concatenate([[0], np.cumsum(lens + 1)[:-1]])
        tr_ep = st.built + np.repeat(np.arange(lens.size), lens)
        tr_t = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
        parts = {
            "ep_len": lens, "ep_start": starts, "tr_ep": tr_ep, "tr_t": tr_t,
            "states": np.concatenate([tr.states for tr in new]),
            "actions": np.concatenate([tr.actions for tr in new]),
            "rewards": np.concatenate([tr.rewards for tr in new]),
            "terminals": np.concatenate([tr.terminals for tr in new]),
        }
        for name, arr in parts.items():
            old = getattr(st, name)
            setattr(st, name, arr if old is None else np.concatenate([old, arr]))
        st.built = len(st.trajs)
        st.evicted = False
        nonfinal = st.ep_start[st.tr_ep] + st.tr_t
        order = nonfinal[np.argsort(st.states[nonfinal], kind="stable")]
        st.occ_order = order
        n = int(st.states.max()) + 1
        st.occ_offsets = np.concatenate([[0], np.cumsum(np.bincount(st.states[order], minlength=n))])
        st.dirty = False

    def n_states(self, task_id: int) -> int:
        st = self._tasks.get(task_id)
        return 0 if st is None else st.n_states

    def n_transitions(self, task_id: int) -> int:
        st = self._tasks.get(task_id)
        return 0 if st is None else st.n_transitions

    def task_states(self, task_id: int) -> np.ndarray:
        return self._store(task_id).states

    def sample_futures(self, task_id: int, s: int, n: int, rng: np.random.Generator):
        """States that followed an occurrence of ``s`` later in the same episode, or ``None``."""
        st = self._store(task_id)
        if s + 1 >= st.occ_offsets.size:
            return None
        lo, hi = st.occ_offsets[s], st.occ_offsets[s + 1]
        if hi == lo:
            return None
        pos = st.occ_order[rng.integers(lo, hi, size=n)]
        return self._future_of_positions(st, pos, rng)

    @staticmethod
    def _future_of_positions(st: _TaskStore, pos: np.ndarray, rng) -> np.ndarray:
        ep = np.searchsorted(st.ep_start, pos, side="right") - 1
        t = pos - st.ep_start[ep]
        span = st.ep_len[ep] - t
        t_future = t + 1 + np.floor(rng.random(pos.size) * span).astype(np.int64)
        return st.states[st.ep_start[ep] + t_future]

    def future_batch(self, task_id: int, sources: np.ndarray, rng: np.random.Generator):
        """Vectorized :meth:`sample_futures` with one draw per source; ``-1`` where ``s`` was never seen."""
        st = self._store(task_id)
        sources = np.asarray(sources, dtype=np.int64)
        out = np.full(sources.size, -1, dtype=np.int64)
        ok = sources + 1 < st.occ_offsets.size
        lo = np.zeros(sources.size, dtype=np.int64)
        cnt = np.zeros(sources.size, dtype=np.int64)
        lo[ok] = st.occ_offsets[sources[ok]]
        cnt[ok] = st.occ_offsets[sources[ok] + 1] - lo[ok]
        seen = cnt > 0
        if seen.any():
            pick = lo[seen] + np.floor(rng.random(seen.sum()) * cnt[seen]).astype(np.int64)
            out[seen] = self._future_of_positions(st, st.occ_order[pick], rng)
        return out

    # -- atomic relabeling --------------------------------------------------

    @staticmethod
    def relabel_episode(traj: Trajectory, t: int, rng: np.random.Generator) -> int:
        return int(traj.states[rng.integers(0, len(traj) + 1)])

    @staticmethod
    def relabel_future(traj: Trajectory, t: int, rng: np.random.Generator) -> int:
        if t >= len(traj):
            raise NoFutureError("no state follows the last step of an episode")
        return int(traj.states[rng.integers(t + 1, len(traj) + 1)])

    def relabel_pertask(self, task_id: int, rng: np.random.Generator) -> int:
        states = self._store(task_id).states
        return int(states[rng.integers(0, states.size)])

    # -- batches -------------------------------------------------------------

    def sample_training_batch(
        self,
        task_id: int,
        mixture: MixtureSpec,
        n: int,
        rng: np.random.Generator,
        generator=None,
        ctx=None,
    ) -> PairBatch:
        """Draw ``n`` source transitions uniformly and relabel each per ``mixture``.

        ``generator`` and ``ctx`` (a task context) are needed only when the
        mixture can pick the generate strategy.
        """
        st = self._store(task_id)
        n_tr = st.actions.size
        idx = rng.integers(0, n_tr, size=n)
        ep, t = st.tr_ep[idx], st.tr_t[idx]
        start, length = st.ep_start[ep], st.ep_len[ep]
        pos = start + t
        s, s2 = st.states[pos], st.states[pos + 1]
        tags = rng.choice(4, size=n, p=mixture.tag_probs())
        target = np.empty(n, dtype=np.int64)

        m = tags == EPISODE
        target[m] = st.states[start[m] + np.floor(rng.random(m.sum()) * (length[m] + 1)).astype(np.int64)]
        m = tags == FUTURE
        span = length[m] - t[m]
        target[m] = st.states[start[m] + t[m] + 1 + np.floor(rng.random(m.sum()) * span).astype(np.int64)]
        m = tags == PERTASK
        target[m] = st.states[rng.integers(0, st.states.size, size=m.sum())]
        m = tags == GENERATE
        if m.any():
            if generator is None or ctx is None:
                raise ValueError("mixture uses generate but no generator was given")
            target[m] = generator.sample_ids(ctx, s[m], rng, self)

        return PairBatch(task_id, s, st.actions[idx], st.rewards[idx], s2, st.terminals[idx],
                         target, tags, ep, t)

    # -- persistence ---------------------------------------------------------

    def dumps(self) -> str:
        return "".join(json.dumps(tr.to_dict()) + "\n" for tr in self._order)

    @classmethod
    def loads(cls, text: str, capacity: int = 10_000) -> "ReplayBuffer":
        buf = cls(capacity)
        for line in text.splitlines():
            if line.strip():
                buf.add(Trajectory.from_dict(json.loads(line)))
        return buf
