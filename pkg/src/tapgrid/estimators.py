"""Tabular goal-conditioned learners.

All tables are dense over ``(state, action, target id)``. Updates take a
:class:`~tapgrid.replay.PairBatch` together with the target space's ``hit``
matrix. Several pairs in one batch that share a key are averaged into a
single step, so batch order never matters.
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .distributional import N_DISTANCE_BINS, shift_probs, two_hot_probs
from .errors import QueryRangeError

ALPHA_MIN = 0.1
GAMMA_INTRINSIC = 0.95


def step_sizes(counts: np.ndarray, alpha_min: float = ALPHA_MIN) -> np.ndarray:
    """``max(alpha_min, 1 / sqrt(k))`` for visit counts ``k >= 1``."""
    return np.maximum(alpha_min, 1.0 / np.sqrt(np.maximum(counts, 1)))


def _group(keys: np.ndarray, values: np.ndarray):
    """Unique keys, their multiplicities and the mean of ``values`` per key."""
    uniq, inv, cnt = np.unique(keys, return_inverse=True, return_counts=True)
    sums = np.zeros((uniq.size,) + values.shape[1:])
    np.add.at(sums, inv, values)
    return uniq, cnt, sums / cnt.reshape((-1,) + (1,) * (values.ndim - 1))


class GoalConditionedQ:
    """Q-learning on the goal-augmented task: +1 for entering the target, 0 otherwise."""

    def __init__(self, n_states: int, n_actions: int, n_targets: int,
                 gamma: float = GAMMA_INTRINSIC, alpha_min: float = ALPHA_MIN):
        self.q = np.zeros((n_states, n_actions, n_targets))
        self.counts = np.zeros(self.q.shape, dtype=np.int64)
        self.gamma = gamma
        self.alpha_min = alpha_min

    @property
    def shape(self):
        return self.q.shape

    def greedy_actions(self, s: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Argmax over actions; ``np.argmax`` already picks the lowest index on ties."""
        return np.argmax(self.q[s, :, g], axis=-1)

    def weights(self, s: np.ndarray, g: np.ndarray) -> np.ndarray:
        """One-hot on the greedy action (lowest index among ties)."""
        return np.eye(self.q.shape[1])[self.greedy_actions(s, g)]

    def tie_weights(self, s: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Uniform over every action within ``atol`` of the best."""
        q = self.q[s, :, g]
        top = q >= q.max(axis=-1, keepdims=True) - 1e-12
        return top / top.sum(axis=-1, keepdims=True)

    def targets(self, batch, hit: np.ndarray) -> np.ndarray:
        h = hit[batch.s_next, batch.target]
        boot = self.gamma * self.q[batch.s_next, :, batch.target].max(axis=-1)
        return np.where(h, 1.0, np.where(batch.terminal, 0.0, boot))

    def update(self, batch, hit: np.ndarray) -> None:
        n_a, n_g = self.q.shape[1:]
        keys = (batch.s * n_a + batch.a) * n_g + batch.target
        uniq, cnt, mean = _group(keys, self.targets(batch, hit))
        flat_c = self.counts.reshape(-1)
        flat_c[uniq] += cnt
        alpha = step_sizes(flat_c[uniq], self.alpha_min)
        flat_q = self.q.reshape(-1)
        flat_q[uniq] += alpha * (mean - flat_q[uniq])

    def as_policy(self, n_targets: int | None = None) -> np.ndarray:
        """Greedy ``[G, S, A]`` policy for the first ``n_targets`` targets."""
        n_targets = self.q.shape[2] if n_targets is None else n_targets
        q = np.transpose(self.q[:, :, :n_targets], (2, 0, 1))
        return np.eye(self.q.shape[1])[np.argmax(q, axis=-1)]


class TablePolicy:
    """Fixed goal-conditioned policy given as a ``[G, S, A]`` array."""

    def __init__(self, probs: np.ndarray):
        self.probs = np.asarray(probs, dtype=float)

    def weights(self, s: np.ndarray, g: np.ndarray) -> np.ndarray:
        return self.probs[g, s]


class _HistogramTable:
    kind = ""

    def __init__(self, n_states: int, n_actions: int, n_targets: int, support: np.ndarray,
                 alpha_min: float = ALPHA_MIN):
        self.support = np.asarray(support, dtype=float)
        n = self.support.size
        self.probs = np.full((n_states, n_actions, n_targets, n), 1.0 / n)
        self.counts = np.zeros((n_states, n_actions, n_targets), dtype=np.int64)
        self.alpha_min = alpha_min

    @property
    def n_bins(self) -> int:
        return self.support.size

    def _mix(self, s, a, g, target_probs) -> None:
        n_a, n_g = self.counts.shape[1:]
        keys = (s * n_a + a) * n_g + g
        uniq, cnt, mean = _group(keys, target_probs)
        flat_c = self.counts.reshape(-1)
        flat_c[uniq] += cnt
        alpha = step_sizes(flat_c[uniq], self.alpha_min)[:, None]
        flat = self.probs.reshape(-1, self.n_bins)
        new = (1.0 - alpha) * flat[uniq] + alpha * mean
        flat[uniq] = new / new.sum(axis=1, keepdims=True)

    def marginal(self, s, g, policy) -> np.ndarray:
        """Histogram at ``(s, g)`` averaged over ``policy``'s action weights."""
        s, g = np.asarray(s), np.asarray(g)
        w = policy.weights(s, g)
        return np.einsum("...a,...an->...n", w, self.probs[s, :, g])

    def expectation(self, s, a, g) -> np.ndarray:
        return self.probs[s, a, g] @ self.support

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "a", "g", "support_kind"] + [f"bin_{i}" for i in range(self.n_bins)])
        n_s, n_a, n_g = self.counts.shape
        for s in range(n_s):
            for a in range(n_a):
                for g in range(n_g):
                    writer.writerow([s, a, g, self.kind] + [f"{p:.10g}" for p in self.probs[s, a, g]])
        return buf.getvalue()


class DistanceEstimator(_HistogramTable):
    """Distribution of the first time the target is hit, over bins ``1..T``.

    The last bin collects ``>= T`` and targets that are never hit.
    """

    kind = "distance"

    def __init__(self, n_states: int, n_actions: int, n_targets: int,
                 n_bins: int = N_DISTANCE_BINS, alpha_min: float = ALPHA_MIN):
        super().__init__(n_states, n_actions, n_targets, np.arange(1, n_bins + 1), alpha_min)

    def targets(self, batch, hit: np.ndarray, policy) -> np.ndarray:
        n = self.n_bins
        h = hit[batch.s_next, batch.target]
        out = shift_probs(self.marginal(batch.s_next, batch.target, policy))
        out[batch.terminal] = np.eye(n)[n - 1]
        out[h] = np.eye(n)[0]
        return out

    def update(self, batch, hit: np.ndarray, policy) -> None:
        self._mix(batch.s, batch.a, batch.target, self.targets(batch, hit, policy))


class RewardEstimator(_HistogramTable):
    """Distribution of the discounted reward collected until the target is hit."""

    kind = "reward"

    def __init__(self, n_states: int, n_actions: int, n_targets: int, v_max: float = 1.0,
                 gamma: float = 0.99, n_bins: int = 16, v_min: float = 0.0, alpha_min: float = ALPHA_MIN):
        super().__init__(n_states, n_actions, n_targets, np.linspace(v_min, v_max, n_bins), alpha_min)
        self.gamma = gamma

    def targets(self, batch, hit: np.ndarray, policy) -> np.ndarray:
        h = hit[batch.s_next, batch.target]
        boot = self.marginal(batch.s_next, batch.target, policy) @ self.support
        stop = h | batch.terminal
        value = batch.r + np.where(stop, 0.0, self.gamma * boot)
        return two_hot_probs(self.support, value)

    def update(self, batch, hit: np.ndarray, policy) -> None:
        self._mix(batch.s, batch.a, batch.target, self.targets(batch, hit, policy))


class FeasibilityEvaluator:
    """Histogram of the hitting time ``D_pi(s, g)`` with the action marginalized out.

    Bins are ``1..T`` with ``T`` meaning ``>= T`` or never. A transition
    ``(s, a, s')`` updates ``(s, g)`` with its step size scaled by
    ``pi(a | s, g) / max_b pi(b | s, g)``, so actions the policy would not take
    are ignored and tied greedy actions all count. ``query`` reads the table
    directly and ``tau_feasibility`` turns it into ``P(D <= tau)``.
    """

    kind = "feasibility"

    def __init__(self, n_states: int, n_targets: int, n_bins: int = N_DISTANCE_BINS,
                 alpha_min: float = ALPHA_MIN):
        self.support = np.arange(1, n_bins + 1, dtype=float)
        self.probs = np.full((n_states, n_targets, n_bins), 1.0 / n_bins)
        self.counts = np.zeros((n_states, n_targets), dtype=np.int64)
        self.alpha_min = alpha_min

    @property
    def n_bins(self) -> int:
        return self.support.size

    def targets(self, batch, hit: np.ndarray) -> np.ndarray:
        n = self.n_bins
        out = shift_probs(self.probs[batch.s_next, batch.target])
        out[batch.terminal] = np.eye(n)[n - 1]
        out[hit[batch.s_next, batch.target]] = np.eye(n)[0]
        return out

    def update(self, batch, hit: np.ndarray, policy) -> None:
        w = getattr(policy, "tie_weights", policy.weights)(batch.s, batch.target)
        rho = w[np.arange(len(batch)), batch.a] / w.max(axis=-1)
        m = rho > 0
        if not m.any():
            return
        tgt = self.targets(batch, hit)[m]
        n_g = self.counts.shape[1]
        keys = batch.s[m] * n_g + batch.target[m]
        # weight each pair's target by its ratio before grouping
        uniq, inv, cnt = np.unique(keys, return_inverse=True, return_counts=True)
        wsum = np.zeros(uniq.size)
        np.add.at(wsum, inv, rho[m])
        mean = np.zeros((uniq.size, self.n_bins))
        np.add.at(mean, inv, rho[m][:, None] * tgt)
        mean /= wsum[:, None]
        flat_c = self.counts.reshape(-1)
        flat_c[uniq] += cnt
        alpha = (step_sizes(flat_c[uniq], self.alpha_min) * wsum / cnt)[:, None]
        flat = self.probs.reshape(-1, self.n_bins)
        new = (1.0 - alpha) * flat[uniq] + alpha * mean
        flat[uniq] = new / new.sum(axis=1, keepdims=True)

    def query(self, s, g) -> np.ndarray:
        return self.probs[np.asarray(s), np.asarray(g)]

    def expectation(self, s, g) -> np.ndarray:
        return self.query(s, g) @ self.support

    def never(self, s, g) -> np.ndarray:
        return self.query(s, g)[..., -1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "a", "g", "support_kind"] + [f"bin_{i}" for i in range(self.n_bins)])
        n_s, n_g = self.counts.shape
        for s in range(n_s):
            for g in range(n_g):
                writer.writerow([s, "", g, self.kind] + [f"{p:.10g}" for p in self.probs[s, g]])
        return buf.getvalue()


def tau_feasibility(evaluator: FeasibilityEvaluator, s, g, tau: int) -> np.ndarray:
    if not 1 <= tau < evaluator.n_bins:
        raise QueryRangeError(f"tau must lie in [1, {evaluator.n_bins - 1}], got {tau}")
    return evaluator.query(s, g)[..., :tau].sum(axis=-1)


# ---------------------------------------------------------------------------
# single-pair conveniences mirroring the batched updates


def _as_batch(pair):
    from .replay import PairBatch

    return PairBatch(pair.task_id, *(np.array([v]) for v in (
        pair.s, pair.a, pair.r, pair.s_next, pair.terminal, pair.target, 0, pair.episode, pair.t)))


def update_reward_estimate(table: RewardEstimator, pair, hit, policy) -> None:
    table.update(_as_batch(pair), hit, policy)


def update_distance_estimate(table: DistanceEstimator, pair, hit, policy) -> None:
    table.update(_as_batch(pair), hit, policy)


def update_feasibility(evaluator: FeasibilityEvaluator, pair, hit, policy) -> None:
    evaluator.update(_as_batch(pair), hit, policy)


def q_learning_goal_update(q: GoalConditionedQ, pair, hit) -> None:
    q.update(_as_batch(pair), hit)


# ---------------------------------------------------------------------------
# a bundle used by the agents and experiments


class GoalLearners:
    """Q plus optional distance, reward and feasibility tables for one target space."""

    def __init__(self, n_states: int, n_actions: int, space, gamma: float = 0.99,
                 gamma_int: float = GAMMA_INTRINSIC, v_max: float = 1.0, n_bins: int = N_DISTANCE_BINS,
                 alpha_min: float = ALPHA_MIN, with_reward: bool = True, with_distance: bool = True,
                 with_feasibility: bool = False, fixed_policy=None):
        n_g = len(space)
        self.space = space
        self.q = GoalConditionedQ(n_states, n_actions, n_g, gamma_int, alpha_min)
        self.distance = DistanceEstimator(n_states, n_actions, n_g, n_bins, alpha_min) if with_distance else None
        self.reward = RewardEstimator(n_states, n_actions, n_g, v_max, gamma, alpha_min=alpha_min) if with_reward else None
        self.feasibility = FeasibilityEvaluator(n_states, n_g, n_bins, alpha_min) if with_feasibility else None
        self.fixed_policy = fixed_policy

    @property
    def policy(self):
        return self.fixed_policy if self.fixed_policy is not None else self.q

    def update(self, batch) -> None:
        hit = self.space.hit
        # evaluate the current policy before improving it
        for table in (self.distance, self.reward, self.feasibility):
            if table is not None:
                table.update(batch, hit, self.policy)
        if self.fixed_policy is None:
            self.q.update(batch, hit)
