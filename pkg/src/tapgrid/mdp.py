"""Finite MDP container shared by the environments, the DP oracle and the agents."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np


@dataclass
class TabularMdp:
    """Enumerated MDP with dense tables.

    ``P[s, a, s']`` holds transition probabilities and ``R[s, a, s']`` the reward
    emitted on that transition. Terminal states have all-zero rows.
    """

    P: np.ndarray
    R: np.ndarray
    terminal: np.ndarray
    init: np.ndarray
    encodings: Sequence[Hashable] | None = None
    goal_states: tuple[int, ...] = ()
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.init = np.asarray(self.init, dtype=float)
        n_s, n_a, n_s2 = self.P.shape
        if n_s != n_s2 or self.R.shape != self.P.shape:
            raise ValueError("P and R must both have shape [S, A, S]")
        if self.encodings is None:
            self.encodings = list(range(n_s))
        self.index = {e: i for i, e in enumerate(self.encodings)}
        self._cdf = None

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def r(self) -> np.ndarray:
        """Expected one-step reward ``r(s, a)``."""
        return np.einsum("sat,sat->sa", self.P, self.R)

    def policy_dynamics(self, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(P_pi [S, S], r_pi [S])`` for a ``[S, A]`` policy."""
        P_pi = np.einsum("sa,sat->st", policy, self.P)
        r_pi = np.einsum("sa,sa->s", policy, self.r)
        return P_pi, r_pi

    def successors(self, s: int) -> np.ndarray:
        """States reachable in one step from ``s`` under some action."""
        return np.flatnonzero(self.P[s].sum(axis=0) > 0)

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        if self._cdf is None:
            self._cdf = np.cumsum(self.P, axis=2)
        row = self._cdf[s, a]
        s2 = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        s2 = min(s2, self.n_states - 1)
        return s2, float(self.R[s, a, s2])

    def sample_init(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.init))

    def check(self, atol: float = 1e-9) -> None:
        """Raise if any row is malformed."""
        sums = self.P.sum(axis=2)
        live = ~self.terminal
        if not np.allclose(sums[live], 1.0, atol=atol):
            raise ValueError("non-terminal transition rows must sum to 1")
        if np.any(sums[self.terminal] != 0):
            raise ValueError("terminal states must have no outgoing transitions")
        if not np.isclose(self.init.sum(), 1.0, atol=atol):
            raise ValueError("initial distribution must sum to 1")


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    terminal_frac: float = 0.2,
    branching: int = 3,
) -> TabularMdp:
    """Random sparse MDP used by tests and the bound checker."""
    n_term = int(round(terminal_frac * n_states))
    terminal = np.zeros(n_states, dtype=bool)
    if n_term:
        terminal[rng.choice(n_states, n_term, replace=False)] = True
    P = np.zeros((n_states, n_actions, n_states))
    R = np.zeros_like(P)
    for s in np.flatnonzero(~terminal):
        for a in range(n_actions):
            k = min(branching, n_states)
            nxt = rng.choice(n_states, k, replace=False)
            P[s, a, nxt] = rng.dirichlet(np.ones(k))
            R[s, a, nxt] = rng.uniform(-1.0, 1.0, k)
    init = (~terminal).astype(float)
    init /= init.sum()
    return TabularMdp(P, R, terminal, init)


def uniform_policy(mdp: TabularMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def random_policy(mdp: TabularMdp, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
