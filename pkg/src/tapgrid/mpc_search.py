"""Prioritized tree-search model-predictive control over a deterministic model."""
from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import TabularMdp

BEST_FIRST, RANDOM = "best-first", "random"


@dataclass(eq=False)
class SearchNode:
    state: int
    depth: int = 0
    sigma: float = 0.0
    root_action: int | None = None
    terminal: bool = False
    parent: "SearchNode | None" = None

    @property
    def is_root(self) -> bool:
        return self.parent is None


@dataclass(order=True)
class _Branch:
    key: tuple
    node: SearchNode = field(compare=False)
    action: int = field(compare=False)
    value: float = field(compare=False)


@dataclass
class SearchResult:
    action: int
    value: float
    model_calls: int
    expanded: list  # (state, action) in simulation order


def exact_model(mdp: TabularMdp) -> Callable:
    """Most likely successor of every (s, a) with its reward and termination flag."""
    nxt = np.argmax(mdp.P, axis=2)
    rew = np.take_along_axis(mdp.R, nxt[:, :, None], axis=2)[:, :, 0]

    def model(s: int, a: int):
        s2 = int(nxt[s, a])
        return s2, float(rew[s, a]), bool(mdp.terminal[s2])

    return model


def tree_search(
    s0: int,
    actions,
    model: Callable,
    q: Callable,
    gamma: float,
    budget: int,
    heuristic: str = BEST_FIRST,
    rng: np.random.Generator | None = None,
    max_depth: int | None = 5,
) -> SearchResult:
    """Return the first action of the most promising simulated branch.

    ``model(s, a) -> (s', r, terminal)`` and ``q(s) -> array over actions``.
    Every branch carries the value ``sigma + gamma**depth * Q(s, a)``; under
    best-first that value is also its priority, under the random heuristic the
    priority is a uniform draw. Simulated terminal nodes go to a separate queue
    scored by ``sigma`` alone. Branches leaving nodes at ``max_depth`` are kept
    for the final comparison but never simulated.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if heuristic == RANDOM and rng is None:
        raise ValueError("the random heuristic needs an rng")
    actions = list(actions)
    counter = itertools.count()
    queue: list[_Branch] = []  # sorted so that the last element has the highest priority
    frozen: list[_Branch] = []
    terminals: list[tuple[float, int, SearchNode]] = []
    calls = 0
    expanded = []
    n_u = SearchNode(s0)

    while True:
        if n_u.terminal:
            bisect.insort(terminals, (n_u.sigma, -next(counter), n_u))
        else:
            q_vals = q(n_u.state)
            for a in actions:
                value = n_u.sigma + gamma ** n_u.depth * float(q_vals[a])
                prio = value if heuristic == BEST_FIRST else float(rng.random())
                # ties pop in insertion order
                branch = _Branch((prio, -next(counter)), n_u, a, value)
                if max_depth is not None and n_u.depth >= max_depth:
                    frozen.append(branch)
                else:
                    bisect.insort(queue, branch)
        if not queue or calls >= budget:
            break
        branch = queue.pop()
        n_c, a_c = branch.node, branch.action
        s_hat, r_hat, w_hat = model(n_c.state, a_c)
        calls += 1
        expanded.append((n_c.state, a_c))
        n_u = SearchNode(
            s_hat,
            depth=n_c.depth + 1,
            sigma=n_c.sigma + gamma ** n_c.depth * r_hat,
            root_action=a_c if n_c.is_root else n_c.root_action,
            terminal=w_hat,
            parent=n_c,
        )

    pool = queue + frozen
    best = None
    if pool:
        best = max(pool, key=lambda b: (b.value, b.key[1]))
    if terminals:
        sigma, _, n_t = max(terminals, key=lambda x: (x[0], x[1]))
        if best is None or sigma >= best.value:
            return SearchResult(n_t.root_action, sigma, calls, expanded)
    if best is None:
        # nothing left to compare; act greedily on the estimator at the root
        q_root = q(s0)
        a = actions[int(np.argmax([q_root[a] for a in actions]))]
        return SearchResult(a, float(q_root[a]), calls, expanded)
    a = best.action if best.node.is_root else best.node.root_action
    return SearchResult(a, best.value, calls, expanded)


def plan_episode(
    mdp: TabularMdp,
    q_table: np.ndarray,
    rng: np.random.Generator,
    gamma: float = 0.99,
    budget: int = 15,
    heuristic: str = BEST_FIRST,
    model: Callable | None = None,
    max_steps: int = 128,
    start: int | None = None,
    max_depth: int | None = 5,
) -> dict:
    """Run one episode, re-planning at every step and executing only the first action."""
    model = exact_model(mdp) if model is None else model
    s = mdp.sample_init(rng) if start is None else start
    states, actions, rewards = [s], [], []
    for _ in range(max_steps):
        res = tree_search(s, range(mdp.n_actions), model, lambda x: q_table[x], gamma, budget,
                          heuristic, rng, max_depth)
        s, r = mdp.sample_next(s, res.action, rng)
        states.append(s)
        actions.append(res.action)
        rewards.append(r)
        if mdp.terminal[s]:
            break
    return {"states": states, "actions": actions, "rewards": rewards,
            "success": bool(sum(rewards) > 0), "terminal": bool(mdp.terminal[s])}
