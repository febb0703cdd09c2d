"""Exact dynamic-programming ground truths over a :class:`TabularMdp`.

Policies are ``[S, A]`` arrays. Functions dealing with goal-conditioned
behaviour also accept ``[G, S, A]`` arrays holding one policy per target state.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from enum import Enum

import numpy as np

from .errors import ConvergenceError, NoUniqueValueError
from .mdp import TabularMdp

TIE_ATOL = 1e-12


class TargetClass(str, Enum):
    G0 = "G0"  # reachable from the source
    G1 = "G1"  # not a state of the MDP
    G2 = "G2"  # a state of the MDP that the source can no longer reach


# ---------------------------------------------------------------------------
# policy evaluation and control


def bellman_operator(mdp: TabularMdp, policy: np.ndarray, v: np.ndarray, gamma: float) -> np.ndarray:
    P_pi, r_pi = mdp.policy_dynamics(policy)
    return r_pi + gamma * P_pi @ v


def policy_evaluation_exact(
    mdp: TabularMdp, policy: np.ndarray, gamma: float, residual_tol: float = 1e-10
) -> np.ndarray:
    """Solve ``(I - gamma P_pi) v = r_pi`` directly."""
    P_pi, r_pi = mdp.policy_dynamics(policy)
    A = np.eye(mdp.n_states) - gamma * P_pi
    if np.linalg.cond(A) > 1e12:
        raise NoUniqueValueError("policy does not terminate and gamma == 1")
    v = np.linalg.solve(A, r_pi)
    residual = np.max(np.abs(A @ v - r_pi), initial=0.0)
    if residual > residual_tol * max(1.0, np.max(np.abs(r_pi), initial=0.0)):
        raise NoUniqueValueError(f"linear solve residual {residual:.3g} too large")
    return v


def policy_evaluation_iterative(
    mdp: TabularMdp,
    policy: np.ndarray,
    gamma: float,
    tol: float = 1e-9,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Apply the policy's Bellman operator until the value error is below ``tol``.

    For ``gamma < 1`` the stopping rule uses the contraction bound, so the
    returned values are within ``tol`` of the fixed point in sup norm.
    """
    P_pi, r_pi = mdp.policy_dynamics(policy)
    stop = tol * (1.0 - gamma) / gamma if 0.0 < gamma < 1.0 else tol
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = r_pi + gamma * P_pi @ v
        delta = np.max(np.abs(v_new - v), initial=0.0)
        v = v_new
        if delta <= stop:
            return v
    raise ConvergenceError(f"no convergence after {max_iter} sweeps")


def q_from_v(mdp: TabularMdp, v: np.ndarray, gamma: float) -> np.ndarray:
    return mdp.r + gamma * np.einsum("sat,t->sa", mdp.P, v)


def greedy(q: np.ndarray, atol: float = TIE_ATOL) -> np.ndarray:
    """Deterministic greedy policy over the last axis; ties go to the lowest index."""
    best = q.max(axis=-1, keepdims=True)
    is_best = q >= best - atol
    choice = np.argmax(is_best, axis=-1)
    return np.eye(q.shape[-1])[choice]


def value_iteration(
    mdp: TabularMdp,
    gamma: float,
    tol: float = 1e-9,
    max_iter: int = 1_000_000,
    history: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and the greedy deterministic policy extracted from them.

    If ``history`` is a list, the greedy policy of every sweep is appended to it.
    """
    stop = tol * (1.0 - gamma) / gamma if 0.0 < gamma < 1.0 else tol
    v = np.zeros(mdp.n_states)
    live = ~mdp.terminal
    for _ in range(max_iter):
        q = q_from_v(mdp, v, gamma)
        v_new = np.where(live, q.max(axis=1), 0.0)
        if history is not None:
            history.append(greedy(q))
        delta = np.max(np.abs(v_new - v), initial=0.0)
        v = v_new
        if delta <= stop:
            break
    else:
        raise ConvergenceError(f"no convergence after {max_iter} sweeps")
    return v, greedy(q_from_v(mdp, v, gamma))


def goal_conditioned_q(
    mdp: TabularMdp, gamma: float = 0.95, tol: float = 1e-10, max_iter: int = 100_000
) -> np.ndarray:
    """Optimal ``Q[g, s, a]`` for the intrinsic task "enter state g".

    Hitting ``g`` pays 1 and ends the sub-task; every other terminal pays 0.
    """
    n, n_a = mdp.n_states, mdp.n_actions
    flat = mdp.P.reshape(n * n_a, n)
    hit = flat  # hit[(s, a), g] = P(s' = g | s, a)
    cont = (~mdp.terminal)[:, None] & ~np.eye(n, dtype=bool)  # [s', g]
    V = np.zeros((n, n))  # [s, g]
    for _ in range(max_iter):
        Q = hit + gamma * (flat @ (V * cont))
        V_new = Q.reshape(n, n_a, n).max(axis=1)
        if np.max(np.abs(V_new - V)) <= tol:
            return np.transpose(Q.reshape(n, n_a, n), (2, 0, 1))
        V = V_new
    raise ConvergenceError("goal-conditioned value iteration did not converge")


def goal_conditioned_policy(mdp: TabularMdp, gamma: float = 0.95) -> np.ndarray:
    """Greedy ``[G, S, A]`` policy reaching every target state as fast as possible."""
    return greedy(goal_conditioned_q(mdp, gamma))


# ---------------------------------------------------------------------------
# pairwise quantities between states


def _policy_matrices(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """``P_pi`` as ``[S, S]`` or ``[G, S, S]``."""
    if policy.ndim == 2:
        return np.einsum("sa,sat->st", policy, mdp.P)
    return np.einsum("gsa,sat->gst", policy, mdp.P)


def default_horizon(mdp: TabularMdp) -> int:
    layout = getattr(mdp, "layout", None)
    if layout is not None:
        return 4 * layout.width * layout.height
    return 4 * mdp.n_states


def survival(mdp: TabularMdp, policy: np.ndarray, horizon: int, stop_early: bool = True):
    """Yield ``u_k[s, g] = P(target g not hit during steps 1..k)`` for k = 0..horizon.

    Only the first time step ``t >= 1`` counts as a hit, so a state is not
    considered to have reached itself at time zero.
    """
    n = mdp.n_states
    if policy.ndim == 2:
        P_pi = _policy_matrices(mdp, policy)
    else:
        weights = np.transpose(policy, (2, 1, 0))  # [a, s, g]
    not_g = ~np.eye(n, dtype=bool)  # [s', g]
    term = mdp.terminal
    u = np.ones((n, n))
    yield 0, u
    for k in range(1, horizon + 1):
        w = np.where(term[:, None], 1.0, u) * not_g
        if policy.ndim == 2:
            u_new = P_pi @ w
        else:
            u_new = sum(weights[a] * (mdp.P[:, a, :] @ w) for a in range(mdp.n_actions))
        u_new[term] = 1.0
        converged = stop_early and np.max(np.abs(u_new - u)) < 1e-15
        u = u_new
        yield k, u
        if converged:
            return


def pairwise_distance(
    mdp: TabularMdp, policy: np.ndarray, horizon: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """First-hitting distances ``D[s, g]`` under ``policy`` with ``g`` absorbing.

    Returns ``(D, never)``. ``D`` is the expected hitting time truncated at
    ``horizon`` and is ``inf`` exactly where ``never`` is set, i.e. where
    ``g`` cannot be hit within ``horizon`` steps from ``s``.
    """
    horizon = default_horizon(mdp) if horizon is None else horizon
    total = np.zeros((mdp.n_states, mdp.n_states))
    last_k, u = 0, None
    for k, u in survival(mdp, policy, horizon):
        if k < horizon:
            total += u
        last_k = k
    if last_k < horizon:
        # survival has stopped changing; account for the remaining steps
        total += (horizon - 1 - last_k) * u
    never = u >= 1.0 - 1e-12
    D = np.where(never, np.inf, total)
    return D, never


def distance_distribution(mdp: TabularMdp, policy: np.ndarray, n_bins: int = 16) -> np.ndarray:
    """Exact ``p[s, g, t-1] = P(D = t)`` for t < n_bins; the last bin holds ``D >= n_bins`` or never."""
    n = mdp.n_states
    out = np.zeros((n, n, n_bins))
    us = [u.copy() for _, u in survival(mdp, policy, n_bins - 1, stop_early=False)]
    for t in range(1, n_bins):
        out[:, :, t - 1] = us[t - 1] - us[t]
    out[:, :, n_bins - 1] = us[n_bins - 1]
    return np.clip(out, 0.0, 1.0)


def tau_feasibility_true(
    mdp: TabularMdp, policy: np.ndarray, s: int, g: int, tau: int
) -> float:
    """``P(D(s, g) <= tau)`` by forward propagation of the state distribution."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    pol = policy[g] if policy.ndim == 3 else policy
    P_pi = np.einsum("sa,sat->st", pol, mdp.P)
    mass = np.zeros(mdp.n_states)
    mass[s] = 1.0
    hit = 0.0
    for _ in range(tau):
        mass = mass @ P_pi
        hit += mass[g]
        mass[g] = 0.0
    return float(hit)


def pairwise_reward_discount(
    mdp: TabularMdp, policy: np.ndarray, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative discounted reward and discount from ``i`` until ``j`` is hit.

    ``V[i, j]`` sums rewards up to and including the transition entering ``j``;
    ``Gamma[i, j] = E[gamma^D 1{j hit before termination}]``.
    """
    n = mdp.n_states
    r = mdp.r
    V = np.zeros((n, n))
    G = np.zeros((n, n))
    P_shared = _policy_matrices(mdp, policy) if policy.ndim == 2 else None
    eye = np.eye(n)
    for j in range(n):
        if P_shared is None:
            pol = policy[j]
            P_pi = np.einsum("sa,sat->st", pol, mdp.P)
        else:
            pol, P_pi = policy, P_shared
        r_pi = np.einsum("sa,sa->s", pol, r)
        P_cont = P_pi.copy()
        P_cont[:, j] = 0.0
        A = eye - gamma * P_cont
        b = np.stack([r_pi, gamma * P_pi[:, j]], axis=1)
        x = np.linalg.solve(A, b)
        V[:, j], G[:, j] = x[:, 0], x[:, 1]
    return V, G


# ---------------------------------------------------------------------------
# reachability and target classes


def adjacency(mdp: TabularMdp) -> list[np.ndarray]:
    cached = getattr(mdp, "_adjacency", None)
    if cached is None:
        any_p = mdp.P.sum(axis=1) > 0
        cached = [np.flatnonzero(row) for row in any_p]
        mdp._adjacency = cached
    return cached


def reachable_set(mdp: TabularMdp, source: int) -> np.ndarray:
    """Boolean mask of states reachable from ``source`` in zero or more steps."""
    cache = mdp.__dict__.setdefault("_reach_cache", {})
    if source in cache:
        return cache[source]
    adj = adjacency(mdp)
    seen = np.zeros(mdp.n_states, dtype=bool)
    seen[source] = True
    queue = deque([source])
    while queue:
        s = queue.popleft()
        for t in adj[s]:
            if not seen[t]:
                seen[t] = True
                queue.append(t)
    cache[source] = seen
    return seen


def reachability_matrix(mdp: TabularMdp) -> np.ndarray:
    return np.stack([reachable_set(mdp, s) for s in range(mdp.n_states)])


def classify_target(mdp: TabularMdp, source: int, candidate) -> TargetClass:
    """Class of ``candidate`` (an encoding) seen from state index ``source``."""
    g = mdp.index.get(candidate)
    if g is None:
        return TargetClass.G1
    return TargetClass.G0 if reachable_set(mdp, source)[g] else TargetClass.G2


def bfs_distances(mdp: TabularMdp, source: int) -> np.ndarray:
    """Fewest transitions from ``source`` to every state; terminal states are not expanded."""
    adj = adjacency(mdp)
    dist = np.full(mdp.n_states, np.inf)
    dist[source] = 0
    queue = deque([source])
    while queue:
        s = queue.popleft()
        for t in adj[s]:
            if dist[t] == np.inf:
                dist[t] = dist[s] + 1
                queue.append(t)
    return dist


def oracle_csv(mdp: TabularMdp, policy: np.ndarray, gamma: float) -> str:
    """Rows ``s,g,d_true,gamma_true,v_true,class`` for every non-terminal source."""
    D, _ = pairwise_distance(mdp, policy)
    V, G = pairwise_reward_discount(mdp, policy, gamma)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "g", "d_true", "gamma_true", "v_true", "class"])
    for s in np.flatnonzero(~mdp.terminal):
        reach = reachable_set(mdp, int(s))
        for g in range(mdp.n_states):
            cls = TargetClass.G0 if reach[g] else TargetClass.G2
            d = "inf" if np.isinf(D[s, g]) else f"{D[s, g]:.10g}"
            writer.writerow([int(s), g, d, f"{G[s, g]:.10g}", f"{V[s, g]:.10g}", cls.value])
    return buf.getvalue()
