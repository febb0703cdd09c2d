"""Proxy problems: checkpoint graphs planned over with SMDP value iteration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distributional import discount_weights
from .errors import ConvergenceError

EDGE_THRESHOLD = 8.0
N_CANDIDATES = 32
N_MEDOIDS = 12
SMDP_SWEEPS = 5


# ---------------------------------------------------------------------------
# k-medoids


@dataclass
class KMedoidsResult:
    medoids: list
    labels: np.ndarray
    cost_history: list

    @property
    def cost(self) -> float:
        return self.cost_history[-1]


def _cost(dist: np.ndarray, medoids) -> float:
    return float(dist[:, medoids].min(axis=1).sum())


def _swap_phase(dist: np.ndarray, medoids: list, forced: list, max_iter: int) -> tuple[list, list]:
    n = dist.shape[0]
    history = [_cost(dist, medoids)]
    for _ in range(max_iter):
        best_swap, best_cost = None, history[-1]
        for i, m in enumerate(medoids):
            if m in forced:
                continue
            others = medoids[:i] + medoids[i + 1:]
            base = dist[:, others].min(axis=1) if others else np.full(n, np.inf)
            # cost of replacing medoid i by every candidate c at once
            costs = np.minimum(base[:, None], dist).sum(axis=0)
            costs[medoids] = np.inf
            c = int(np.argmin(costs))
            if costs[c] < best_cost - 1e-12:
                best_swap, best_cost = (i, c), float(costs[c])
        if best_swap is None:
            break
        medoids = medoids.copy()
        medoids[best_swap[0]] = best_swap[1]
        history.append(best_cost)
    return medoids, history


def kmedoids(dist: np.ndarray, k: int, forced=(), max_iter: int = 100, restarts: int = 8,
             seed: int = 0) -> KMedoidsResult:
    """PAM on a precomputed dissimilarity matrix with some medoids pinned.

    A greedy build phase seeds the medoids starting from the forced ones. The
    swap phase then repeatedly applies the single medoid/non-medoid exchange
    that lowers the total cost the most, never touching the forced medoids,
    until no exchange helps. Extra random restarts guard against poor local
    optima; the returned history belongs to the winning run.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    forced = sorted(set(int(f) for f in forced))
    if k >= n:
        return KMedoidsResult(list(range(n)), np.arange(n), [0.0])
    if len(forced) > k:
        raise ValueError("more forced medoids than clusters")
    medoids = list(forced)
    while len(medoids) < k:
        base = dist[:, medoids].min(axis=1) if medoids else np.full(n, np.inf)
        costs = np.minimum(base[:, None], dist).sum(axis=0)
        costs[medoids] = np.inf
        medoids.append(int(np.argmin(costs)))
    starts = [medoids]
    rng = np.random.default_rng(seed)
    free = [c for c in range(n) if c not in forced]
    for _ in range(restarts):
        starts.append(forced + list(rng.choice(free, size=k - len(forced), replace=False)))
    best = None
    for start in starts:
        meds, history = _swap_phase(dist, [int(m) for m in start], forced, max_iter)
        if best is None or history[-1] < best[1][-1] - 1e-12:
            best = (meds, history)
    medoids = sorted(best[0])
    labels = np.asarray(medoids)[np.argmin(dist[:, medoids], axis=1)]
    return KMedoidsResult(medoids, labels, best[1])


def symmetric_truncated(D: np.ndarray, cap: float) -> np.ndarray:
    Dt = np.minimum(D, cap)
    return np.minimum(Dt, Dt.T)


def kmedoids_prune(candidates, D: np.ndarray, k: int, forced=(), threshold: float = EDGE_THRESHOLD) -> list:
    """Keep ``k`` representative candidates, always including ``forced`` positions."""
    n = len(candidates)
    if k >= n:
        return list(candidates)
    res = kmedoids(symmetric_truncated(D, 2 * threshold), k, forced)
    return [candidates[i] for i in res.medoids]


# ---------------------------------------------------------------------------
# proxy problems


@dataclass
class ProxyProblem:
    encodings: list
    tags: list
    sources: np.ndarray  # state read when the vertex is a source, -1 if none
    targets: np.ndarray  # target id in the estimators' space
    R: np.ndarray
    Gamma: np.ndarray
    D: np.ndarray
    pruned: np.ndarray
    terminal: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.encodings)

    def to_json(self) -> str:
        return json.dumps({
            "vertices": [{"encoding": list(e), "provenance": t} for e, t in zip(self.encodings, self.tags)],
            "R": np.round(self.R, 10).tolist(),
            "Gamma": np.round(self.Gamma, 10).tolist(),
            "D": np.round(self.D, 10).tolist(),
            "pruned": self.pruned.astype(int).tolist(),
        }, indent=1)


@dataclass
class Plan:
    selected: int | None
    values: np.ndarray
    q0: np.ndarray

    @property
    def ok(self) -> bool:
        return self.selected is not None


def annotate_edges(sources, targets, terminal, learners, gamma: float):
    """Edge matrices read from the estimators under their current policy.

    Returns ``(R, Gamma, D)``. Self loops, edges into vertex 0 and rows of
    terminal vertices are zeroed.
    """
    sources, targets = np.asarray(sources), np.asarray(targets)
    terminal = np.asarray(terminal, dtype=bool)
    n = sources.size
    src = np.where(terminal, 0, sources)[:, None].repeat(n, 1)
    tgt = targets[None, :].repeat(n, 0)
    pol = learners.policy
    hist = learners.distance.marginal(src, tgt, pol)
    w = discount_weights(hist.shape[-1], gamma)
    Gamma = hist @ w
    D = hist @ learners.distance.support
    if learners.reward is not None:
        R = learners.reward.marginal(src, tgt, pol) @ learners.reward.support
    else:
        R = np.zeros((n, n))
    for M in (R, Gamma, D):
        M[terminal] = 0.0
        np.fill_diagonal(M, 0.0)
        M[:, 0] = 0.0
    return R, Gamma, D


def prune_edges(D: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """True where an edge is too long to keep."""
    return D > threshold


def _edge_mask(n: int, pruned: np.ndarray) -> np.ndarray:
    usable = ~pruned.copy()
    np.fill_diagonal(usable, False)
    usable[:, 0] = False
    return usable


def smdp_value_iteration(R: np.ndarray, Gamma: np.ndarray, pruned: np.ndarray,
                         iterations: int | None = SMDP_SWEEPS, tol: float = 1e-10,
                         max_iter: int = 100_000) -> Plan:
    """Sweeps of ``Q = R + Gamma V`` over usable edges starting from ``V = 0``.

    ``iterations=None`` runs to the fixed point instead of a fixed sweep count.
    """
    n = R.shape[0]
    usable = _edge_mask(n, pruned)
    V = np.zeros(n)
    sweeps = iterations if iterations is not None else max_iter
    for _ in range(sweeps):
        Q = np.where(usable, R + Gamma * V[None, :], -np.inf)
        V_new = np.where(usable.any(axis=1), Q.max(axis=1), 0.0)
        done = np.max(np.abs(V_new - V)) <= tol
        V = V_new
        if iterations is None and done:
            break
    else:
        if iterations is None:
            raise ConvergenceError("SMDP value iteration did not converge")
    Q = np.where(usable, R + Gamma * V[None, :], -np.inf)
    q0 = Q[0]
    selected = int(np.argmax(q0)) if usable[0].any() else None
    return Plan(selected, V, q0)


def _default_maps(ctx, target_of, source_of):
    target_of = target_of or ctx.space.id_of
    if source_of is None:
        def source_of(enc):
            return int(ctx.space.state_of[ctx.space.id_of(enc)])
    return target_of, source_of


def annotate_vertices(ctx, vertices, tags, learners, gamma: float = 0.99, threshold: float = EDGE_THRESHOLD,
                      target_of=None, source_of=None) -> ProxyProblem:
    """Proxy problem over a fixed vertex list whose first entry is the current state."""
    target_of, source_of = _default_maps(ctx, target_of, source_of)
    src = np.array([source_of(e) for e in vertices])
    tgt = np.array([target_of(e) for e in vertices])
    term = (src < 0) | ctx.mdp.terminal[np.maximum(src, 0)]
    R, G, D = annotate_edges(src, tgt, term, learners, gamma)
    return ProxyProblem(list(vertices), list(tags), src, tgt, R, G, D, prune_edges(D, threshold), term)


def reannotate(proxy: ProxyProblem, ctx, s: int, learners, gamma: float = 0.99,
               threshold: float = EDGE_THRESHOLD, target_of=None, source_of=None) -> ProxyProblem:
    """Keep the checkpoints of ``proxy`` but move vertex 0 to state ``s``."""
    here = ctx.mdp.encodings[s]
    keep = [j for j in range(1, len(proxy)) if proxy.encodings[j] != here]
    vertices = [here] + [proxy.encodings[j] for j in keep]
    tags = ["current"] + [proxy.tags[j] for j in keep]
    return annotate_vertices(ctx, vertices, tags, learners, gamma, threshold, target_of, source_of)


def build_proxy(ctx, s: int, generator, learners, rng: np.random.Generator, replay=None,
                k: int = N_MEDOIDS, n_gen: int = N_CANDIDATES, threshold: float = EDGE_THRESHOLD,
                gamma: float = 0.99, target_of=None, source_of=None, gate=None) -> ProxyProblem:
    """Propose, filter, cluster, annotate and prune a proxy problem around state ``s``.

    ``target_of`` maps an encoding to the learners' target id (identity on the
    task's own target space by default) and ``source_of`` maps it to the state
    the learners read when the vertex is a source. ``gate(s, ids)`` receives
    ids in the task's own target space and returns a keep mask; the goal is
    immune to it.
    """
    mdp = ctx.mdp
    target_of, source_of = _default_maps(ctx, target_of, source_of)
    cands = generator.propose(ctx, s, n_gen, rng, replay)
    goal_enc = mdp.encodings[ctx.goal_state]
    here = mdp.encodings[s]
    seen, encs, tags = set(), [], []
    for e, t in zip(cands.encodings, cands.tags):
        if e in seen or e == here or target_of(e) < 0:
            continue
        seen.add(e)
        encs.append(e)
        tags.append(t)
    if gate is not None and encs:
        keep = gate(s, np.array([ctx.space.id_of(e) for e in encs]))
        kept = [(e, t) for e, t, kp in zip(encs, tags, keep) if kp or e == goal_enc]
        encs, tags = [e for e, _ in kept], [t for _, t in kept]

    proxy = annotate_vertices(ctx, [here] + encs, ["current"] + tags, learners, gamma, threshold,
                              target_of, source_of)
    # drop candidates the estimators consider unreachable from here
    keep = [j for j in range(1, len(proxy)) if proxy.Gamma[0, j] > 0.0 or proxy.encodings[j] == goal_enc]
    encs = [proxy.encodings[j] for j in keep]
    tags = [proxy.tags[j] for j in keep]
    if len(encs) > k:
        sub = np.array(keep)
        forced = [i for i, e in enumerate(encs) if e == goal_enc]
        chosen = kmedoids_prune(list(range(len(encs))), proxy.D[np.ix_(sub, sub)], k, forced, threshold)
        encs, tags = [encs[i] for i in chosen], [tags[i] for i in chosen]
    return annotate_vertices(ctx, [here] + encs, ["current"] + tags, learners, gamma, threshold,
                             target_of, source_of)
