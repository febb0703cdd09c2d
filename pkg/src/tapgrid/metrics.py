"""Evaluation metrics and the empirical check of the proxy-problem value bound."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dp_oracle as dp
from .errors import PreconditionError
from .mdp import TabularMdp, random_mdp

CLASSES = ("G0", "G1", "G2")
DISTANCE_BUCKETS = ((1, 2), (3, 4), (5, 8), (9, 15))


@dataclass
class MetricsReport:
    e0: float | None = None
    e1: float | None = None
    e2: float | None = None
    e0_by_distance: dict = field(default_factory=dict)
    freq_g1: float | None = None
    freq_g2: float | None = None
    success: dict = field(default_factory=dict)
    bound_margins: list = field(default_factory=list)


def clipped_true_distance(mdp: TabularMdp, policy: np.ndarray, n_bins: int = 16) -> np.ndarray:
    """``E[min(D, T)]`` per (source, target state) with never counted as ``T``."""
    probs = dp.distance_distribution(mdp, policy, n_bins)
    return probs @ np.arange(1, n_bins + 1, dtype=float)


def feasibility_errors(estimated: np.ndarray, classes, true_clipped: np.ndarray, n_bins: int = 16) -> MetricsReport:
    """Mean absolute error of estimated expected distances, split by target class.

    ``estimated`` and ``true_clipped`` are per-pair expected distances;
    the truth is ignored for G1 and G2 pairs, whose ground truth is the never
    bin ``T``. Classes without pairs are reported as ``None``.
    """
    estimated = np.asarray(estimated, dtype=float)
    classes = np.asarray(classes)
    truth = np.where(classes == "G0", np.asarray(true_clipped, dtype=float), float(n_bins))
    err = np.abs(estimated - truth)
    out = {}
    for c in CLASSES:
        m = classes == c
        out[c] = float(err[m].mean()) if m.any() else None
    rep = MetricsReport(out["G0"], out["G1"], out["G2"])
    g0 = classes == "G0"
    for lo, hi in DISTANCE_BUCKETS:
        m = g0 & (truth >= lo) & (truth <= hi + 0.5)
        rep.e0_by_distance[f"{lo}-{hi}"] = float(err[m].mean()) if m.any() else None
    return rep


def delusion_frequency(selected_classes) -> tuple[float, float]:
    """Fractions of checkpoint selections that were G1 and G2 targets."""
    sel = list(selected_classes)
    if not sel:
        return 0.0, 0.0
    n = len(sel)
    return sel.count("G1") / n, sel.count("G2") / n


def mean_ci(x, z: float = 1.96) -> tuple[float, float, float]:
    """Mean with a normal-approximation 95% interval."""
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    half = z * float(x.std(ddof=1)) / np.sqrt(x.size) if x.size > 1 else 0.0
    return m, m - half, m + half


# ---------------------------------------------------------------------------
# composite-policy bound


def hop_product_value(v_hops, g_hops) -> float:
    """``sum_k v_k * prod_{l<k} gamma_l`` along a checkpoint chain."""
    total, disc = 0.0, 1.0
    for v, g in zip(v_hops, g_hops):
        total += disc * v
        disc *= g
    return total


def composite_value_exact(mdp: TabularMdp, checkpoints, policies, gamma: float) -> float:
    """Exact value of following ``policies[k]`` from checkpoint k until checkpoint k+1 is hit.

    Solved on an augmented MDP whose states are (state, hop index); reaching
    the last checkpoint ends the plan.
    """
    n, m = mdp.n_states, len(checkpoints) - 1
    size = n * m + 1
    end = size - 1
    P = np.zeros((size, 1, size))
    R = np.zeros((size, 1, size))
    for k in range(m):
        P_pi, _ = mdp.policy_dynamics(policies[k])
        r_sas = np.einsum("sa,sat->st", policies[k], mdp.P * mdp.R)
        nxt = checkpoints[k + 1]
        for s in range(n):
            row = k * n + s
            for t in np.flatnonzero(P_pi[s]):
                if t == nxt:
                    col = end if k + 1 == m else (k + 1) * n + t
                else:
                    col = k * n + t
                P[row, 0, col] += P_pi[s, t]
                if P_pi[s, t] > 0:
                    R[row, 0, col] += r_sas[s, t] / P_pi[s, t]
    terminal = np.zeros(size, dtype=bool)
    terminal[end] = True
    for k in range(m):
        terminal[k * n + np.flatnonzero(mdp.terminal)] = True
        P[k * n + np.flatnonzero(mdp.terminal)] = 0.0
    init = np.zeros(size)
    init[checkpoints[0]] = 1.0
    aug = TabularMdp(P, R, terminal, init)
    v = dp.policy_evaluation_exact(aug, np.ones((size, 1)), gamma)
    return float(v[checkpoints[0]])


def composite_error_bound(eps_v: float, eps_g: float, gamma: float, v_range: float, slack: float = 2.0) -> float:
    return slack * (eps_v * v_range / (1 - gamma) + eps_g * v_range / (1 - gamma) ** 2)


@dataclass
class BoundTrial:
    exact: float
    estimated: float
    bound: float

    @property
    def error(self) -> float:
        return abs(self.estimated - self.exact)

    @property
    def ratio(self) -> float:
        return self.error / self.bound if self.bound > 0 else (0.0 if self.error <= 1e-9 else np.inf)

    @property
    def ok(self) -> bool:
        return self.error <= self.bound + 1e-9


def bound_check(trials: int = 50, gamma: float = 0.9, eps_v: float = 1e-4, eps_g: float = 1e-4,
                seed: int = 0, adversarial: bool = False, n_states: int = 12, n_actions: int = 3,
                max_hops: int = 4) -> list[BoundTrial]:
    """Perturb exact edge values of random checkpoint chains and compare composite values.

    Rewards lie in ``[0, 1]``, so ``v_range = 1 / (1 - gamma)``. With
    ``adversarial`` every perturbation takes its largest allowed magnitude with
    the same sign.
    """
    limit = 0.01 * (1 - gamma) ** 2 * (1 + 1e-9)
    if not 0.0 < gamma < 1.0:
        raise PreconditionError("gamma must lie in (0, 1)")
    if eps_v > limit or eps_g > limit:
        raise PreconditionError(
            f"estimation errors must satisfy eps <= 0.01 (1 - gamma)^2 = {limit:.3g}; "
            f"got eps_v={eps_v}, eps_gamma={eps_g}")
    rng = np.random.default_rng(seed)
    v_range = 1.0 / (1.0 - gamma)
    bound = composite_error_bound(eps_v, eps_g, gamma, v_range)
    out = []
    for _ in range(trials):
        mdp = random_mdp(n_states, n_actions, rng, terminal_frac=0.15)
        mdp.R = np.abs(mdp.R)
        live = np.flatnonzero(~mdp.terminal)
        hops = int(rng.integers(1, max_hops + 1))
        chain = [int(rng.choice(live))]
        for _ in range(hops):
            chain.append(int(rng.choice([s for s in range(n_states) if s != chain[-1]])))
        policies = [rng.dirichlet(np.ones(n_actions), size=n_states) for _ in range(hops)]
        v_hops, g_hops = [], []
        for k in range(hops):
            V, G = dp.pairwise_reward_discount(mdp, policies[k], gamma)
            v_hops.append(V[chain[k], chain[k + 1]])
            g_hops.append(G[chain[k], chain[k + 1]])
        exact = composite_value_exact(mdp, chain, policies, gamma)
        if adversarial:
            dv = np.full(hops, eps_v * v_range * 0.999)
            dg = np.full(hops, eps_g * 0.999)
        else:
            dv = rng.uniform(-1, 1, hops) * eps_v * v_range
            dg = rng.uniform(-1, 1, hops) * eps_g
        est = hop_product_value(np.array(v_hops) + dv, np.array(g_hops) + dg)
        out.append(BoundTrial(exact, est, bound))
    return out
