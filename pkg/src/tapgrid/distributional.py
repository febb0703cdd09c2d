"""Histogram arithmetic over fixed scalar supports.

The dataclasses are the public value types. The ``*_probs`` helpers work on
raw mass arrays with the support on the last axis and are what the tabular
estimators use in their batched updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SupportMismatchError

N_DISTANCE_BINS = 16
NORM_ATOL = 1e-9


@dataclass(frozen=True)
class Support:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a support needs at least two bins")
        if np.any(np.diff(v) <= 0):
            raise ValueError("support must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Support) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def distance_support(n_bins: int = N_DISTANCE_BINS) -> Support:
    """Integers ``1..T``; the last bin stands for ``>= T`` or never."""
    return Support(np.arange(1, n_bins + 1, dtype=float))


def value_support(v_max: float, n_bins: int = 16, v_min: float = 0.0) -> Support:
    return Support(np.linspace(v_min, v_max, n_bins))


@dataclass(frozen=True)
class Histogram:
    support: Support
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.support),):
            raise ValueError("mass vector does not match the support")
        if np.any(p < -NORM_ATOL) or abs(p.sum() - 1.0) > NORM_ATOL:
            raise ValueError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)

    def mass(self, value: float) -> float:
        idx = np.flatnonzero(self.support.values == value)
        return float(self.probs[idx[0]]) if idx.size else 0.0


def one_hot(support: Support, index: int) -> Histogram:
    p = np.zeros(len(support))
    p[index] = 1.0
    return Histogram(support, p)


def uniform(support: Support) -> Histogram:
    return Histogram(support, np.full(len(support), 1.0 / len(support)))


# ---------------------------------------------------------------------------
# array helpers


def two_hot_probs(values: np.ndarray, x) -> np.ndarray:
    """Two-hot masses for scalar or array ``x``; output has a trailing support axis."""
    values = np.asarray(values, dtype=float)
    x = np.clip(np.asarray(x, dtype=float), values[0], values[-1])
    hi = np.clip(np.searchsorted(values, x, side="left"), 1, values.size - 1)
    lo = hi - 1
    w_hi = (x - values[lo]) / (values[hi] - values[lo])
    out = np.zeros(x.shape + (values.size,))
    np.put_along_axis(out, lo[..., None], (1.0 - w_hi)[..., None], axis=-1)
    # add rather than put: when w_hi is 0 or 1 the other neighbour must keep its mass
    hi_mass = np.take_along_axis(out, hi[..., None], axis=-1) + w_hi[..., None]
    np.put_along_axis(out, hi[..., None], hi_mass, axis=-1)
    return out


def expectation_probs(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p @ np.asarray(values, dtype=float)


def shift_probs(p: np.ndarray, increment: int = 1) -> np.ndarray:
    """Move mass from bin t to t+increment; mass beyond the last bin piles into it."""
    if increment < 0:
        raise ValueError("increment must be non-negative")
    if increment == 0:
        return p.copy()
    out = np.zeros_like(p)
    n = p.shape[-1]
    k = min(increment, n - 1)
    out[..., k:] = p[..., : n - k]
    out[..., -1] += p[..., n - k:].sum(axis=-1)
    return out


def discount_weights(n_bins: int, gamma: float, tau: float = np.inf, never_last: bool = True) -> np.ndarray:
    """``gamma ** min(t, tau)`` for t = 1..T, with the last bin zeroed if it means never."""
    t = np.arange(1, n_bins + 1, dtype=float)
    w = gamma ** np.minimum(t, tau)
    if never_last:
        w[-1] = 0.0
    return w


def cdf_probs(p: np.ndarray, tau: int) -> np.ndarray:
    """``P(D <= tau)`` for distance masses over 1..T."""
    return p[..., :tau].sum(axis=-1)


# ---------------------------------------------------------------------------
# histogram operations


def two_hot(support: Support, x: float) -> Histogram:
    return Histogram(support, two_hot_probs(support.values, x))


def expectation(h: Histogram) -> float:
    return float(expectation_probs(h.support.values, h.probs))


def mix_toward(current: Histogram, target: Histogram, alpha: float) -> Histogram:
    """Convex step of size ``alpha`` from ``current`` toward ``target``."""
    if current.support != target.support:
        raise SupportMismatchError("histograms live on different supports")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p = (1.0 - alpha) * current.probs + alpha * target.probs
    return Histogram(current.support, p / p.sum())


def shift_discount_target(h: Histogram, increment: int = 1) -> Histogram:
    return Histogram(h.support, shift_probs(h.probs, increment))


def support_swap_to_discount(
    h: Histogram, gamma: float, tau: float = np.inf, never_last: bool = True
) -> float:
    """Expected cumulative discount ``E[gamma ** D]`` from a distance histogram.

    Each bin value t is replaced by ``gamma ** min(t, tau)``. When
    ``never_last`` is set the final bin is read as "never reached" and
    contributes nothing.
    """
    n = len(h.support)
    if tau < np.inf and tau > n:
        raise ValueError("tau cannot exceed the number of bins")
    t = h.support.values
    w = gamma ** np.minimum(t, tau)
    if never_last:
        w = w.copy()
        w[-1] = 0.0
    return float(h.probs @ w)
