"""Axis selection for box bisection.

``be_split`` scores each axis by the estimated looseness of the two halves,
using first-order bound estimates from the bound rates. ``iog_split`` is the
gradient baseline: interval-enclose the Jacobian and split the axis with the
largest smear ``U_k * width_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import InputBox, ReluNetwork, Stability
from .rates import BoundRates

MIN_SPLIT_WIDTH = 1e-12


class DegenerateBox(ValueError):
    """No axis of the box is wide enough to split."""


@dataclass(frozen=True)
class SplitDecision:
    axis: int
    midpoint: float
    child_low: InputBox
    child_high: InputBox
    scores: np.ndarray


def _decision(box: InputBox, axis: int, scores) -> SplitDecision:
    mid, low, high = box.bisect(axis)
    return SplitDecision(axis, mid, low, high, np.asarray(scores, dtype=float))


def _splittable(box: InputBox, min_width: float) -> np.ndarray:
    ok = box.widths > min_width
    if not ok.any():
        raise DegenerateBox(f"every axis is narrower than {min_width:g}")
    return ok


def estimate_child_bounds(bounds, rates: BoundRates, box: InputBox, axis: int, half: str):
    """First-order bounds of one half of ``box`` cut across ``axis``.

    The low half moves the upper facet of ``axis`` to the midpoint and the
    high half moves the lower facet; either way that facet's bias drops by
    half the width.
    """
    width = box.widths[axis]
    if width <= 0.0:
        raise DegenerateBox(f"axis {axis} has zero width")
    if half == "low":
        facet = axis
    elif half == "high":
        facet = box.dim + axis
    else:
        raise ValueError(f"half must be 'low' or 'high', not {half!r}")
    delta = -0.5 * width
    lows = [l + dl[:, facet] * delta for l, dl in zip(bounds.lower, rates.dl)]
    ups = [u + du[:, facet] * delta for u, du in zip(bounds.upper, rates.du)]
    return lows, ups


def looseness(lows, ups) -> float:
    """``-sum max(0, u) * min(0, l)`` over all hidden nodes."""
    return float(-sum(np.sum(np.maximum(u, 0.0) * np.minimum(l, 0.0)) for l, u in zip(lows, ups)))


def be_scores(box: InputBox, bounds, rates: BoundRates, min_width: float = MIN_SPLIT_WIDTH):
    ok = _splittable(box, min_width)
    scores = np.full(box.dim, np.inf)
    for i in np.flatnonzero(ok):
        scores[i] = sum(looseness(*estimate_child_bounds(bounds, rates, box, i, half))
                        for half in ("low", "high"))
    return scores


def be_split(box: InputBox, bounds, rates: BoundRates,
             min_width: float = MIN_SPLIT_WIDTH) -> SplitDecision:
    """Bisect along the axis with the smallest estimated looseness of both halves."""
    scores = be_scores(box, bounds, rates, min_width)
    candidates = np.flatnonzero(np.isfinite(scores))
    best = int(candidates[0])
    for k in candidates[1:]:
        if scores[k] < scores[best]:
            best = int(k)
    return _decision(box, best, scores)


def jacobian_enclosure(net: ReluNetwork, bounds):
    """Interval ``[lo, hi]`` enclosing the Jacobian over the box, shape ``(n_K, n_1)``."""
    lo = np.array(net.weights[-1], dtype=float)
    hi = lo.copy()
    stability = bounds.stability() if hasattr(bounds, "stability") else bounds
    for i in range(net.layer_count - 3, -1, -1):
        states = stability[i]
        s_lo = np.array([1.0 if s is Stability.STABLE_ACTIVE else 0.0 for s in states])
        s_hi = np.array([0.0 if s is Stability.STABLE_INACTIVE else 1.0 for s in states])
        # [lo, hi] * [s_lo, s_hi] with s in {[1,1], [0,0], [0,1]}
        cands = np.stack([lo * s_lo, lo * s_hi, hi * s_lo, hi * s_hi])
        lo, hi = cands.min(axis=0), cands.max(axis=0)
        W = np.asarray(net.weights[i])
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        centre = mid @ W
        spread = rad @ np.abs(W)
        lo, hi = centre - spread, centre + spread
    return lo, hi


def gradient_bounds(net: ReluNetwork, bounds) -> np.ndarray:
    """``U_k``: bound on ``max_outputs |d f / d x_k|`` over the box."""
    lo, hi = jacobian_enclosure(net, bounds)
    return np.maximum(np.abs(lo), np.abs(hi)).max(axis=0)


def iog_split(net: ReluNetwork, box: InputBox, bounds,
              min_width: float = MIN_SPLIT_WIDTH) -> SplitDecision:
    """Bisect along the axis with the greatest smear value ``U_k * width_k``."""
    ok = _splittable(box, min_width)
    smear = gradient_bounds(net, bounds) * box.widths
    smear = np.where(ok, smear, -np.inf)
    return _decision(box, int(np.argmax(smear)), smear)
