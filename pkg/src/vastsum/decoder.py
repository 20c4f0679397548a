"""Budgeted summary decoding.

Sampled scores are expanded to the original timeline, averaged per
change-point segment, and a 0/1 knapsack over segment lengths picks the
summary under capacity floor(rho * N). The solver is an exact dynamic
program with deterministic tie-breaking (equal value: prefer the lighter
selection, then the lexicographically smallest index set), so decoding is a
pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeline import ChangePointPartition, PickSequence, expand_scores


@dataclass
class SegmentKnapsackInstance:
    """Per-segment values, integer frame-count weights, and the frame budget."""

    values: np.ndarray
    weights: tuple[int, ...]
    capacity: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = tuple(int(w) for w in self.weights)
        if self.values.shape != (len(self.weights),):
            raise ValueError("values and weights must have equal length")
        if any(w < 1 for w in self.weights):
            raise ValueError("weights must be >= 1")
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")


@dataclass
class SummaryMask:
    """Binary indicator on the original timeline plus the selected segment indices."""

    y: np.ndarray
    selected_segments: tuple[int, ...]


def segment_values(
    frame_scores, cps: ChangePointPartition, capacity: int = 0
) -> SegmentKnapsackInstance:
    """Mean frame score per segment as value, segment length as weight."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.shape != (cps.n_frames,):
        raise ValueError(f"expected {cps.n_frames} frame scores, got {frame_scores.shape}")
    values = np.array([frame_scores[s : e + 1].mean() for s, e in cps.segments])
    return SegmentKnapsackInstance(values=values, weights=cps.lengths(), capacity=capacity)


def knapsack_select(instance: SegmentKnapsackInstance) -> np.ndarray:
    """Exact 0/1 knapsack; returns the boolean selection vector.

    dp[w] holds the best (value, total weight, ascending index tuple) reachable
    with capacity w; candidates are compared by value first, then smaller
    weight, then lexicographically smaller index tuple. Values accumulate in
    ascending index order so sums are bit-reproducible.
    """
    values, weights, cap = instance.values, instance.weights, instance.capacity
    dp: list[tuple[float, int, tuple[int, ...]]] = [(0.0, 0, ())] * (cap + 1)
    for i, (v, w) in enumerate(zip(values, weights)):
        if w > cap:
            continue
        v = float(v)
        for c in range(cap, w - 1, -1):
            base_v, base_w, base_sel = dp[c - w]
            cand = (base_v + v, base_w + w, base_sel + (i,))
            best = dp[c]
            if cand[0] > best[0] or (
                cand[0] == best[0]
                and (cand[1] < best[1] or (cand[1] == best[1] and cand[2] < best[2]))
            ):
                dp[c] = cand
    selection = np.zeros(len(weights), dtype=bool)
    selection[list(dp[cap][2])] = True
    return selection


def budget(rho: float, n_frames: int) -> int:
    """Frame budget floor(rho * N); never rounded up."""
    return int(math.floor(rho * n_frames))


def decode_summary(
    scores, picks: PickSequence, cps: ChangePointPartition, rho: float = 0.15
) -> SummaryMask:
    """Expand, pool, solve, and emit the binary summary mask."""
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    frame_scores = expand_scores(scores, picks, cps.n_frames)
    instance = segment_values(frame_scores, cps, capacity=budget(rho, cps.n_frames))
    selection = knapsack_select(instance)
    y = np.zeros(cps.n_frames, dtype=bool)
    selected = tuple(int(k) for k in np.flatnonzero(selection))
    for k in selected:
        start, end = cps.segments[k]
        y[start : end + 1] = True
    return SummaryMask(y=y, selected_segments=selected)
