"""Target-aware pattern retrieval: Top-K anchors and the length-l windows ending at them."""
import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ComparisonCounter:
    def __init__(self):
        self.count = 0


class _Key:
    """Heap key ordering by weight, then by *smaller* index on ties."""

    __slots__ = ("w", "i", "counter")

    def __init__(self, w, i, counter):
        self.w, self.i, self.counter = w, i, counter

    def __lt__(self, other):
        if self.counter is not None:
            self.counter.count += 1
        if self.w != other.w:
            return self.w < other.w
        return self.i > other.i


def top_k_indices(weights, mask, k: int, counter: Optional[ComparisonCounter] = None) -> list[int]:
    """Indices of the `k` largest valid weights, best first.

    Uses a size-k min-heap, so selection costs O(N log k) comparisons. Ties go
    to the smaller index. Fewer than `k` valid positions yields all of them.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    weights = np.asarray(weights, dtype=float)
    mask = np.ones(weights.shape, bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("top_k_indices: no valid position")
    heap: list[_Key] = []
    for i in np.flatnonzero(mask):
        key = _Key(float(weights[i]), int(i), counter)
        if len(heap) < k:
            heapq.heappush(heap, key)
        elif heap[0] < key:
            heapq.heapreplace(heap, key)
    return [key.i for key in sorted(heap, key=lambda x: (-x.w, x.i))]


def batch_top_k(weights: np.ndarray, mask: np.ndarray, k: int):
    """Vectorized top-k over the last axis.

    Returns ``(indices, valid)`` each shaped ``(..., k)``; slots beyond the
    number of valid positions are flagged invalid (their index is arbitrary).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    mask = np.asarray(mask, bool)
    key = np.where(mask, np.asarray(weights, dtype=float), -np.inf)
    k_eff = min(k, key.shape[-1])
    order = np.argsort(-key, axis=-1, kind="stable")[..., :k_eff]
    valid = np.take_along_axis(mask, order, axis=-1)
    if k_eff < k:
        pad = [(0, 0)] * (order.ndim - 1) + [(0, k - k_eff)]
        order = np.pad(order, pad)
        valid = np.pad(valid, pad)
    return order, valid


@dataclass
class RawPattern:
    items: np.ndarray
    categories: np.ndarray
    mask: np.ndarray
    anchor: int
    score: float


def extract_patterns(items, categories, mask, indices, length: int, scores=None) -> list[RawPattern]:
    """Windows ``[idx - length + 1, idx]`` for each anchor; out-of-range slots are pads."""
    p_items, p_cats, p_mask = batch_extract(np.asarray(items)[None], np.asarray(categories)[None],
                                            np.asarray(mask)[None], np.asarray(indices)[None], length)
    out = []
    for j, idx in enumerate(indices):
        score = float(scores[idx]) if scores is not None else float("nan")
        out.append(RawPattern(p_items[0, j], p_cats[0, j], p_mask[0, j], int(idx), score))
    return out


def batch_extract(items, categories, mask, indices, length: int, valid=None):
    """Batched windows. Inputs ``(B, N)`` and anchors ``(B, K)``; outputs ``(B, K, length)``."""
    n = items.shape[-1]
    pos = indices[..., None] - (length - 1) + np.arange(length)
    inside = pos >= 0
    safe = np.clip(pos, 0, n - 1)
    flat = safe.reshape(len(safe), -1)

    def take(a):
        return np.take_along_axis(np.asarray(a), flat, axis=-1).reshape(pos.shape)

    slot_ok = inside & take(np.asarray(mask, bool))
    if valid is not None:
        slot_ok &= np.asarray(valid, bool)[..., None]
    return np.where(slot_ok, take(items), 0), np.where(slot_ok, take(categories), 0), slot_ok


def all_anchors(mask: np.ndarray):
    """Every position as an anchor; used when retrieval is ablated."""
    n = mask.shape[-1]
    idx = np.broadcast_to(np.arange(n), mask.shape).copy()
    return idx, np.asarray(mask, bool).copy()
