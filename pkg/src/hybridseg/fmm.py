"""Label inpainting by fast marching from every labelled pixel at unit speed.

UNKNOWN pixels are finalised in order of first-order eikonal arrival time on
the 4-neighbourhood; each takes the label of its earliest-arriving finalised
neighbour (ties broken by row-major index).
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from .heads import UNKNOWN

KNOWN, TRIAL, FAR = 0, 1, 2


class NoSeedsError(ValueError):
    pass


def eikonal_update(a: float, b: float) -> float:
    """Upwind solution of |grad T| = 1 from the best horizontal (a) and vertical (b) arrivals."""
    if math.isinf(a) and math.isinf(b):
        raise ValueError("eikonal update needs at least one KNOWN neighbour")
    if abs(a - b) < 1.0:
        return 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))
    return min(a, b) + 1.0


def march(seg: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Run the march; returns (labels, arrival, finalisation order of arrivals)."""
    seg = np.asarray(seg)
    if seg.ndim != 2:
        raise ValueError(f"expected an H,W label map, got shape {seg.shape}")
    h, w = seg.shape
    labels = seg.astype(np.uint8).copy()
    seeds = labels != UNKNOWN
    if not seeds.any():
        raise NoSeedsError("no seeds: every pixel is UNKNOWN")
    arrival = np.where(seeds, 0.0, np.inf)
    status = np.where(seeds, KNOWN, FAR).astype(np.int8)
    heap: list[tuple[float, int, int]] = []
    counter = 0
    finalised: list[float] = []

    def neighbours(r, c):
        if r > 0:
            yield r - 1, c
        if c > 0:
            yield r, c - 1
        if c < w - 1:
            yield r, c + 1
        if r < h - 1:
            yield r + 1, c

    def relax(r, c):
        nonlocal counter
        a = min(arrival[r, c - 1] if c > 0 and status[r, c - 1] == KNOWN else math.inf,
                arrival[r, c + 1] if c < w - 1 and status[r, c + 1] == KNOWN else math.inf)
        b = min(arrival[r - 1, c] if r > 0 and status[r - 1, c] == KNOWN else math.inf,
                arrival[r + 1, c] if r < h - 1 and status[r + 1, c] == KNOWN else math.inf)
        t = eikonal_update(a, b)
        if t < arrival[r, c]:
            arrival[r, c] = t
            status[r, c] = TRIAL
            heapq.heappush(heap, (t, counter, r * w + c))
            counter += 1

    for idx in np.flatnonzero(seeds):
        r, c = divmod(int(idx), w)
        finalised.append(0.0)
        for nr, nc in neighbours(r, c):
            if status[nr, nc] != KNOWN:
                relax(nr, nc)

    while heap:
        t, _, idx = heapq.heappop(heap)
        r, c = divmod(idx, w)
        if status[r, c] == KNOWN or t > arrival[r, c]:
            continue
        best = None
        for nr, nc in neighbours(r, c):
            if status[nr, nc] == KNOWN:
                key = (arrival[nr, nc], nr * w + nc)
                if best is None or key < best[0]:
                    best = (key, labels[nr, nc])
        labels[r, c] = best[1]
        status[r, c] = KNOWN
        if finalised and t < finalised[-1]:
            raise AssertionError("fast marching finalised arrivals out of order")
        finalised.append(t)
        for nr, nc in neighbours(r, c):
            if status[nr, nc] != KNOWN:
                relax(nr, nc)
    return labels, arrival, finalised


def inpaint(seg: np.ndarray) -> np.ndarray:
    """Fill every UNKNOWN pixel with the label of its nearest classified pixel."""
    seg = np.asarray(seg)
    if not (seg == UNKNOWN).any():
        if seg.size == 0:
            raise NoSeedsError("no seeds: empty map")
        return seg.astype(np.uint8).copy()
    labels, _, _ = march(seg)
    return labels


def arrival_times(seeds: np.ndarray) -> np.ndarray:
    """Distance field from a boolean seed mask (convenience for accuracy checks)."""
    seg = np.where(np.asarray(seeds, dtype=bool), 0, UNKNOWN).astype(np.uint8)
    return march(seg)[1]
