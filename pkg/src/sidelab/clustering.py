"""Exact two-cluster k-means on the real line."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np


class TwoMeans(NamedTuple):
    low: float
    high: float

    @property
    def midpoint(self) -> float:
        return (self.low + self.high) / 2.0


def two_means(values) -> Optional[TwoMeans]:
    """Optimal 2-means split of 1-D data, or ``None`` if all values are equal.

    Works on the distinct values with their multiplicities, so the optimum is
    found by one sweep over the cut points between consecutive distinct values.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("two_means needs at least one value")
    uniq, counts = np.unique(x, return_counts=True)
    if uniq.size == 1:
        return None
    # centre first to keep the cumulative sums well conditioned
    shift = float(np.dot(uniq, counts) / counts.sum())
    u = uniq - shift
    w = counts.astype(float)
    cw = np.cumsum(w)[:-1]
    cs = np.cumsum(w * u)[:-1]
    cs2 = np.cumsum(w * u * u)[:-1]
    tw, ts, ts2 = w.sum(), float(np.dot(w, u)), float(np.dot(w, u * u))
    sse = (cs2 - cs * cs / cw) + ((ts2 - cs2) - (ts - cs) ** 2 / (tw - cw))
    k = int(np.argmin(sse))
    low = cs[k] / cw[k] + shift
    high = (ts - cs[k]) / (tw - cw[k]) + shift
    return TwoMeans(float(low), float(high))
