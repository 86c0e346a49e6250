"""Longest-common-subsequence similarity between trips with a metric matching threshold."""

from __future__ import annotations

import numpy as np

from .core import EARTH_RADIUS_M, Trip, haversine_np


def match_matrix(a: Trip, b: Trip, epsilon: float) -> np.ndarray:
    """Boolean |a| x |b| matrix; True where two points are strictly closer than ``epsilon`` meters."""
    d = haversine_np(a.lat[:, None], a.lon[:, None], b.lat[None, :], b.lon[None, :])
    return d < epsilon


def lcs_length(match: np.ndarray) -> int:
    """LCS length over a precomputed match matrix.

    Row update: ``cand[j] = max(prev[j], prev[j-1] + 1 if match[i, j])``, then a
    running maximum along the row supplies the ``L[i][j-1]`` term.
    """
    n, m = match.shape
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cand = prev.copy()
        cand[1:] = np.maximum(prev[1:], np.where(match[i], prev[:-1] + 1, 0))
        prev = np.maximum.accumulate(cand)
    return int(prev[-1])


def _disjoint_bounds(a: Trip, b: Trip, epsilon: float) -> bool:
    # latitude gap alone lower-bounds the great-circle distance
    gap = max(float(a.lat.min()) - float(b.lat.max()), float(b.lat.min()) - float(a.lat.max()))
    return gap > 0 and np.radians(gap) * EARTH_RADIUS_M >= epsilon


def lcss_similarity(a: Trip, b: Trip, epsilon: float) -> float:
    """LCSS matches divided by the length of the shorter trip; in [0, 1]."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if _disjoint_bounds(a, b, epsilon):
        return 0.0
    return lcs_length(match_matrix(a, b, epsilon)) / min(len(a), len(b))


def directionless_lcss(a: Trip, b: Trip, epsilon: float) -> float:
    """Max of the forward LCSS and the LCSS against ``b`` traversed backwards."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if _disjoint_bounds(a, b, epsilon):
        return 0.0
    match = match_matrix(a, b, epsilon)
    denom = min(len(a), len(b))
    forward = lcs_length(match)
    if forward == denom:
        return 1.0
    return max(forward, lcs_length(match[:, ::-1])) / denom
