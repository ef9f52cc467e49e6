"""Windowed temporal features: per-ID share (RATIO) and normalized
entropy contribution (SE) over tumbling frame-count windows.

For a window with unique IDs j = 1..N and proportions P_j:

    SE(j) = P_j * log2(P_j) / sum_i P_i * log2(P_i)

Each frame carries the SE and RATIO of its own CAN ID. A window with a
single ID gets SE = 1 by convention (the 0/0 limit as the lone ID absorbs
the entire entropy mass).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class WindowStats:
    """Per-window accounting: filter size and ID -> (count, P, SE)."""

    filter_size: int
    start: int
    stop: int
    by_id: dict[int, tuple[int, float, float]]


def window_partition(frames, filter_size: int) -> list[tuple[int, int]]:
    """Consecutive non-overlapping windows of ``filter_size`` frames.

    Returns (start, stop) index ranges in stream order; the final partial
    window is retained.
    """
    if filter_size < 1:
        raise ConfigError(f"filter size must be >= 1, got {filter_size}")
    n = len(frames) if hasattr(frames, "__len__") else int(frames)
    return [(s, min(s + filter_size, n)) for s in range(0, n, filter_size)]


def _window_tables(ids: np.ndarray):
    """Unique IDs, per-frame inverse index, counts and proportions."""
    uniq, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    p = counts / len(ids)
    return uniq, inverse, counts, p


def compute_ratio(window_ids: np.ndarray) -> np.ndarray:
    """Per-frame RATIO: own-ID count over the window size. In (0, 1]."""
    window_ids = np.asarray(window_ids)
    if len(window_ids) == 0:
        raise ValueError("window must be non-empty")
    _, inverse, _, p = _window_tables(window_ids)
    return p[inverse]


def compute_se(window_ids: np.ndarray) -> np.ndarray:
    """Per-frame SE: normalized entropy contribution of the frame's ID."""
    window_ids = np.asarray(window_ids)
    if len(window_ids) == 0:
        raise ValueError("window must be non-empty")
    _, inverse, _, p = _window_tables(window_ids)
    if len(p) == 1:
        return np.ones(len(window_ids), dtype=np.float64)
    contrib = p * np.log2(p)
    se = contrib / contrib.sum()
    return se[inverse]


def window_stats(window_ids: np.ndarray, filter_size: int, start: int = 0) -> WindowStats:
    window_ids = np.asarray(window_ids)
    uniq, inverse, counts, p = _window_tables(window_ids)
    if len(p) == 1:
        se = np.ones(1)
    else:
        contrib = p * np.log2(p)
        se = contrib / contrib.sum()
    by_id = {
        int(u): (int(c), float(pj), float(sj))
        for u, c, pj, sj in zip(uniq, counts, p, se)
    }
    return WindowStats(filter_size, start, start + len(window_ids), by_id)


def temporal_features(ids: np.ndarray, filter_size: int) -> tuple[np.ndarray, np.ndarray]:
    """SE and RATIO columns for a whole stream, window by window."""
    ids = np.asarray(ids)
    se = np.empty(len(ids), dtype=np.float64)
    ratio = np.empty(len(ids), dtype=np.float64)
    for start, stop in window_partition(len(ids), filter_size):
        window = ids[start:stop]
        uniq, inverse, counts, p = _window_tables(window)
        ratio[start:stop] = p[inverse]
        if len(p) == 1:
            se[start:stop] = 1.0
        else:
            contrib = p * np.log2(p)
            se[start:stop] = (contrib / contrib.sum())[inverse]
    return se, ratio
