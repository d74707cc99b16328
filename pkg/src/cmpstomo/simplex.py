"""Index bookkeeping for correlators stored on the ordered simplex.

An order-``n`` correlator on a grid of ``count`` points is stored only for
non-decreasing index tuples ``i1 <= i2 <= ... <= in``, flattened in
lexicographic order. On a uniform grid a translation-invariant correlator
depends only on the gaps ``i2 - i1, ..., in - i(n-1)``; the relative tuple
``(i2 - i1, ..., in - i1)`` is itself a point of the order-``(n-1)`` simplex,
which gives a compact "gap class" numbering used for fast evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np


def simplex_size(count: int, order: int) -> int:
    """Number of non-decreasing ``order``-tuples with entries in ``range(count)``."""
    if order == 0:
        return 1
    return comb(count + order - 1, order)


def simplex_indices(count: int, order: int) -> np.ndarray:
    """All non-decreasing index tuples, lexicographically sorted.

    Returns:
        Integer array of shape ``(simplex_size(count, order), order)``.
    """
    if count < 1 or order < 1:
        raise ValueError("count and order must be positive")
    dtype = np.int16 if count < 2**15 else np.int64
    rows = np.arange(count, dtype=dtype)[:, None]
    for _ in range(order - 1):
        last = rows[:, -1].astype(np.int64)
        reps = count - last
        base = np.repeat(rows, reps, axis=0)
        # position of each new row inside its block of repeats
        starts = np.cumsum(reps) - reps
        offset = np.arange(reps.sum()) - np.repeat(starts, reps)
        tail = (np.repeat(last, reps) + offset).astype(dtype)
        rows = np.concatenate([base, tail[:, None]], axis=1)
    return rows


@lru_cache(maxsize=64)
def _binomial_table(size: int) -> np.ndarray:
    table = np.zeros((size + 1, size + 1), dtype=np.int64)
    for a in range(size + 1):
        for b in range(min(a, size) + 1):
            table[a, b] = comb(a, b)
    return table


def simplex_rank(indices: np.ndarray, count: int) -> np.ndarray:
    """Flat offsets of non-decreasing tuples (inverse of :func:`simplex_indices`).

    Uses the hockey-stick identity: for slot ``j`` with previous value ``p``,
    the tuples skipped by choosing ``i_j`` instead of ``p`` number
    ``C(count-p+L, L+1) - C(count-i_j+L, L+1)`` where ``L`` is the number of
    slots after ``j``.
    """
    idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    n = idx.shape[1]
    if np.any(np.diff(idx, axis=1) < 0):
        raise ValueError("index tuples must be non-decreasing")
    if idx.size and (idx.min() < 0 or idx.max() >= count):
        raise ValueError("index out of range")
    table = _binomial_table(count + n)
    rank = np.zeros(idx.shape[0], dtype=np.int64)
    prev = np.zeros(idx.shape[0], dtype=np.int64)
    for j in range(n):
        tail = n - j - 1
        rank += table[count - prev + tail, tail + 1] - table[count - idx[:, j] + tail, tail + 1]
        prev = idx[:, j]
    return rank


@dataclass(frozen=True)
class GapClasses:
    """Translation classes of an order-``n`` simplex on a uniform grid.

    Attributes:
        gaps: ``(num_classes, n-1)`` integer gap tuples, in grid steps.
        class_of: class number of every simplex entry (lexicographic order).
        multiplicity: number of simplex entries per class.
    """

    gaps: np.ndarray
    class_of: np.ndarray
    multiplicity: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.gaps.shape[0]


@lru_cache(maxsize=16)
def gap_classes(count: int, order: int) -> GapClasses:
    if order < 2:
        raise ValueError("gap classes need order >= 2")
    rel = simplex_indices(count, order - 1).astype(np.int64)
    gaps = np.diff(np.concatenate([np.zeros((rel.shape[0], 1), np.int64), rel], axis=1), axis=1)
    full = simplex_indices(count, order).astype(np.int64)
    class_of = simplex_rank(full[:, 1:] - full[:, :1], count)
    multiplicity = count - rel[:, -1]
    for arr in (gaps, class_of, multiplicity):
        arr.setflags(write=False)
    return GapClasses(gaps=gaps, class_of=class_of, multiplicity=multiplicity)
