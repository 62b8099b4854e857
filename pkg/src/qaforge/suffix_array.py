"""Suffix array, LCP array and maximal-repeat enumeration over integer
sequences."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np


def suffix_array(seq: Sequence[int]) -> np.ndarray:
    """Suffix array by prefix doubling, O(n log^2 n) with numpy sorts."""
    n = len(seq)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, rank = np.unique(np.asarray(seq, dtype=np.int64), return_inverse=True)
    rank = rank.astype(np.int64).reshape(-1)
    sa = np.argsort(rank, kind="stable")
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        if k < n:
            second[: n - k] = rank[k:]
        sa = np.lexsort((second, rank))
        r, s = rank[sa], second[sa]
        boundary = np.empty(n, dtype=bool)
        boundary[0] = True
        boundary[1:] = (r[1:] != r[:-1]) | (s[1:] != s[:-1])
        new_rank = np.empty(n, dtype=np.int64)
        new_rank[sa] = np.cumsum(boundary) - 1
        rank = new_rank
        if rank[sa[-1]] == n - 1 or k >= n:
            return sa
        k *= 2


def lcp_array(seq: Sequence[int], sa: np.ndarray) -> list[int]:
    """Kasai's algorithm. ``lcp[i]`` is the common prefix of suffixes
    ``sa[i-1]`` and ``sa[i]``; ``lcp[0] == 0``."""
    n = len(seq)
    sa_list = sa.tolist()
    rank = [0] * n
    for i, p in enumerate(sa_list):
        rank[p] = i
    lcp = [0] * n
    h = 0
    for i in range(n):
        r = rank[i]
        if r == 0:
            h = 0
            continue
        j = sa_list[r - 1]
        while i + h < n and j + h < n and seq[i + h] == seq[j + h]:
            h += 1
        lcp[r] = h
        if h:
            h -= 1
    return lcp


def maximal_repeats(seq: Sequence[int], min_length: int) -> Iterator[tuple[int, list[int]]]:
    """Yield ``(length, sorted start positions)`` for every maximal repeat of
    at least ``min_length`` symbols.

    A repeat is maximal when its occurrences neither all share the preceding
    symbol nor all share the following one. Callers separate independent
    sequences with unique sentinel symbols so no repeat crosses them.
    """
    n = len(seq)
    if n < 2:
        return
    sa = suffix_array(seq)
    lcp = lcp_array(seq, sa)
    sa_list = sa.tolist()
    # stack of [lcp value, left bound] for open lcp-intervals
    stack: list[tuple[int, int]] = [(0, 0)]
    for i in range(1, n + 1):
        cur = lcp[i] if i < n else 0
        lb = i - 1
        while cur < stack[-1][0]:
            length, lb = stack.pop()
            if length >= min_length:
                positions = sa_list[lb:i]
                if _left_diverse(seq, positions):
                    yield length, sorted(positions)
        if cur > stack[-1][0]:
            stack.append((cur, lb))


def _left_diverse(seq: Sequence[int], positions: list[int]) -> bool:
    first = None
    for p in positions:
        if p == 0:
            return True
        c = seq[p - 1]
        if first is None:
            first = c
        elif c != first:
            return True
    return False
