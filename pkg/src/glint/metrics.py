"""Ranking metrics, the paired significance test, and spatial entropy.

All metrics use binary relevance gains (with binary gains the exponential and
linear DCG formulations coincide). The Wilcoxon test computes exact two-sided
p-values by tail counting for n <= 20 — including tie-averaged ranks, which
stay exact over doubled (integer) ranks — and a normal approximation with
continuity and tie corrections beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError

EXACT_WILCOXON_MAX_N = 20


def ndcg_at_k(ranking: list[int], relevant: set[int], k: int) -> float:
    """Binary-gain nDCG@k: DCG = sum of 1/log2(rank+1) over relevant hits in
    the top k, normalized by the ideal DCG for min(|relevant|, k) hits."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("ndcg_at_k is undefined for an empty relevant set")
    dcg = sum(1.0 / math.log2(i + 2) for i, doc in enumerate(ranking[:k]) if doc in relevant)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(len(relevant), k)))
    return dcg / ideal


def map_at_k(ranking: list[int], relevant: set[int], k: int) -> float:
    """MAP@k with denominator min(|relevant|, k), keeping the value in [0, 1]
    for queries with more relevant documents than k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("map_at_k is undefined for an empty relevant set")
    hits = 0
    precision_sum = 0.0
    for i, doc in enumerate(ranking[:k]):
        if doc in relevant:
            hits += 1
            precision_sum += hits / (i + 1)
    return precision_sum / min(len(relevant), k)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # T = min(W+, W-)
    p_two_sided: float
    n_nonzero: int
    method: str  # "exact" | "normal"


def _average_ranks(abs_diffs: list[float]) -> tuple[list[float], list[int]]:
    """Ranks 1..n of |d| with ties averaged; also the tie-group sizes."""
    n = len(abs_diffs)
    order = sorted(range(n), key=lambda i: abs_diffs[i])
    ranks = [0.0] * n
    tie_sizes: list[int] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs_diffs[order[j + 1]] == abs_diffs[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # average of 1-based positions i+1 .. j+1
        for pos in range(i, j + 1):
            ranks[order[pos]] = avg
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, tie_sizes


def _exact_tail_counts(doubled_ranks: list[int], doubled_w: int) -> tuple[int, int]:
    """Count sign patterns with W+ <= w and W+ >= w via subset-sum DP.

    Works on doubled ranks so tie-averaged (half-integer) ranks stay integer;
    the counts equal full enumeration of all 2^n sign assignments.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    le = sum(counts[: doubled_w + 1])
    ge = sum(counts[doubled_w:])
    return le, ge


def wilcoxon_signed_rank(scores_a: list[float], scores_b: list[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired scores.

    Zero differences are discarded; ties in |difference| get average ranks.
    Exact for n <= 20, normal approximation with continuity and tie
    corrections beyond. Fewer than 5 nonzero differences is not enough signal
    to ever reach p < 0.05 two-sided, so it raises InsufficientDataError.
    """
    if len(scores_a) != len(scores_b):
        raise ValueError(f"paired samples differ in length: {len(scores_a)} vs {len(scores_b)}")
    diffs = [float(a) - float(b) for a, b in zip(scores_a, scores_b)]
    diffs = [d for d in diffs if d != 0.0]
    n = len(diffs)
    if n < 5:
        raise InsufficientDataError(f"need >= 5 nonzero differences, got {n}")

    ranks, tie_sizes = _average_ranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    statistic = min(w_plus, w_minus)

    if n <= EXACT_WILCOXON_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        le, ge = _exact_tail_counts(doubled, int(round(2 * w_plus)))
        p = min(1.0, 2.0 * min(le, ge) / (2**n))
        return WilcoxonResult(statistic=statistic, p_two_sided=p, n_nonzero=n, method="exact")

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t**3 - t for t in tie_sizes) / 48.0
    if var <= 0:  # all differences tied at one magnitude with huge tie correction
        raise InsufficientDataError("degenerate variance in normal approximation")
    delta = w_plus - mean
    z = (delta - 0.5 * math.copysign(1.0, delta)) / math.sqrt(var) if delta != 0 else 0.0
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(statistic=statistic, p_two_sided=p, n_nonzero=n, method="normal")


def spatial_entropy(centers: list[tuple[float, float]], grid_size: int) -> float:
    """Shannon entropy (natural log) of center-point occupancy over a
    grid_size x grid_size partition of the unit square. Points on the x=1 or
    y=1 boundary fall in the last cell; empty cells contribute nothing."""
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    if not centers:
        raise ValueError("spatial_entropy needs at least one center")
    counts: dict[tuple[int, int], int] = {}
    for x, y in centers:
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"center ({x}, {y}) outside the unit square")
        cell = (min(int(x * grid_size), grid_size - 1), min(int(y * grid_size), grid_size - 1))
        counts[cell] = counts.get(cell, 0) + 1
    n = len(centers)
    h = -sum((c / n) * math.log(c / n) for c in counts.values())
    return max(0.0, h)


def mean_of(values: list[float]) -> float:
    """Fixed-order arithmetic mean (the only aggregation used in reports)."""
    if not values:
        raise ValueError("mean of empty list")
    return float(np.mean(np.asarray(values, dtype=np.float64)))
