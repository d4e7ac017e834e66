"""Slow, obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_min_cost(values: np.ndarray) -> float:
    """Minimum total cost of a full matching of the smaller side, by enumerating permutations."""
    n, m = values.shape
    if n == 0 or m == 0:
        return 0.0
    if n <= m:
        return min(sum(values[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
    return brute_force_min_cost(values.T)


def all_matchings(mask: np.ndarray):
    """Every matching (as a sorted tuple of pairs) that uses admissible cells only."""
    n, m = mask.shape

    def rec(r, used):
        if r == n:
            yield ()
            return
        yield from rec(r + 1, used)
        for c in range(m):
            if mask[r, c] and c not in used:
                for rest in rec(r + 1, used | {c}):
                    yield ((r, c),) + rest

    yield from rec(0, frozenset())


def best_gated_matching(values: np.ndarray, mask: np.ndarray, tol: float = 1e-9):
    """Max-cardinality, then min-cost, then lexicographically smallest admissible matching."""
    best_key, best = None, ()
    for mt in all_matchings(mask):
        cost = sum(values[r, c] for r, c in mt)
        key = (-len(mt), cost)
        if best_key is None or key[0] < best_key[0] or (
            key[0] == best_key[0] and cost < best_key[1] - tol
        ):
            best_key, best = key, mt
        elif key[0] == best_key[0] and abs(cost - best_key[1]) <= tol and mt < best:
            best = mt
    return list(best)


def max_bipartite_matching(mask: np.ndarray) -> int:
    return max((len(mt) for mt in all_matchings(mask)), default=0)
