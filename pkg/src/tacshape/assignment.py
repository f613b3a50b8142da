"""Optimal and near-optimal point-to-point assignment.

Small problems go through scipy's exact solver; large ones through a
vectorized epsilon-scaling forward auction whose final epsilon certifies the
suboptimality (a completed auction phase at epsilon is within n*epsilon of
the optimal total cost).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

EXACT_LIMIT = 512  # largest n solved exactly


class AssignmentResult(NamedTuple):
    assignment: np.ndarray   # row i -> column assignment[i]
    total_cost: float
    exact: bool
    cert_gap: float          # certified absolute gap on the total cost (0 if exact)


def solve_assignment(cost: np.ndarray, rel_gap: float = 0.01) -> AssignmentResult:
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n != m:
        raise ValueError("cost matrix must be square")
    if n <= EXACT_LIMIT:
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(n, dtype=np.int64)
        perm[rows] = cols
        return AssignmentResult(perm, float(cost[rows, cols].sum()), True, 0.0)
    return _auction(cost, rel_gap)


def _auction_phase(benefit: np.ndarray, prices: np.ndarray, eps: float) -> np.ndarray:
    """Jacobi forward auction to a complete assignment at fixed eps.

    Mutates prices; returns person -> object assignment satisfying
    eps-complementary slackness with the final prices.
    """
    n = benefit.shape[0]
    person_to_obj = np.full(n, -1, dtype=np.int64)
    obj_to_person = np.full(n, -1, dtype=np.int64)
    unassigned = np.arange(n)
    while len(unassigned):
        vals = benefit[unassigned] - prices
        best_j = vals.argmax(axis=1)
        rows = np.arange(len(unassigned))
        best_v = vals[rows, best_j]
        vals[rows, best_j] = -np.inf
        second_v = vals.max(axis=1)
        bids = benefit[unassigned, best_j] - second_v + eps

        # highest bid per object wins; ties resolved by lowest bidder index
        order = np.lexsort((unassigned, -bids, best_j))
        obj_sorted = best_j[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = obj_sorted[1:] != obj_sorted[:-1]
        win = order[first]
        win_obj = best_j[win]
        win_person = unassigned[win]

        prev = obj_to_person[win_obj]
        person_to_obj[prev[prev >= 0]] = -1
        obj_to_person[win_obj] = win_person
        person_to_obj[win_person] = win_obj
        prices[win_obj] = bids[win]

        unassigned = np.nonzero(person_to_obj < 0)[0]
    return person_to_obj


def _auction(cost: np.ndarray, rel_gap: float) -> AssignmentResult:
    n = cost.shape[0]
    benefit = -cost
    spread = float(benefit.max() - benefit.min())
    if spread <= 0.0:  # constant cost: any bijection is optimal
        return AssignmentResult(np.arange(n, dtype=np.int64), float(cost[0, 0] * n), True, 0.0)
    prices = np.zeros(n)
    eps = spread / 4.0
    floor = spread * 1e-12
    while True:
        assignment = _auction_phase(benefit, prices, eps)
        total = float(cost[np.arange(n), assignment].sum())
        cert = n * eps
        # stop once the certified gap is within the requested relative gap
        # (with a safety margin so gap/optimal <= rel_gap, not just gap/total)
        if cert <= rel_gap / (1.0 + rel_gap) * total or eps <= floor:
            return AssignmentResult(assignment, total, False, cert)
        eps = max(eps / 7.0, floor)


def brute_force_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exhaustive minimum over all bijections; factorial, for oracle use only."""
    from itertools import permutations

    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best_perm = None
    best = np.inf
    rows = np.arange(n)
    for perm in permutations(range(n)):
        tot = cost[rows, perm].sum()
        if tot < best:
            best = tot
            best_perm = perm
    return np.asarray(best_perm, dtype=np.int64), float(best)
