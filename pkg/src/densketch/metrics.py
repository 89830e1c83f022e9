"""Ranking metrics for next-item and top-k evaluation."""

from __future__ import annotations

import math


def mrr_at_k(ranking, next_item, k: int = 20) -> float:
    """Reciprocal rank of the immediate next item, 0 if outside the top k."""
    top = list(ranking)[:k]
    try:
        return 1.0 / (top.index(next_item) + 1)
    except ValueError:
        return 0.0


def hit_at_k(ranking, next_item, k: int = 20) -> float:
    return 1.0 if next_item in set(list(ranking)[:k]) else 0.0


def precision_at_k(ranking, relevant, k: int = 20) -> float:
    top = list(ranking)[:k]
    return len(set(top) & set(relevant)) / k


def recall_at_k(ranking, relevant, k: int = 20) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    return len(set(list(ranking)[:k]) & relevant) / len(relevant)


def average_precision_at_k(ranking, relevant, k: int = 20) -> float:
    """AP@k: mean of precision at each hit, over min(|relevant|, k) slots."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    hits = 0
    total = 0.0
    for i, item in enumerate(list(ranking)[:k], start=1):
        if item in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def ndcg_at_k(ranking, relevant, k: int = 20) -> float:
    """Binary NDCG@k; ideal DCG fills min(k, |relevant|) top slots."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    dcg = sum(
        1.0 / math.log2(i + 1)
        for i, item in enumerate(list(ranking)[:k], start=1)
        if item in relevant
    )
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def evaluate_session_points(points, k: int = 20) -> dict:
    """Average next-item and remainder metrics over prediction points.

    ``points`` yields ``(ranking, next_item, hidden_items)`` where
    ``hidden_items`` is the full not-yet-seen remainder of the session
    (including the next item). MRR/HR score the next item only; P/R/MAP
    score the remainder.
    """
    sums = {f"MRR@{k}": 0.0, f"P@{k}": 0.0, f"R@{k}": 0.0,
            f"HR@{k}": 0.0, f"MAP@{k}": 0.0}
    n = 0
    for ranking, next_item, hidden in points:
        ranking = list(ranking)
        sums[f"MRR@{k}"] += mrr_at_k(ranking, next_item, k)
        sums[f"HR@{k}"] += hit_at_k(ranking, next_item, k)
        sums[f"P@{k}"] += precision_at_k(ranking, hidden, k)
        sums[f"R@{k}"] += recall_at_k(ranking, hidden, k)
        sums[f"MAP@{k}"] += average_precision_at_k(ranking, hidden, k)
        n += 1
    if n == 0:
        raise ValueError("empty evaluation set")
    return {name: total / n for name, total in sums.items()}


def evaluate_topk_points(points, cutoffs=(1, 5, 10, 20)) -> dict:
    """Average Recall@K and NDCG@K over ``(ranking, held_out)`` pairs."""
    cutoffs = list(cutoffs)
    sums = {}
    for k in cutoffs:
        sums[f"Recall@{k}"] = 0.0
        sums[f"NDCG@{k}"] = 0.0
    n = 0
    for ranking, held_out in points:
        ranking = list(ranking)
        for k in cutoffs:
            sums[f"Recall@{k}"] += recall_at_k(ranking, held_out, k)
            sums[f"NDCG@{k}"] += ndcg_at_k(ranking, held_out, k)
        n += 1
    if n == 0:
        raise ValueError("empty evaluation set")
    return {name: total / n for name, total in sums.items()}
