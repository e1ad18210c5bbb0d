"""Full-ranking top-K evaluation with binary relevance."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .propagation import ForwardOutput, ModelConfig, forward


@dataclass(frozen=True)
class MetricsReport:
    K: int
    recall: float
    ndcg: float
    users_evaluated: int
    split: str = "test"

    def as_row(self):
        return {"split": self.split, "K": self.K, f"recall@{self.K}": self.recall,
                f"ndcg@{self.K}": self.ndcg, "users": self.users_evaluated}


def top_k(scores, K, exclude=()):
    """Top-``K`` ids by descending score, ties by ascending id; ``exclude`` ids never appear."""
    if K < 1:
        raise ValueError("K must be >= 1")
    scores = np.array(scores, dtype=np.float64)
    if len(exclude):
        scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
    valid = np.flatnonzero(scores > -np.inf)
    if valid.size <= K:
        cand = valid
    else:
        part = valid[np.argpartition(-scores[valid], K - 1)[:K]]
        cand = valid[scores[valid] >= scores[part].min()]
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:K]]


def rank_for_user(x_u, x_items, train_items, K):
    return top_k(x_items @ x_u, K, train_items)


def _discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2))


def recall_at_k(topk, test_items):
    test = set(np.asarray(test_items).tolist())
    if not test:
        raise ValueError("test_items must be non-empty")
    hits = sum(1 for i in np.asarray(topk).tolist() if i in test)
    return hits / len(test)


def ndcg_at_k(topk, test_items, K=None):
    """DCG over hits divided by the ideal DCG of ``min(K, |test|)`` hits."""
    test = set(np.asarray(test_items).tolist())
    if not test:
        raise ValueError("test_items must be non-empty")
    topk = np.asarray(topk).tolist()
    K = len(topk) if K is None else K
    dcg = sum(1.0 / math.log2(p + 2) for p, i in enumerate(topk) if i in test)
    idcg = float(np.sum(_discounts(min(K, len(test)))))
    return dcg / idcg


def _user_block(users, x_user, x_item, train, target, K):
    recall = ndcg = 0.0
    scores = x_user[users] @ x_item.T
    for row, u in zip(scores, users):
        top = top_k(row, K, train.user_items(u))
        test = target.user_items(u)
        recall += recall_at_k(top, test)
        ndcg += ndcg_at_k(top, test, K)
    return recall, ndcg


def evaluate_embeddings(x_user, x_item, train, target, K=20, split="test", workers=1, block=256):
    """Metrics for precomputed predictive embeddings; users without targets are skipped."""
    users = np.flatnonzero(target.user_degree > 0)
    blocks = [users[s:s + block] for s in range(0, users.size, block)]
    job = lambda b: _user_block(b, x_user, x_item, train, target, K)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]
    # fixed block order keeps the reduction deterministic
    recall = ndcg = 0.0
    for r, n in parts:
        recall += r
        ndcg += n
    count = int(users.size)
    if count == 0:
        return MetricsReport(K, 0.0, 0.0, 0, split)
    return MetricsReport(K, recall / count, ndcg / count, count, split)


def evaluate(model, bundle, split="test", K=20, config=None, workers=1):
    """Evaluate parameters (or a finished forward pass) on the un-augmented graphs."""
    if split not in ("valid", "validation", "test"):
        raise ValueError("split must be 'valid' or 'test'")
    if isinstance(model, ForwardOutput):
        fwd = model
    else:
        fwd = forward(model, bundle.train, bundle.kg, config or ModelConfig())
    return evaluate_embeddings(fwd.x_user, fwd.x_item, bundle.train, bundle.split(split), K,
                               "valid" if split == "validation" else split, workers)


def write_reports(path, reports):
    reports = list(reports)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "K", "recall", "ndcg", "users"])
        for r in reports:
            writer.writerow([r.split, r.K, repr(r.recall), repr(r.ndcg), r.users_evaluated])


def format_reports(reports):
    lines = [f"{'split':<8}{'K':>4}{'recall':>10}{'ndcg':>10}{'users':>8}"]
    for r in reports:
        lines.append(f"{r.split:<8}{r.K:>4}{r.recall:>10.4f}{r.ndcg:>10.4f}{r.users_evaluated:>8}")
    return "\n".join(lines)


def self_check(x_user, x_item, train, target, K=20):
    """Invariant violations of the ranking on these embeddings, as messages."""
    problems = []
    for u in np.flatnonzero(target.user_degree > 0)[:200]:
        top = rank_for_user(x_user[u], x_item, train.user_items(u), K)
        if np.intersect1d(top, train.user_items(u)).size:
            problems.append(f"user {u}: training item in top-{K}")
        full = np.lexsort((np.arange(x_item.shape[0]), -(x_item @ x_user[u])))
        full = full[~np.isin(full, train.user_items(u))][:K]
        if not np.array_equal(full, top):
            problems.append(f"user {u}: partial sort differs from full sort")
        r, n = recall_at_k(top, target.user_items(u)), ndcg_at_k(top, target.user_items(u), K)
        if not (0 <= r <= 1 and 0 <= n <= 1 + 1e-12):
            problems.append(f"user {u}: metric out of range")
    return problems
