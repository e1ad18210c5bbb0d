"""Splitting, BPR triple sampling and edge-dropout augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import DatasetBundle, InteractionGraph, KnowledgeGraph


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BprBatch:
    """``(user, positive item, negative item)`` triples as parallel arrays."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return int(self.users.size)

    @property
    def triples(self):
        return list(zip(self.users.tolist(), self.pos.tolist(), self.neg.tolist()))


def split_counts(n, ratios):
    """Per-user ``(train, valid, test)`` edge counts.

    Users with fewer than three edges keep everything in train. Otherwise
    validation and test get ``floor(n * ratio)`` edges, at least one each,
    and train takes the remainder.
    """
    if n < 3:
        return n, 0, 0
    _, rv, rt = ratios
    n_val = max(1, math.floor(n * rv + 1e-9))
    n_test = max(1, math.floor(n * rt + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_interactions(graph, ratios=(0.8, 0.1, 0.1), seed=0, kg=None):
    """Random per-user split of ``graph`` into a :class:`DatasetBundle`.

    ``kg`` defaults to an empty knowledge graph with one isolated entity per
    item.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive fractions summing to 1")
    if np.any(graph.user_degree == 0):
        raise ValueError("every user needs at least one edge")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for u in range(graph.num_users):
        lo, hi = graph.user_indptr[u], graph.user_indptr[u + 1]
        edges = lo + rng.permutation(hi - lo)
        n_tr, n_val, _ = split_counts(hi - lo, ratios)
        parts[0].append(edges[:n_tr])
        parts[1].append(edges[n_tr:n_tr + n_val])
        parts[2].append(edges[n_tr + n_val:])
    graphs = []
    for chunks in parts:
        idx = np.sort(np.concatenate(chunks)) if chunks else np.empty(0, np.int64)
        graphs.append(InteractionGraph(graph.num_users, graph.num_items, graph.users[idx], graph.items[idx]))
    if kg is None:
        kg = KnowledgeGraph(graph.num_items, 1, np.empty((0, 3), np.int64), np.arange(graph.num_items))
    return DatasetBundle(*graphs, kg)


def sample_bpr_batch(train, batch_size, rng, max_retries=100):
    """Draw ``batch_size`` BPR triples.

    ``(user, pos)`` is uniform over training edges; the negative is uniform
    over items and redrawn until it is not a training edge of the user.
    Edges whose user interacted with every item are redrawn as well.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if train.num_edges == 0:
        raise SamplingError("training graph has no edges")
    ni = train.num_items
    edges = rng.integers(0, train.num_edges, size=batch_size)
    for _ in range(max_retries):
        full = train.user_degree[train.users[edges]] >= ni
        if not full.any():
            break
        edges[full] = rng.integers(0, train.num_edges, size=int(full.sum()))
    else:
        raise SamplingError("could not find users with unobserved items")
    users, pos = train.users[edges], train.items[edges]
    neg = rng.integers(0, ni, size=batch_size)
    for _ in range(max_retries * 10):
        bad = train.has_edges(users, neg)
        if not bad.any():
            break
        neg[bad] = rng.integers(0, ni, size=int(bad.sum()))
    else:
        raise SamplingError("negative sampling did not converge")
    return BprBatch(users, pos, neg)


def augment_edges(graph, keep_rate, rng):
    """Keep each IG edge or KG triple independently with probability ``keep_rate``.

    A dropped KG triple also removes its inverse message. Node sets are
    untouched, so nodes may become isolated.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError("keep_rate must lie in (0, 1]")
    n = graph.num_edges if isinstance(graph, InteractionGraph) else len(graph.triples)
    mask = rng.random(n) < keep_rate
    return graph.subgraph(mask)
