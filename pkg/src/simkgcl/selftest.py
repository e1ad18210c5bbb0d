"""Quick numerical self-checks used by ``simkgcl check``.

Each check returns ``(name, passed, detail)``. They run in float64 on tiny
instances and finish in a few seconds.
"""

from __future__ import annotations

import math

import numpy as np

from .evaluator import ndcg_at_k, self_check
from .graph import InteractionGraph, KnowledgeGraph
from .objectives import LossConfig, bpr_loss, compute_gradients, infonce_loss
from .params import TABLES, init_params
from .propagation import ModelConfig, forward
from .sampling import BprBatch, augment_edges


def toy_instance(seed=0):
    """3 users, 4 items, 5 entities, 2 relations, ``d = 6``, with a fixed batch."""
    ig = InteractionGraph(3, 4, [0, 0, 1, 1, 2, 2], [0, 1, 1, 2, 3, 0])
    kg = KnowledgeGraph(5, 2, [(0, 0, 4), (1, 1, 4), (2, 0, 3), (3, 1, 0), (4, 0, 2)], [0, 1, 2, 3])
    params = init_params(3, 4, 5, 2, dim=6, seed=seed, dtype=np.float64)
    batch = BprBatch(np.array([0, 1, 2, 0]), np.array([1, 2, 3, 0]), np.array([2, 0, 1, 3]))
    return ig, kg, params, batch


def gradient_check(h=1e-5, model=None, loss=None, seed=0):
    """Max relative error between analytic and central-difference gradients.

    The relative error of an entry is ``|a - fd| / max(|a|, |fd|, 1e-6)``.
    """
    model = model or ModelConfig(layers=2)
    loss = loss or LossConfig(lambda1=0.1, lambda2=1e-4, tau=0.2)
    ig, kg, params, batch = toy_instance(seed)

    def total():
        return compute_gradients(forward(params, ig, kg, model), batch, loss)[0].total

    dense = compute_gradients(forward(params, ig, kg, model), batch, loss)[1].to_dense(params)
    worst = 0.0
    for name in TABLES:
        table = getattr(params, name)
        for idx in np.ndindex(table.shape):
            old = table[idx]
            table[idx] = old + h
            up = total()
            table[idx] = old - h
            down = total()
            table[idx] = old
            fd = (up - down) / (2 * h)
            a = dense[name][idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


def normalization_check(trials=20, seed=0):
    """Worst deviation of a non-empty KG row norm from 1 over random (augmented) graphs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        nu, ni, ne, nr = (int(rng.integers(2, 12)), int(rng.integers(2, 12)),
                          int(rng.integers(12, 20)), int(rng.integers(1, 4)))
        ig = InteractionGraph(nu, ni, rng.integers(0, nu, 30), rng.integers(0, ni, 30))
        kg = KnowledgeGraph(ne, nr, np.column_stack([rng.integers(0, ne, 25), rng.integers(0, nr, 25),
                                                     rng.integers(0, ne, 25)]), rng.permutation(ne)[:ni])
        ig, kg = augment_edges(ig, 0.6, rng), augment_edges(kg, 0.6, rng)
        p = init_params(nu, ni, ne, nr, dim=5, seed=int(rng.integers(1 << 30)), dtype=np.float64)
        fwd = forward(p, ig, kg, ModelConfig(3))
        for l in range(1, 4):
            for rows, pre in ((fwd.kg_entity_layers[l], fwd.entity_norms[l]),
                              (fwd.kg_user_layers[l], fwd.user_norms[l])):
                n = np.linalg.norm(rows[pre > 0], axis=1)
                worst = max(worst, float(np.abs(n - 1).max(initial=0.0)))
    return worst


def run_all():
    results = []
    err = gradient_check()
    results.append(("gradient check (toy, h=1e-5)", err < 1e-4, f"max rel err {err:.2e}"))
    bpr = bpr_loss(np.array([0.25]), np.array([0.25]))[0]
    results.append(("BPR at equal scores", abs(bpr - math.log(2)) <= 1e-12, f"{bpr!r}"))
    a = np.eye(2)
    nce = infonce_loss(a, a.copy(), 1.0)[0] / 2
    results.append(("InfoNCE identical pair", abs(nce - math.log1p(math.exp(-1))) <= 1e-12, f"{nce!r}"))
    nd = ndcg_at_k([3, 1, 2], [1], K=3)
    results.append(("NDCG hit at rank 2", abs(nd - 1 / math.log2(3)) <= 1e-12, f"{nd!r}"))
    worst = normalization_check()
    results.append(("KG row normalization", worst <= 1e-6, f"max |norm-1| {worst:.2e}"))
    rng = np.random.default_rng(0)
    train = InteractionGraph(30, 25, rng.integers(0, 30, 120), rng.integers(0, 25, 120))
    test = InteractionGraph(30, 25, rng.integers(0, 30, 40), rng.integers(0, 25, 40))
    problems = self_check(rng.standard_normal((30, 4)), rng.standard_normal((25, 4)), train, test, 5)
    results.append(("ranking invariants", not problems, "; ".join(problems[:3]) or "ok"))
    return results
