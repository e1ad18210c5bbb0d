"""Forward and reverse passes of the two-view graph encoder.

Per layer ``l = 1..L``:

1. entities aggregate relation-rotated neighbor messages
   ``mean_{(r, t)} e_r * ent[t]`` and are L2-normalized; items read their
   aligned entity's row;
2. KG user rows aggregate the KG item rows over the interaction graph
   (symmetric coefficients) and are L2-normalized;
3. the interaction graph propagates the previous fused layer LightGCN-style;
4. the KG user/item rows are added onto the IG rows (KG to IG only).

Readouts: the IG view averages layers ``1..L``; the KG view averages
layers ``0..L``.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

# one "sweep" is the full L-layer pass over a graph
SWEEPS = Counter()
SWEEP_SECONDS = Counter()


def reset_counters():
    SWEEPS.clear()
    SWEEP_SECONDS.clear()


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 3
    use_fusion: bool = True
    fuse_at: str = "layer"  # "layer" feeds fused rows forward, "readout" fuses only at the end
    normalize: bool = True
    include_ego: bool = False  # add IG layer 0 to the IG readout

    def validate(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.fuse_at not in ("layer", "readout"):
            raise ValueError("fuse_at must be 'layer' or 'readout'")


@dataclass
class ForwardOutput:
    kg_entity_layers: list
    kg_item_layers: list
    kg_user_layers: list
    ig_user_layers: list
    ig_item_layers: list
    x_user: np.ndarray
    x_item: np.ndarray
    e_user: np.ndarray
    e_item: np.ndarray
    config: ModelConfig
    ig: object = None
    kg: object = None
    params: object = None
    entity_norms: list = field(default_factory=list)
    user_norms: list = field(default_factory=list)
    propagated_users: list = field(default_factory=list)
    propagated_items: list = field(default_factory=list)


def l2_normalize(x):
    """Row-wise L2 normalization; zero rows stay zero. Returns ``(y, norms)``."""
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    y = np.zeros_like(x)
    nz = norms > 0
    y[nz] = x[nz] / norms[nz, None]
    return y, norms


def l2_normalize_backward(y, norms, grad):
    """Vector-Jacobian product of :func:`l2_normalize` (zero rows pass nothing)."""
    out = np.zeros_like(grad)
    nz = norms > 0
    yg = np.einsum("ij,ij->i", y[nz], grad[nz])
    out[nz] = (grad[nz] - y[nz] * yg[:, None]) / norms[nz, None]
    return out


def kg_propagate_layer(kg, prev_entities, relations, normalize=True):
    """One relation-aware aggregation over all entities.

    Returns ``(entities, items, pre_norms)``; ``items`` are the rows of the
    aligned entities. Entities without neighbors get zero rows.
    """
    mean = kg.operators(prev_entities.dtype)[0]
    msgs = relations[kg.rels] * prev_entities[kg.tails]
    pre = mean @ msgs
    if normalize:
        ent, norms = l2_normalize(pre)
    else:
        ent, norms = pre, None
    return ent, ent[kg.alignment], norms


def kg_user_aggregate(ig, kg_items, normalize=True):
    """Users collect KG item rows through the interaction graph. Returns ``(users, pre_norms)``."""
    adj = ig.norm_adj(kg_items.dtype)[0]
    pre = adj @ kg_items
    if normalize:
        return l2_normalize(pre)
    return pre, None


def ig_propagate_layer(ig, x_users, x_items):
    """Symmetric-normalized neighbor sums for both sides, no output normalization."""
    adj, adj_t = ig.norm_adj(x_users.dtype)
    return adj @ x_items, adj_t @ x_users


def fuse_layer(x_users, x_items, e_users, e_items):
    return x_users + e_users, x_items + e_items


def score(x_u, x_i):
    return float(np.dot(x_u, x_i))


def _x_layers(config):
    return range(0 if config.include_ego else 1, config.layers + 1)


def forward(params, ig, kg, config=None, layers=None):
    """Run both encoders and the fusion; keep everything needed by :func:`backward`."""
    config = config or ModelConfig()
    if layers is not None:
        config = ModelConfig(layers, config.use_fusion, config.fuse_at, config.normalize, config.include_ego)
    config.validate()
    U, I, E, R = params.ig_user, params.ig_item, params.kg_entity, params.kg_relation
    if U.shape[0] != ig.num_users or I.shape[0] != ig.num_items:
        raise ValueError("IG tables do not match the interaction graph")
    if E.shape[0] != kg.num_entities or R.shape[0] != kg.num_relations:
        raise ValueError("KG tables do not match the knowledge graph")
    if kg.num_items != ig.num_items:
        raise ValueError("alignment does not cover the interaction graph items")
    if not (U.shape[1] == I.shape[1] == E.shape[1] == R.shape[1]):
        raise ValueError("embedding dimensions differ")

    L = config.layers
    layer_fusion = config.use_fusion and config.fuse_at == "layer"
    ent, items_kg = [E], [E[kg.alignment]]
    ku0, _ = kg_user_aggregate(ig, items_kg[0], normalize=False)
    users_kg = [ku0]
    ent_norms, user_norms = [None], [None]
    xu, xi = [U], [I]
    pu, pi = [U], [I]
    t_kg = t_ig = 0.0
    for _ in range(L):
        t0 = time.perf_counter()
        e, ki, n = kg_propagate_layer(kg, ent[-1], R, config.normalize)
        ku, un = kg_user_aggregate(ig, ki, config.normalize)
        t1 = time.perf_counter()
        yu, yi = ig_propagate_layer(ig, xu[-1], xi[-1])
        t2 = time.perf_counter()
        t_kg += t1 - t0
        t_ig += t2 - t1
        ent.append(e)
        items_kg.append(ki)
        users_kg.append(ku)
        ent_norms.append(n)
        user_norms.append(un)
        pu.append(yu)
        pi.append(yi)
        if layer_fusion:
            yu, yi = fuse_layer(yu, yi, ku, ki)
        xu.append(yu)
        xi.append(yi)
    SWEEPS["kg"] += 1
    SWEEPS["ig"] += 1
    SWEEP_SECONDS["kg"] += t_kg
    SWEEP_SECONDS["ig"] += t_ig

    if config.use_fusion and config.fuse_at == "readout":
        out_u = [xu[0]] + [xu[l] + users_kg[l] for l in range(1, L + 1)]
        out_i = [xi[0]] + [xi[l] + items_kg[l] for l in range(1, L + 1)]
    else:
        out_u, out_i = xu, xi
    sel = list(_x_layers(config))
    x_user = _mean([out_u[l] for l in sel])
    x_item = _mean([out_i[l] for l in sel])
    e_user = _mean(users_kg)
    e_item = _mean(items_kg)
    return ForwardOutput(ent, items_kg, users_kg, out_u, out_i, x_user, x_item, e_user, e_item,
                         config, ig, kg, params, ent_norms, user_norms, pu, pi)


def _mean(rows):
    acc = rows[0].copy()
    for r in rows[1:]:
        acc += r
    return acc / len(rows)


def backward(fwd, g_x_user, g_x_item, g_e_user, g_e_item):
    """Gradients of a scalar w.r.t. the four tables given readout gradients.

    ``None`` stands for a zero readout gradient. Returns a dict of dense
    arrays keyed by table name.
    """
    cfg, ig, kg, params = fwd.config, fwd.ig, fwd.kg, fwd.params
    L = cfg.layers
    U, I, E, R = params.ig_user, params.ig_item, params.kg_entity, params.kg_relation
    dt = U.dtype
    zeros_u, zeros_i = np.zeros_like(U), np.zeros_like(I)
    g_x_user = zeros_u if g_x_user is None else g_x_user
    g_x_item = zeros_i if g_x_item is None else g_x_item
    g_e_user = zeros_u if g_e_user is None else g_e_user
    g_e_item = zeros_i if g_e_item is None else g_e_item

    adj, adj_t = ig.norm_adj(dt)
    sel = set(_x_layers(cfg))
    w = 1.0 / len(sel)
    layer_fusion = cfg.use_fusion and cfg.fuse_at == "layer"
    readout_fusion = cfg.use_fusion and cfg.fuse_at == "readout"

    g_ku = [g_e_user / (L + 1) for _ in range(L + 1)]
    g_ki = [g_e_item / (L + 1) for _ in range(L + 1)]
    gu = [zeros_u.copy() for _ in range(L + 1)]
    gi = [zeros_i.copy() for _ in range(L + 1)]
    for l in sel:
        gu[l] += w * g_x_user
        gi[l] += w * g_x_item
        if readout_fusion and l >= 1:
            g_ku[l] += w * g_x_user
            g_ki[l] += w * g_x_item

    # IG side, top layer down. gu[l] is the gradient w.r.t. the row set that
    # feeds layer l+1 (fused in layer mode).
    for l in range(L, 0, -1):
        if layer_fusion:
            g_ku[l] += gu[l]
            g_ki[l] += gi[l]
        gi[l - 1] += adj_t @ gu[l]
        gu[l - 1] += adj @ gi[l]
    d_user, d_item = gu[0], gi[0]

    # KG side.
    mean_t, rel_sel_t, tail_sel_t = kg.operators(dt)[1:]
    g_ent = [np.zeros_like(E) for _ in range(L + 1)]
    for l in range(L, -1, -1):
        g = g_ku[l]
        if l >= 1 and cfg.normalize:
            g = l2_normalize_backward(fwd.kg_user_layers[l], fwd.user_norms[l], g)
        g_item = g_ki[l] + adj_t @ g
        g_ent[l][kg.alignment] += g_item
    d_rel = np.zeros_like(R)
    for l in range(L, 0, -1):
        g = g_ent[l]
        if cfg.normalize:
            g = l2_normalize_backward(fwd.kg_entity_layers[l], fwd.entity_norms[l], g)
        g_msg = mean_t @ g
        d_rel += rel_sel_t @ (g_msg * fwd.kg_entity_layers[l - 1][kg.tails])
        g_ent[l - 1] += tail_sel_t @ (g_msg * R[kg.rels])
    return {"ig_user": d_user, "ig_item": d_item, "kg_entity": g_ent[0], "kg_relation": d_rel}
