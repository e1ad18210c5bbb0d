"""Ranking and contrastive objectives and their gradients.

The per-op functions return sums over their inputs; :func:`compute_gradients`
averages them per batch before weighting:

    total = bpr / B + lambda1 * (cl_user / M_u + cl_item / M_i) + lambda2 * reg

with ``B`` the batch size and ``M_u``/``M_i`` the numbers of distinct
in-batch users and items (positives plus, by default, sampled negatives).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .params import Gradients
from .propagation import backward

TAU_GRID = (0.1, 0.2, 0.5, 0.8, 1.0)
LAMBDA1_GRID = (0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_LAMBDA2 = 1e-4


class MissingCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = DEFAULT_LAMBDA2
    tau: float = 0.2
    use_cl: bool = True
    reg_entities: bool = True
    cl_negatives: bool = True  # sampled negative items join the item-side node set


@dataclass(frozen=True)
class LossBreakdown:
    bpr: float
    cl_user: float
    cl_item: float
    reg: float
    total: float
    lambda1: float
    lambda2: float
    tau: float

    @property
    def cl(self):
        return self.cl_user + self.cl_item


def bpr_loss(pos_scores, neg_scores):
    """Summed ``-log sigmoid(pos - neg)`` and its gradients w.r.t. both score vectors."""
    pos_scores = np.asarray(pos_scores)
    neg_scores = np.asarray(neg_scores)
    if pos_scores.shape != neg_scores.shape or pos_scores.size < 1:
        raise ValueError("score vectors must have equal non-zero length")
    diff = pos_scores - neg_scores
    loss = float(np.sum(np.logaddexp(0.0, -diff)))
    g = -expit(-diff)
    return loss, g, -g


def _unit_rows(x):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms, safe


def cosine_matrix(a, b):
    """Pairwise cosine similarities; a zero row has similarity 0 with everything."""
    ua, _, _ = _unit_rows(a)
    ub, _, _ = _unit_rows(b)
    return ua @ ub.T


def infonce_loss(anchors, views, tau):
    """Summed in-batch InfoNCE with matching rows as positives.

    Row ``n`` of ``anchors`` is contrasted against every row of ``views``;
    the other rows act as negatives. Returns ``(loss, g_anchors, g_views)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if anchors.shape != views.shape or anchors.shape[0] < 2:
        raise ValueError("need matching anchor/view rows for at least two nodes")
    ua, na, sa = _unit_rows(anchors)
    uv, nv, sv = _unit_rows(views)
    logits = (ua @ uv.T) / tau
    lse = logsumexp(logits, axis=1)
    loss = float(np.sum(lse - np.diag(logits)))

    g_logits = np.exp(logits - lse[:, None])
    g_logits[np.diag_indices_from(g_logits)] -= 1.0
    g_logits /= tau
    g_ua = g_logits @ uv
    g_uv = g_logits.T @ ua
    # d(x/|x|) = (g - u (u.g)) / |x|; rows with |x| = 0 receive nothing
    g_a = (g_ua - ua * np.einsum("ij,ij->i", ua, g_ua)[:, None]) / sa[:, None]
    g_v = (g_uv - uv * np.einsum("ij,ij->i", uv, g_uv)[:, None]) / sv[:, None]
    g_a[na == 0] = 0
    g_v[nv == 0] = 0
    return loss, g_a, g_v


def regularized_rows(batch, alignment, reg_entities=True):
    """``(table, row ids)`` pairs whose ego rows enter the penalty, one entry per occurrence."""
    out = [("ig_user", batch.users), ("ig_item", np.concatenate([batch.pos, batch.neg]))]
    if reg_entities:
        out.append(("kg_entity", alignment[np.concatenate([batch.pos, batch.neg])]))
    return out


def l2_reg(params, batch, alignment, reg_entities=True):
    """Squared norm of the batch's ego rows divided by batch size, with dense gradients."""
    size = len(batch)
    if size == 0:
        raise ValueError("empty batch")
    value = 0.0
    grads = {}
    for name, idx in regularized_rows(batch, alignment, reg_entities):
        rows = getattr(params, name)[idx]
        value += float(np.sum(rows.astype(np.float64) ** 2))
        g = np.zeros_like(getattr(params, name))
        np.add.at(g, idx, (2.0 / size) * rows)
        grads[name] = g
    return value / size, grads


def total_loss(bpr, cl_user, cl_item, reg, lambda1, lambda2, tau=float("nan")):
    total = bpr + lambda1 * (cl_user + cl_item) + lambda2 * reg
    return LossBreakdown(float(bpr), float(cl_user), float(cl_item), float(reg), float(total),
                         lambda1, lambda2, tau)


def compute_gradients(fwd, batch, config=None):
    """Loss breakdown and sparse-row gradients of the combined loss for one batch.

    Consumes a single :class:`~simkgcl.propagation.ForwardOutput` for both the
    ranking and the contrastive terms.
    """
    config = config or LossConfig()
    if fwd is None or fwd.params is None or fwd.ig is None:
        raise MissingCacheError("forward caches are missing")
    params = fwd.params
    B = len(batch)
    xu, xi = fwd.x_user, fwd.x_item
    u, p, n = batch.users, batch.pos, batch.neg

    pos = np.einsum("ij,ij->i", xu[u], xi[p])
    neg = np.einsum("ij,ij->i", xu[u], xi[n])
    bpr, g_pos, g_neg = bpr_loss(pos, neg)
    g_pos = (g_pos / B)[:, None]
    g_neg = (g_neg / B)[:, None]
    g_xu = np.zeros_like(xu)
    g_xi = np.zeros_like(xi)
    np.add.at(g_xu, u, g_pos * xi[p] + g_neg * xi[n])
    np.add.at(g_xi, p, g_pos * xu[u])
    np.add.at(g_xi, n, g_neg * xu[u])

    cl_u = cl_i = 0.0
    g_eu = g_ei = None
    lam1 = config.lambda1 if config.use_cl else 0.0
    if config.use_cl and lam1 != 0.0:
        uu = np.unique(u)
        ui = np.unique(np.concatenate([p, n])) if config.cl_negatives else np.unique(p)
        g_eu = np.zeros_like(xu)
        g_ei = np.zeros_like(xi)
        if uu.size >= 2:
            cl_u, ga, gv = infonce_loss(xu[uu], fwd.e_user[uu], config.tau)
            cl_u /= uu.size
            g_xu[uu] += (lam1 / uu.size) * ga
            g_eu[uu] += (lam1 / uu.size) * gv
        if ui.size >= 2:
            cl_i, ga, gv = infonce_loss(xi[ui], fwd.e_item[ui], config.tau)
            cl_i /= ui.size
            g_xi[ui] += (lam1 / ui.size) * ga
            g_ei[ui] += (lam1 / ui.size) * gv

    dense = backward(fwd, g_xu, g_xi, g_eu, g_ei)
    reg, g_reg = l2_reg(params, batch, fwd.kg.alignment, config.reg_entities)
    for name, g in g_reg.items():
        dense[name] += config.lambda2 * g
    losses = total_loss(bpr / B, cl_u, cl_i, reg, lam1, config.lambda2, config.tau)
    return losses, Gradients.from_dense(dense)
