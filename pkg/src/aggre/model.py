"""Multi-hop context aggregation, relation scoring and the softmax loss.

One aggregation layer maps activations ``(E, R)`` to

    E'[i] = E[i] + sum_{(j, k) in C(i)} alpha_p * (R[j] * E[k])
    R'[j] = R[j] + sum_{(i, k) in C(j)} beta_q  * (E[i] * E[k])

where ``alpha`` is the softmax over the entity segment of the DistMult
scores ``<E[i], R[j], E[k]>`` and ``beta`` the softmax over the relation
segment of ``<E[i], R[j], E[k]>``. Attention is recomputed from the
current layer's activations. The backward pass below is composed by hand
from the kernel rules, including the path through the attention logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ContractViolation, NumericalError
from .kg_store import ContextIndex


@dataclass
class EmbeddingState:
    entity_table: np.ndarray
    relation_table: np.ndarray

    def __post_init__(self):
        if self.entity_table.ndim != 2 or self.relation_table.ndim != 2 \
                or self.entity_table.shape[1] != self.relation_table.shape[1]:
            raise ContractViolation("embedding tables must be 2-D with a shared width")

    @property
    def dim(self) -> int:
        return self.entity_table.shape[1]

    @property
    def dtype(self):
        return self.entity_table.dtype

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.entity_table.copy(), self.relation_table.copy())

    def astype(self, dtype) -> "EmbeddingState":
        return EmbeddingState(self.entity_table.astype(dtype), self.relation_table.astype(dtype))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_table).all() and np.isfinite(self.relation_table).all())


@dataclass
class Gradients:
    entity_grad: np.ndarray
    relation_grad: np.ndarray


@dataclass
class LayerTrace:
    """Activations of every layer plus the attention used to build them.

    ``entity_act[l]``/``relation_act[l]`` hold layer ``l`` (``l = 0..L``);
    ``alpha[l]``, ``beta[l]`` and the logits are those of the step
    ``l -> l + 1``.
    """

    ctx: ContextIndex
    entity_act: list = field(default_factory=list)
    relation_act: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    entity_logits: list = field(default_factory=list)
    relation_logits: list = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.entity_act) - 1

    @property
    def entities(self) -> np.ndarray:
        return self.entity_act[-1]

    @property
    def relations(self) -> np.ndarray:
        return self.relation_act[-1]


def init_embeddings(num_entities, num_relations, dim, rng, dtype=np.float32) -> EmbeddingState:
    """Uniform init on ``[-sqrt(6/d), sqrt(6/d)]``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bound = np.sqrt(6.0 / dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, dim)).astype(dtype)
    rel = rng.uniform(-bound, bound, size=(num_relations, dim)).astype(dtype)
    return EmbeddingState(ent, rel)


def _check_state(state, ctx):
    if state.entity_table.shape[0] != ctx.num_entities:
        raise ContractViolation(
            f"entity table has {state.entity_table.shape[0]} rows, context index {ctx.num_entities}")
    if state.relation_table.shape[0] != ctx.num_relation_slots:
        raise ContractViolation(
            f"relation table has {state.relation_table.shape[0]} rows, "
            f"context index {ctx.num_relation_slots}")


def _rowdot(a, b):
    return np.einsum("pm,pm->p", a, b)


def aggregate(state: EmbeddingState, ctx: ContextIndex, num_layers: int,
              exclusion=None, strict=False) -> LayerTrace:
    """Run ``num_layers`` aggregation layers over the whole graph.

    Pairs whose source triple id is in ``exclusion`` are removed from
    their segments before the softmax.
    """
    if num_layers < 0:
        raise ContractViolation("num_layers must be non-negative")
    _check_state(state, ctx)
    if exclusion is not None:
        ctx = ctx.restrict(exclude=exclusion)
    trace = LayerTrace(ctx, [state.entity_table], [state.relation_table])
    ec, er, ee = ctx.entity_ctx_center, ctx.entity_ctx_rel, ctx.entity_ctx_ent
    rc, rh, rt = ctx.relation_ctx_center, ctx.relation_ctx_head, ctx.relation_ctx_tail

    E, R = state.entity_table, state.relation_table
    for _ in range(num_layers):
        # score <E_c, R_j, E_k> = <E_c, R_j * E_k>, sharing the message product
        msg = K.hadamard(R[er], E[ee])
        s = _rowdot(E[ec], msg)
        alpha = K.segment_softmax(s, ctx.entity_ctx_offsets, strict=strict)
        E_next = E + K.segment_weighted_sum(alpha, msg, ctx.entity_ctx_offsets, strict=strict)

        rmsg = K.hadamard(E[rh], E[rt])
        t = _rowdot(R[rc], rmsg)
        beta = K.segment_softmax(t, ctx.relation_ctx_offsets, strict=strict)
        R_next = R + K.segment_weighted_sum(beta, rmsg, ctx.relation_ctx_offsets, strict=strict)

        trace.entity_logits.append(s)
        trace.relation_logits.append(t)
        trace.alpha.append(alpha)
        trace.beta.append(beta)
        trace.entity_act.append(E_next)
        trace.relation_act.append(R_next)
        E, R = E_next, R_next
    return trace


def backward(trace: LayerTrace, grad_entities, grad_relations, strict=False):
    """Pull gradients on the final activations back to the input tables.

    Per entity pair ``p = (c, j, k)`` with upstream ``G = dL/dE'[c]``:

        g_alpha = <G, R_j * E_k>          g_s = softmax_backward(alpha, g_alpha)
        U       = alpha * G + g_s * E_c
        dE_c   += g_s * (R_j * E_k)      dR_j += U * E_k      dE_k += U * R_j

    i.e. the message product rule and the score gradient share ``U``
    (built in place over the gathered ``G``). Relation pairs are handled the same way with ``(R_i, E_h, E_t)``.
    """
    ctx = trace.ctx
    ec, er, ee = ctx.entity_ctx_center, ctx.entity_ctx_rel, ctx.entity_ctx_ent
    rc, rh, rt = ctx.relation_ctx_center, ctx.relation_ctx_head, ctx.relation_ctx_tail
    eoff, roff = ctx.entity_ctx_offsets, ctx.relation_ctx_offsets
    ne, nr = ctx.num_entities, ctx.num_relation_slots
    gE_next, gR_next = grad_entities, grad_relations

    for layer in reversed(range(trace.num_layers)):
        E, R = trace.entity_act[layer], trace.relation_act[layer]
        alpha, beta = trace.alpha[layer], trace.beta[layer]

        R_j, E_k = R[er], E[ee]
        msg = K.hadamard(R_j, E_k)
        G = gE_next[ec]
        g_s = K.segment_softmax_backward(alpha, _rowdot(G, msg), eoff)
        G *= alpha[:, None]
        G += g_s[:, None] * E[ec]
        gE = gE_next + K.segment_weighted_sum(g_s, msg, eoff, strict=strict)
        gE += K.scatter_add(ee, G * R_j, ne, strict=strict)
        gR = gR_next + K.scatter_add(er, G * E_k, nr, strict=strict)
        del G, msg, R_j, E_k

        H, T = E[rh], E[rt]
        rmsg = K.hadamard(H, T)
        G = gR_next[rc]
        g_t = K.segment_softmax_backward(beta, _rowdot(G, rmsg), roff)
        G *= beta[:, None]
        G += g_t[:, None] * R[rc]
        gR += K.segment_weighted_sum(g_t, rmsg, roff, strict=strict)
        gE += K.scatter_add(rh, G * T, ne, strict=strict)
        gE += K.scatter_add(rt, G * H, ne, strict=strict)
        gE_next, gR_next = gE, gR
    return gE_next, gR_next


def relation_logits(trace: LayerTrace, queries, num_relations=None) -> np.ndarray:
    """Scores of every relation for each ``(head, tail)`` query row.

    Only the first ``num_relations`` relation slots are scored (inverse
    slots of a directed index are context-only).
    """
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    nr = trace.ctx.num_relations if num_relations is None else num_relations
    E, R = trace.entities, trace.relations[:nr]
    if len(queries) and (queries.min() < 0 or queries.max() >= len(E)):
        raise ContractViolation("query entity id out of range")
    return (E[queries[:, 0]] * E[queries[:, 1]]) @ R.T


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of ``targets`` and its gradient on ``logits``."""
    logp = _log_softmax(logits)
    n = len(targets)
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def _l2(table, grad, lam):
    touched = np.any(grad != 0, axis=1)
    rows = table[touched]
    return lam * float(np.sum(rows.astype(np.float64) ** 2)), touched


def loss_and_grad(state: EmbeddingState, ctx: ContextIndex, batch, config,
                  batch_ids=None, rng=None, batch_index=None):
    """Batch-mean softmax loss over relations plus L2 on touched rows.

    ``batch`` is an ``(n, 3)`` array of training triples; ``batch_ids``
    are their triple ids, needed when ``config.exclude_self`` is set.
    Returns ``(loss, Gradients)``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ContractViolation("empty batch")
    strict = getattr(config, "strict_determinism", False)
    cap = getattr(config, "neighbor_cap", None)
    if getattr(config, "exclude_self", False):
        if batch_ids is None:
            raise ContractViolation("exclude_self needs the batch triple ids")
        ctx = ctx.restrict(exclude=batch_ids)
    if cap is not None:
        ctx = ctx.restrict(cap=cap, rng=rng if rng is not None else np.random.default_rng(0))

    trace = aggregate(state, ctx, config.num_layers, strict=strict)
    h, r, t = batch.T
    E, R = trace.entities, trace.relations
    nr = ctx.num_relations
    pair = E[h] * E[t]
    logits = pair @ R[:nr].T
    loss, dz = cross_entropy(logits, r)
    dz = dz.astype(E.dtype, copy=False)

    gR_final = np.zeros_like(R)
    gR_final[:nr] = dz.T @ pair
    g_pair = dz @ R[:nr]
    gE_final = K.scatter_add(np.concatenate([h, t]),
                             np.concatenate([g_pair * E[t], g_pair * E[h]]), len(E), strict=strict)
    gE, gR = backward(trace, gE_final, gR_final, strict=strict)

    lam = config.l2_lambda
    if lam:
        pe, te = _l2(state.entity_table, gE, lam)
        pr, tr = _l2(state.relation_table, gR, lam)
        loss = loss + pe + pr
        gE[te] += 2 * lam * state.entity_table[te]
        gR[tr] += 2 * lam * state.relation_table[tr]
    loss = float(loss)
    if not np.isfinite(loss) or not (np.isfinite(gE).all() and np.isfinite(gR).all()):
        raise NumericalError("non-finite loss or gradient", batch=batch_index)
    return loss, Gradients(gE, gR)
