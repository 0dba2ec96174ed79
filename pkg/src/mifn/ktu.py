"""Knowledge transfer unit: gated cross-domain graph convolution.

Given the extracted subgraph and the sequence/transfer summaries, the unit
scores every entity against the current preference (attention within each
domain group), balances the two domains with a cross-domain gate, runs L
rounds of neighbor dissemination that treat same-domain and cross-domain
neighbors differently, and finally merges the disseminated states back
into the initial entity representations through update/forget gates.

Directionality: when recommending for domain B the "in" group is domain A
queried by the sequence summary and the "cross" group is domain B queried
by the transferred flow; recommending for domain A mirrors every role.
All weights are per-direction (namespaces ``ktu_a2b.`` / ``ktu_b2a.``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import KnowledgeSubgraph
from .params import ModelParams


@dataclass
class GraphContext:
    """Constant per-sequence arrays derived from one subgraph.

    The adjacency is symmetrized here: an edge contributes its endpoints
    to each other's neighbor sets.  "in" masks keep same-domain pairs,
    "cross" masks keep opposite-domain pairs; both are relative to each
    entity's own domain, so they do not depend on the direction.
    """

    n_entities: int
    n_relations: int
    mask_a: np.ndarray  # (n,) float, 1.0 where the entity is domain A
    mask_b: np.ndarray
    in_adj: np.ndarray  # (R, n, n) float
    cross_adj: np.ndarray
    in_any: np.ndarray  # (n, n) float, union of in_adj over relations
    inv_in: np.ndarray  # (n, 1) 1/|N_in| with 0 where empty
    inv_cross: np.ndarray
    in_rel_counts: np.ndarray  # (R, n, 1)
    cross_rel_counts: np.ndarray
    has_cross_edges: bool

    @classmethod
    def from_subgraph(cls, sg: KnowledgeSubgraph, domain_a: str) -> "GraphContext":
        n = sg.n_entities
        r = sg.n_relations
        mask_a = np.array([1.0 if d == domain_a else 0.0 for d in sg.domain_tags])
        mask_b = 1.0 - mask_a
        sym = (sg.adjacency | sg.adjacency.transpose(0, 2, 1)).astype(float)
        same = np.outer(mask_a, mask_a) + np.outer(mask_b, mask_b)
        in_adj = sym * same
        cross_adj = sym * (1.0 - same)
        in_any = (in_adj.sum(axis=0) > 0).astype(float) if r else np.zeros((n, n))
        in_rel_counts = in_adj.sum(axis=2, keepdims=True)
        cross_rel_counts = cross_adj.sum(axis=2, keepdims=True)
        in_counts = in_rel_counts.sum(axis=0)
        cross_counts = cross_rel_counts.sum(axis=0)
        inv_in = np.where(in_counts > 0, 1.0 / np.maximum(in_counts, 1.0), 0.0)
        inv_cross = np.where(cross_counts > 0, 1.0 / np.maximum(cross_counts, 1.0), 0.0)
        return cls(
            n_entities=n,
            n_relations=r,
            mask_a=mask_a,
            mask_b=mask_b,
            in_adj=in_adj,
            cross_adj=cross_adj,
            in_any=in_any,
            inv_in=inv_in,
            inv_cross=inv_cross,
            in_rel_counts=in_rel_counts,
            cross_rel_counts=cross_rel_counts,
            has_cross_edges=bool(cross_counts.sum() > 0),
        )

    def rows(self, domain_a_side: bool) -> np.ndarray:
        mask = self.mask_a if domain_a_side else self.mask_b
        return np.nonzero(mask)[0]


def entity_attention(
    query: Tensor,
    entity_initials: Tensor,
    params: ModelParams,
    prefix: str,
) -> Tensor | None:
    """Softmax weights over one entity group: softmax(v' tanh(W1 q + W2 h0)).

    Returns None for an empty group; callers treat the matching terms as
    zero contributions.
    """
    if entity_initials.data.shape[0] == 0:
        return None
    scores = ad.tanh(
        query @ params[f"{prefix}.w_query"] + entity_initials @ params[f"{prefix}.w_entity"]
    ) @ params[f"{prefix}.v"]
    return ad.softmax(scores)


def combine_group_weights(
    weights_in: Tensor | None,
    weights_cross: Tensor | None,
    rows_in: np.ndarray,
    rows_cross: np.ndarray,
    n_entities: int,
) -> Tensor:
    """Scatter the per-group attention into one (n,) per-entity vector."""
    parts = []
    if weights_in is not None:
        parts.append(ad.scatter(weights_in, rows_in, n_entities))
    if weights_cross is not None:
        parts.append(ad.scatter(weights_cross, rows_cross, n_entities))
    if not parts:
        return Tensor(np.zeros(n_entities))
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def cross_gate(
    h_seq: Tensor,
    h_transfer: Tensor,
    entity_initials: Tensor,
    weights: Tensor,
    in_mask: np.ndarray,
    params: ModelParams,
    prefix: str,
) -> tuple[Tensor, Tensor]:
    """Layer-0 gated states: in-group entities scaled by c, cross-group by 1-c.

    c = sigmoid(Wc [h_seq, h_transfer, mean(entity initials)] + bc)
    balances domains when their entity counts are lopsided.  Returns
    (layer-0 states (n, d), gate c (d,)).
    """
    n = entity_initials.data.shape[0]
    pooled = ad.sum_(entity_initials, axis=0) * (1.0 / max(n, 1))
    c = ad.sigmoid(
        ad.concat([h_seq, h_transfer, pooled]) @ params[f"{prefix}.gate_w"]
        + params[f"{prefix}.gate_b"]
    )
    gated = ad.mul(ad.col(weights), entity_initials)
    in_col = Tensor(in_mask.reshape(-1, 1))
    out_col = Tensor(1.0 - in_mask.reshape(-1, 1))
    layer0 = ad.mul(in_col, ad.mul(gated, c)) + ad.mul(out_col, ad.mul(gated, 1.0 - c))
    return layer0, c


def disseminate(
    layer: Tensor,
    weights: Tensor,
    entity_initials: Tensor,
    ctx: GraphContext,
    params: ModelParams,
    prefix: str,
    activation=ad.sigmoid,
) -> Tensor:
    """One dissemination round over the subgraph.

    next_k = act[ f0(h_k)
                  + (1/|Nin(k)|) sum_r sum_{p in Nin(k)} f_in(w_p h_p)
                  + (1/|Nx(k)|)  sum_r sum_{q in Nx(k)}  f_x(w_q h_q + c_kq h_q) ]

    c_kq is the summed similarity between q and k's same-domain neighbors,
    taken over the initial entity embeddings.  Empty neighbor sets
    contribute zero.  ``activation`` is a test hook (default sigmoid).
    """
    total = layer @ params[f"{prefix}.self_w"] + params[f"{prefix}.self_b"]
    weighted = ad.mul(ad.col(weights), layer)
    scaled = f"{prefix}.rel_scale_in" in params

    in_acc = None
    for r in range(ctx.n_relations):
        if not ctx.in_rel_counts[r].any():
            continue
        msg = Tensor(ctx.in_adj[r]) @ weighted
        term = msg @ params[f"{prefix}.in_w"] + ad.mul(
            Tensor(ctx.in_rel_counts[r]), params[f"{prefix}.in_b"]
        )
        if scaled:
            term = ad.mul(ad.pick(params[f"{prefix}.rel_scale_in"], r), term)
        in_acc = term if in_acc is None else in_acc + term
    if in_acc is not None:
        total = total + ad.mul(Tensor(ctx.inv_in), in_acc)

    if ctx.has_cross_edges:
        gram = entity_initials @ ad.transpose(entity_initials)
        sim = Tensor(ctx.in_any) @ gram  # sim[k, q] = sum over k's in-neighbors p of e_p . e_q
        cross_acc = None
        for r in range(ctx.n_relations):
            if not ctx.cross_rel_counts[r].any():
                continue
            msg = Tensor(ctx.cross_adj[r]) @ weighted + ad.mul(Tensor(ctx.cross_adj[r]), sim) @ layer
            term = msg @ params[f"{prefix}.cross_w"] + ad.mul(
                Tensor(ctx.cross_rel_counts[r]), params[f"{prefix}.cross_b"]
            )
            if scaled:
                term = ad.mul(ad.pick(params[f"{prefix}.rel_scale_cross"], r), term)
            cross_acc = term if cross_acc is None else cross_acc + term
        if cross_acc is not None:
            total = total + ad.mul(Tensor(ctx.inv_cross), cross_acc)

    return activation(total)


def gated_transfer(
    entity_initials: Tensor,
    disseminated: Tensor,
    h_seq: Tensor,
    params: ModelParams,
    prefix: str,
) -> Tensor:
    """Merge disseminated knowledge back into the initial entity states.

    r (update) rescales the initial state inside the candidate; f (forget)
    balances initial state against candidate: hT = (1-f) h0 + f cand.
    """
    r = ad.sigmoid(
        entity_initials @ params[f"{prefix}.reset_w0"]
        + disseminated @ params[f"{prefix}.reset_wl"]
        + params[f"{prefix}.reset_b"]
    )
    f = ad.sigmoid(
        entity_initials @ params[f"{prefix}.forget_w0"]
        + disseminated @ params[f"{prefix}.forget_wl"]
        + h_seq @ params[f"{prefix}.forget_wseq"]
        + params[f"{prefix}.forget_b"]
    )
    cand = ad.tanh(
        disseminated @ params[f"{prefix}.cand_w"]
        + ad.mul(params[f"{prefix}.cand_u"], ad.mul(r, entity_initials))
    )
    return ad.mul(1.0 - f, entity_initials) + ad.mul(f, cand)


@dataclass
class KtuResult:
    transferred: Tensor  # (n, d) h^T per entity
    summary: Tensor  # (d,) sum over entities
    weights: Tensor  # (n,) per-entity attention
    gate: Tensor  # (d,) cross-domain gate c


def run_ktu(
    h_seq: Tensor,
    h_transfer: Tensor,
    entity_initials: Tensor,
    ctx: GraphContext,
    in_is_domain_a: bool,
    params: ModelParams,
    prefix: str,
    layers: int,
) -> KtuResult:
    """Full unit for one direction over a non-empty subgraph."""
    rows_in = ctx.rows(in_is_domain_a)
    rows_cross = ctx.rows(not in_is_domain_a)
    w_in = entity_attention(
        h_seq, ad.gather(entity_initials, rows_in), params, f"{prefix}.attn_in"
    )
    w_cross = entity_attention(
        h_transfer, ad.gather(entity_initials, rows_cross), params, f"{prefix}.attn_cross"
    )
    weights = combine_group_weights(w_in, w_cross, rows_in, rows_cross, ctx.n_entities)
    in_mask = ctx.mask_a if in_is_domain_a else ctx.mask_b
    state, gate = cross_gate(
        h_seq, h_transfer, entity_initials, weights, in_mask, params, prefix
    )
    for _ in range(layers):
        state = disseminate(state, weights, entity_initials, ctx, params, prefix)
    transferred = gated_transfer(entity_initials, state, h_seq, params, prefix)
    summary = ad.sum_(transferred, axis=0)
    return KtuResult(transferred=transferred, summary=summary, weights=weights, gate=gate)
