"""Full network assembly: parameters, per-sequence forward, batch losses.

A forward pass encodes both single-domain sub-sequences once, runs the
behavior transfer in both directions, optionally runs the knowledge
transfer over the extracted subgraph (one direction per target domain),
and feeds the heads.  Both directions share one code path; the direction
only selects parameter namespaces and swaps the domain roles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DOMAINS, HybridSequence, Vocabulary
from .encoder import GRU_WEIGHTS, align_target_states, btu_transfer, encode_sequence
from .heads import (
    DirectionOutput,
    DomainTargets,
    RankedRecommendation,
    SequenceForward,
    forced_sequence_mode,
    graph_decode,
    mode_switch,
    normalize_variant,
    sequence_decode,
    total_loss,
)
from .kg import KnowledgeSubgraph
from .ktu import GraphContext, run_ktu
from .params import ModelParams, xavier_init


@dataclass
class ModelDims:
    hidden: int
    n_items_a: int
    n_items_b: int
    n_entities: int
    n_relations: int


def _add_gru(params: ModelParams, prefix: str, d: int, rng) -> None:
    for name in GRU_WEIGHTS:
        if name.startswith("b_"):
            params.add(f"{prefix}.{name}", np.zeros(d))
        else:
            params.add(f"{prefix}.{name}", xavier_init((d, d), rng))


def _add_btu(params: ModelParams, prefix: str, d: int, rng) -> None:
    for name in ("gate_w_src", "gate_w_tgt", "gate_w_prev", "cand_w", "cand_u"):
        params.add(f"{prefix}.{name}", xavier_init((d, d), rng))
    params.add(f"{prefix}.gate_b", np.zeros(d))
    params.add(f"{prefix}.cand_b", np.zeros(d))
    _add_gru(params, f"{prefix}.xfer", d, rng)


def _add_ktu(params: ModelParams, prefix: str, d: int, n_relations: int, rng, rel_scales: bool) -> None:
    for group in ("attn_in", "attn_cross"):
        params.add(f"{prefix}.{group}.w_query", xavier_init((d, d), rng))
        params.add(f"{prefix}.{group}.w_entity", xavier_init((d, d), rng))
        params.add(f"{prefix}.{group}.v", xavier_init((d,), rng))
    params.add(f"{prefix}.gate_w", xavier_init((3 * d, d), rng))
    params.add(f"{prefix}.gate_b", np.zeros(d))
    params.add(f"{prefix}.self_w", xavier_init((d, d), rng))
    params.add(f"{prefix}.self_b", np.zeros(d))
    params.add(f"{prefix}.in_w", xavier_init((d, d), rng))
    params.add(f"{prefix}.in_b", np.zeros(d))
    params.add(f"{prefix}.cross_w", xavier_init((d, d), rng))
    params.add(f"{prefix}.cross_b", np.zeros(d))
    if rel_scales:
        params.add(f"{prefix}.rel_scale_in", np.ones(n_relations))
        params.add(f"{prefix}.rel_scale_cross", np.ones(n_relations))
    params.add(f"{prefix}.reset_w0", xavier_init((d, d), rng))
    params.add(f"{prefix}.reset_wl", xavier_init((d, d), rng))
    params.add(f"{prefix}.reset_b", np.zeros(d))
    params.add(f"{prefix}.forget_w0", xavier_init((d, d), rng))
    params.add(f"{prefix}.forget_wl", xavier_init((d, d), rng))
    params.add(f"{prefix}.forget_wseq", xavier_init((d, d), rng))
    params.add(f"{prefix}.forget_b", np.zeros(d))
    params.add(f"{prefix}.cand_w", xavier_init((d, d), rng))
    params.add(f"{prefix}.cand_u", xavier_init((d,), rng))


def build_params(dims: ModelDims, seed: int, rel_scales: bool = True) -> ModelParams:
    """Xavier-initialized registry covering every learned weight."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    d = dims.hidden
    params = ModelParams()
    params.add("emb.items_a", xavier_init((dims.n_items_a, d), rng))
    params.add("emb.items_b", xavier_init((dims.n_items_b, d), rng))
    params.add("emb.entities", xavier_init((dims.n_entities, d), rng))
    _add_gru(params, "enc_a", d, rng)
    _add_gru(params, "enc_b", d, rng)
    _add_btu(params, "btu_a2b", d, rng)
    _add_btu(params, "btu_b2a", d, rng)
    _add_ktu(params, "ktu_a2b", d, dims.n_relations, rng, rel_scales)
    _add_ktu(params, "ktu_b2a", d, dims.n_relations, rng, rel_scales)
    params.add("mode_a.w", xavier_init((3 * d, 2), rng))
    params.add("mode_a.b", np.zeros(2))
    params.add("mode_b.w", xavier_init((3 * d, 2), rng))
    params.add("mode_b.b", np.zeros(2))
    params.add("seq_dec_a.w", xavier_init((2 * d, dims.n_items_a), rng))
    params.add("seq_dec_a.b", np.zeros(dims.n_items_a))
    params.add("seq_dec_b.w", xavier_init((2 * d, dims.n_items_b), rng))
    params.add("seq_dec_b.b", np.zeros(dims.n_items_b))
    params.add("graph_dec_a.v", xavier_init((d,), rng))
    params.add("graph_dec_b.v", xavier_init((d,), rng))
    return params


class Network:
    """Stateless forward logic bound to one parameter registry."""

    def __init__(
        self,
        dims: ModelDims,
        params: ModelParams,
        vocab: Vocabulary,
        layers: int = 2,
    ):
        self.dims = dims
        self.params = params
        self.vocab = vocab
        self.layers = layers

    # ---------------------------------------------------------------- helpers
    def graph_support(
        self, subgraph: KnowledgeSubgraph, domain: str
    ) -> tuple[np.ndarray, np.ndarray]:
        """(local rows, catalog indices) of recommendable item entities."""
        rows, catalog = [], []
        for row, (name, tag, flag) in enumerate(
            zip(subgraph.entity_names, subgraph.domain_tags, subgraph.item_flags)
        ):
            if not flag or tag != domain:
                continue
            idx = self.vocab.lookup(name, domain)
            if idx >= 0:
                rows.append(row)
                catalog.append(idx)
        return np.array(rows, dtype=int), np.array(catalog, dtype=int)

    def _encode_both(self, seq: HybridSequence):
        d = self.dims.hidden
        states_a, h_a = encode_sequence(
            seq.indices(DOMAINS[0]), self.params["emb.items_a"], self.params, "enc_a", d
        )
        states_b, h_b = encode_sequence(
            seq.indices(DOMAINS[1]), self.params["emb.items_b"], self.params, "enc_b", d
        )
        return states_a, h_a, states_b, h_b

    def _direction(
        self,
        target_domain: str,
        seq: HybridSequence,
        subgraph: KnowledgeSubgraph | None,
        ctx: GraphContext | None,
        entity_initials: Tensor | None,
        states_a, h_a, states_b, h_b,
        variant: str,
    ) -> DirectionOutput:
        d = self.dims.hidden
        to_b = target_domain == DOMAINS[1]
        if to_b:
            src_states, src_positions = states_a, seq.sub_a
            tgt_states, tgt_positions = states_b, seq.sub_b
            h_src, h_tgt = h_a, h_b
            btu_ns, ktu_ns, mode_ns, dec_ns, gdec_ns = (
                "btu_a2b", "ktu_a2b", "mode_b", "seq_dec_b", "graph_dec_b",
            )
        else:
            src_states, src_positions = states_b, seq.sub_b
            tgt_states, tgt_positions = states_a, seq.sub_a
            h_src, h_tgt = h_b, h_a
            btu_ns, ktu_ns, mode_ns, dec_ns, gdec_ns = (
                "btu_b2a", "ktu_b2a", "mode_a", "seq_dec_a", "graph_dec_a",
            )

        aligned = align_target_states(seq, src_positions, tgt_positions, tgt_states, d)
        _, h_transfer = btu_transfer(src_states, aligned, self.params, btu_ns, d)

        support_rows = np.array([], dtype=int)
        support_catalog = np.array([], dtype=int)
        ktu_result = None
        use_graph = (
            normalize_variant(variant) != "MIFN-KTU"
            and subgraph is not None
            and not subgraph.empty
        )
        if use_graph:
            support_rows, support_catalog = self.graph_support(subgraph, target_domain)
            ktu_result = run_ktu(
                h_src,
                h_transfer,
                entity_initials,
                ctx,
                in_is_domain_a=to_b,
                params=self.params,
                prefix=ktu_ns,
                layers=self.layers,
            )

        forced = not use_graph or len(support_rows) == 0
        if forced:
            p_graph, p_seq = forced_sequence_mode()
            graph_cond = None
        else:
            p_graph, p_seq = mode_switch(
                h_tgt, h_transfer, ktu_result.summary, self.params, mode_ns
            )
            graph_cond = graph_decode(
                ktu_result.transferred, support_rows, self.params, gdec_ns
            )
        seq_cond = sequence_decode(h_tgt, h_transfer, self.params, dec_ns)
        return DirectionOutput(
            domain=target_domain,
            p_graph=p_graph,
            p_seq=p_seq,
            seq_cond=seq_cond,
            graph_cond=graph_cond,
            support_catalog=support_catalog,
            forced=forced,
        )

    # ---------------------------------------------------------------- forward
    def forward_prefix(
        self,
        seq: HybridSequence,
        subgraph: KnowledgeSubgraph | None,
        variant: str = "MIFN",
    ) -> dict[str, DirectionOutput]:
        """Head outputs for both target domains on one encoded prefix."""
        ctx = None
        entity_initials = None
        if subgraph is not None and not subgraph.empty:
            ctx = GraphContext.from_subgraph(subgraph, DOMAINS[0])
            entity_initials = ad.gather(self.params["emb.entities"], subgraph.entity_ids)
        states_a, h_a, states_b, h_b = self._encode_both(seq)
        shared = (states_a, h_a, states_b, h_b)
        return {
            domain: self._direction(
                domain, seq, subgraph, ctx, entity_initials, *shared, variant
            )
            for domain in DOMAINS
        }

    def forward_sequence(
        self,
        seq: HybridSequence,
        subgraph: KnowledgeSubgraph | None,
        variant: str = "MIFN",
        all_positions: bool = False,
    ) -> SequenceForward:
        """Training targets for one sequence.

        Default: predict the held-out last item of each domain from the
        full prefix.  With ``all_positions`` every later in-prefix item of
        each domain becomes an extra target, re-encoding its own prefix
        and reusing the sequence's subgraph.
        """
        targets: dict[str, DomainTargets] = {
            DOMAINS[0]: DomainTargets([], []),
            DOMAINS[1]: DomainTargets([], []),
        }
        if all_positions:
            positions = {
                DOMAINS[0]: seq.sub_a[1:],
                DOMAINS[1]: seq.sub_b[1:],
            }
            for domain, pos_list in positions.items():
                for pos in pos_list:
                    prefix = HybridSequence(
                        seq_id=f"{seq.seq_id}@{pos}",
                        user_id=seq.user_id,
                        item_ids=seq.item_ids[:pos],
                        item_domains=seq.item_domains[:pos],
                        gt_a_id=seq.gt_a_id,
                        gt_b_id=seq.gt_b_id,
                        items=seq.items[:pos],
                        gt_a=seq.gt_a,
                        gt_b=seq.gt_b,
                    )
                    out = self.forward_prefix(prefix, subgraph, variant)[domain]
                    targets[domain].outputs.append(out)
                    targets[domain].gt_indices.append(seq.items[pos][0])
        outs = self.forward_prefix(seq, subgraph, variant)
        targets[DOMAINS[0]].outputs.append(outs[DOMAINS[0]])
        targets[DOMAINS[0]].gt_indices.append(seq.gt_a)
        targets[DOMAINS[1]].outputs.append(outs[DOMAINS[1]])
        targets[DOMAINS[1]].gt_indices.append(seq.gt_b)
        return SequenceForward(
            seq_id=seq.seq_id,
            domain_a=targets[DOMAINS[0]],
            domain_b=targets[DOMAINS[1]],
        )

    def batch_loss(
        self,
        sequences: list[HybridSequence],
        subgraphs: dict[str, KnowledgeSubgraph],
        variant: str = "MIFN",
        graph_reading: bool = False,
        all_positions: bool = False,
    ):
        """(total, rec, mode, floored) loss nodes over one batch."""
        batch = [
            self.forward_sequence(
                seq, subgraphs.get(seq.seq_id), variant, all_positions
            )
            for seq in sequences
        ]
        return total_loss(batch, variant, graph_reading)

    def recommend(
        self,
        seq: HybridSequence,
        subgraph: KnowledgeSubgraph | None,
        variant: str = "MIFN",
        k: int = 10,
    ) -> dict[str, RankedRecommendation]:
        """Ranked per-domain outputs for one prefix (no gradient recording)."""
        with ad.no_grad():
            outs = self.forward_prefix(seq, subgraph, variant)
            return {domain: RankedRecommendation.build(out, k) for domain, out in outs.items()}
