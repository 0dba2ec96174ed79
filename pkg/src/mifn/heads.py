"""Mode switch, the two decoders, probability mixing and the loss terms.

Each direction produces a two-way mode distribution (graph vs sequence),
a full-catalog conditional from the sequence decoder and, when the
subgraph offers recommendable item entities, a conditional over exactly
those entities from the graph decoder.  The mixed distribution is the
mode-weighted sum; items outside both supports keep exactly zero mass.

Degraded routing: an empty subgraph, a subgraph without recommendable
target-domain item entities, or the KTU-less variant all force the mode
distribution to (graph=0, sequence=1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ModelParams

PROB_FLOOR = 1e-12

VARIANTS = ("MIFN", "MIFN+L_M", "MIFN-KTU")


def normalize_variant(name: str) -> str:
    """Accept ASCII or unicode minus spellings; reject anything unknown."""
    cleaned = name.strip().replace("−", "-")
    if cleaned not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return cleaned


def mode_switch(
    h_target: Tensor,
    h_transfer: Tensor,
    knowledge_summary: Tensor,
    params: ModelParams,
    prefix: str,
) -> tuple[Tensor, Tensor]:
    """(P(graph mode), P(sequence mode)) from the joined representation."""
    probs = ad.softmax(
        ad.concat([h_target, h_transfer, knowledge_summary]) @ params[f"{prefix}.w"]
        + params[f"{prefix}.b"]
    )
    return ad.pick(probs, 0), ad.pick(probs, 1)


def forced_sequence_mode() -> tuple[Tensor, Tensor]:
    """Degenerate (0, 1) mode distribution for sequences without a usable graph."""
    return Tensor(0.0), Tensor(1.0)


def sequence_decode(
    h_target: Tensor,
    h_transfer: Tensor,
    params: ModelParams,
    prefix: str,
) -> Tensor:
    """Softmax over the whole training catalog from [h_target, h_transfer]."""
    logits = ad.concat([h_target, h_transfer]) @ params[f"{prefix}.w"] + params[f"{prefix}.b"]
    return ad.softmax(logits)


def graph_decode(
    transferred: Tensor,
    support_rows: np.ndarray,
    params: ModelParams,
    prefix: str,
) -> Tensor:
    """Softmax over recommendable subgraph item entities.

    Each supported entity's transferred state is projected to a scalar by
    a learned scoring vector; items outside the support get no mass at all
    (they simply do not appear here).
    """
    if len(support_rows) == 0:
        raise ValueError("graph_decode requires a non-empty support")
    scores = ad.gather(transferred, support_rows) @ params[f"{prefix}.v"]
    return ad.softmax(scores)


@dataclass
class DirectionOutput:
    """Everything one direction's heads produced for one encoded prefix."""

    domain: str
    p_graph: Tensor  # scalar node
    p_seq: Tensor  # scalar node
    seq_cond: Tensor  # (catalog,) node
    graph_cond: Tensor | None  # (support,) node, None when routing is forced
    support_catalog: np.ndarray  # catalog indices aligned with graph_cond
    forced: bool


def mix_probabilities(
    mode_probs: tuple[float, float],
    graph_conditional: np.ndarray,
    seq_conditional: np.ndarray,
) -> np.ndarray:
    """P(item) = P(seq) P(item|seq) + P(graph) P(item|graph) over the catalog."""
    p_graph, p_seq = mode_probs
    return p_seq * seq_conditional + p_graph * graph_conditional


def mixed_catalog_distribution(out: DirectionOutput) -> np.ndarray:
    """Dense mixed distribution from one direction's head outputs."""
    catalog = out.seq_cond.data.shape[0]
    graph_dense = np.zeros(catalog)
    if out.graph_cond is not None and len(out.support_catalog):
        graph_dense[out.support_catalog] = out.graph_cond.data
    return mix_probabilities(
        (float(out.p_graph.data), float(out.p_seq.data)),
        graph_dense,
        out.seq_cond.data,
    )


@dataclass
class RankedRecommendation:
    """Per-domain ranking with the mode decomposition attached."""

    domain: str
    p_graph: float
    p_seq: float
    seq_conditional: np.ndarray
    graph_conditional: np.ndarray  # dense over the catalog, zero off-support
    graph_support: np.ndarray
    mixed: np.ndarray
    top_items: list[int] = field(default_factory=list)

    @classmethod
    def build(cls, out: DirectionOutput, k: int) -> "RankedRecommendation":
        catalog = out.seq_cond.data.shape[0]
        graph_dense = np.zeros(catalog)
        if out.graph_cond is not None and len(out.support_catalog):
            graph_dense[out.support_catalog] = out.graph_cond.data
        mixed = mix_probabilities(
            (float(out.p_graph.data), float(out.p_seq.data)),
            graph_dense,
            out.seq_cond.data,
        )
        order = np.argsort(-mixed, kind="stable")
        return cls(
            domain=out.domain,
            p_graph=float(out.p_graph.data),
            p_seq=float(out.p_seq.data),
            seq_conditional=out.seq_cond.data.copy(),
            graph_conditional=graph_dense,
            graph_support=np.array(out.support_catalog, dtype=int),
            mixed=mixed,
            top_items=[int(i) for i in order[: min(k, catalog)]],
        )


def ground_truth_probability(out: DirectionOutput, gt_index: int) -> Tensor:
    """Mixed probability of the ground truth as a graph node.

    Items outside the vocabulary (index -1) and outside the graph support
    contribute structural zeros, so the result may be the constant 0.
    """
    total: Tensor | None = None
    if gt_index >= 0:
        total = ad.mul(out.p_seq, ad.pick(out.seq_cond, gt_index))
        if out.graph_cond is not None:
            hits = np.nonzero(out.support_catalog == gt_index)[0]
            if len(hits):
                total = total + ad.mul(out.p_graph, ad.pick(out.graph_cond, int(hits[0])))
    return total if total is not None else Tensor(0.0)


def negative_log_likelihood(prob: Tensor) -> Tensor:
    return ad.neg(ad.log(ad.clip_min(prob, PROB_FLOOR)))


@dataclass
class DomainTargets:
    """Per-sequence prediction targets for one domain (one per position)."""

    outputs: list[DirectionOutput]
    gt_indices: list[int]


@dataclass
class SequenceForward:
    seq_id: str
    domain_a: DomainTargets
    domain_b: DomainTargets


def recommendation_loss(batch: list[SequenceForward]) -> tuple[Tensor, int]:
    """Mean negative log-likelihood of the ground truths, per domain, summed.

    Returns (loss node, number of floored targets); a floored target means
    its mixed probability vanished entirely and the log got clamped.
    """
    if not batch:
        raise ValueError("recommendation_loss needs a non-empty batch")
    floored = 0
    per_domain: list[Tensor] = []
    for pick_domain in (lambda f: f.domain_a, lambda f: f.domain_b):
        terms: list[Tensor] = []
        for fwd in sorted(batch, key=lambda f: f.seq_id):
            targets = pick_domain(fwd)
            for out, gt in zip(targets.outputs, targets.gt_indices):
                prob = ground_truth_probability(out, gt)
                if float(prob.data) <= PROB_FLOOR:
                    floored += 1
                terms.append(negative_log_likelihood(prob))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        per_domain.append(total * (1.0 / len(batch)))
    return per_domain[0] + per_domain[1], floored


def mode_loss(batch: list[SequenceForward], graph_reading: bool = False) -> Tensor:
    """Mode-prediction loss.

    As written, a ground truth inside the vocabulary contributes nothing
    (its coefficient vanishes); one outside it penalizes sequence-mode
    probability.  With ``graph_reading`` the penalized term is the graph
    mode probability instead.
    """
    if not batch:
        raise ValueError("mode_loss needs a non-empty batch")
    per_domain: list[Tensor] = []
    for pick_domain in (lambda f: f.domain_a, lambda f: f.domain_b):
        terms: list[Tensor] = []
        for fwd in sorted(batch, key=lambda f: f.seq_id):
            targets = pick_domain(fwd)
            for out, gt in zip(targets.outputs, targets.gt_indices):
                if gt >= 0:
                    continue  # indicator is 1, coefficient 1 - 1 = 0
                chosen = out.p_graph if graph_reading else out.p_seq
                terms.append(negative_log_likelihood(chosen))
        if terms:
            total = terms[0]
            for t in terms[1:]:
                total = total + t
            per_domain.append(total * (1.0 / len(batch)))
    if not per_domain:
        return Tensor(0.0)
    total = per_domain[0]
    for t in per_domain[1:]:
        total = total + t
    return total


def total_loss(
    batch: list[SequenceForward],
    variant: str,
    graph_reading: bool = False,
) -> tuple[Tensor, Tensor, Tensor, int]:
    """(total, recommendation part, mode part, floored count) per variant."""
    variant = normalize_variant(variant)
    rec, floored = recommendation_loss(batch)
    mode = Tensor(0.0)
    if variant == "MIFN+L_M":
        mode = mode_loss(batch, graph_reading)
        return rec + mode, rec, mode, floored
    return rec, rec, mode, floored
