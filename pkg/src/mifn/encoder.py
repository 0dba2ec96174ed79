"""GRU sequence encoding and the gated behavior transfer between domains.

Both domains share the code path; direction-specific weights live under
distinct parameter namespaces (``enc_a.``, ``btu_a2b.``, ...).  Hidden
state starts at zero.  The transfer side runs two recurrences: a gated
distillation that measures how strongly each source step relates to the
latest target-domain state seen before it, followed by a GRU that carries
the distilled flow into the target domain's representation space.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import HybridSequence
from .params import ModelParams

GRU_WEIGHTS = (
    "w_update",
    "u_update",
    "b_update",
    "w_reset",
    "u_reset",
    "b_reset",
    "w_cand",
    "u_cand",
    "b_cand",
)


def gru_step(params: ModelParams, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """h' = (1 - z) * h + z * tanh(candidate), standard gating."""
    z = ad.sigmoid(x @ params[f"{prefix}.w_update"] + h @ params[f"{prefix}.u_update"] + params[f"{prefix}.b_update"])
    r = ad.sigmoid(x @ params[f"{prefix}.w_reset"] + h @ params[f"{prefix}.u_reset"] + params[f"{prefix}.b_reset"])
    cand = ad.tanh(
        x @ params[f"{prefix}.w_cand"] + ad.mul(r, h) @ params[f"{prefix}.u_cand"] + params[f"{prefix}.b_cand"]
    )
    return (1.0 - z) * h + z * cand


def encode_sequence(
    item_indices: list[int],
    embedding: Tensor,
    params: ModelParams,
    prefix: str,
    dim: int,
) -> tuple[list[Tensor], Tensor]:
    """Per-step hidden states plus the last-step summary (zeros if empty).

    Index -1 marks an out-of-vocabulary item and embeds as the zero
    vector; anything else outside the table is a contract violation.
    """
    h = Tensor(np.zeros(dim))
    states: list[Tensor] = []
    for idx in item_indices:
        x = ad.embedding_row(embedding, idx)
        h = gru_step(params, prefix, x, h)
        states.append(h)
    summary = states[-1] if states else Tensor(np.zeros(dim))
    return states, summary


def btu_step(
    h_src: Tensor,
    h_tgt: Tensor,
    h_prev: Tensor,
    params: ModelParams,
    prefix: str,
) -> Tensor:
    """One gated distillation step.

    f measures how strongly the source step relates to the aligned target
    state and decides how much of the fresh candidate replaces the carried
    flow: out = f * cand + (1 - f) * prev.
    """
    f = ad.sigmoid(
        h_src @ params[f"{prefix}.gate_w_src"]
        + h_tgt @ params[f"{prefix}.gate_w_tgt"]
        + h_prev @ params[f"{prefix}.gate_w_prev"]
        + params[f"{prefix}.gate_b"]
    )
    cand = ad.tanh(
        h_src @ params[f"{prefix}.cand_w"]
        + h_prev @ params[f"{prefix}.cand_u"]
        + params[f"{prefix}.cand_b"]
    )
    return ad.mul(f, cand) + ad.mul(1.0 - f, h_prev)


def btu_transfer(
    source_states: list[Tensor],
    aligned_target_states: list[Tensor],
    params: ModelParams,
    prefix: str,
    dim: int,
) -> tuple[list[Tensor], Tensor]:
    """Distill every source step, then carry the flow with a transfer GRU.

    Returns (per-step transferred states, last-step summary); an empty
    source yields an empty list and a zero summary.
    """
    if len(source_states) != len(aligned_target_states):
        raise ValueError("source/target alignment length mismatch")
    zero = Tensor(np.zeros(dim))
    distilled: list[Tensor] = []
    prev = zero
    for h_src, h_tgt in zip(source_states, aligned_target_states):
        prev = btu_step(h_src, h_tgt, prev, params, prefix)
        distilled.append(prev)
    transferred: list[Tensor] = []
    h = zero
    for step in distilled:
        h = gru_step(params, f"{prefix}.xfer", step, h)
        transferred.append(h)
    summary = transferred[-1] if transferred else zero
    return transferred, summary


def align_target_states(
    seq: HybridSequence,
    source_positions: list[int],
    target_positions: list[int],
    target_states: list[Tensor],
    dim: int,
) -> list[Tensor]:
    """For each source step, the latest target-domain encoder state that
    precedes it in the hybrid order; the zero vector when none exists yet.
    Causal by construction: no future target information leaks."""
    zero = Tensor(np.zeros(dim))
    aligned: list[Tensor] = []
    t = -1
    for pos in source_positions:
        while t + 1 < len(target_positions) and target_positions[t + 1] < pos:
            t += 1
        aligned.append(target_states[t] if t >= 0 else zero)
    return aligned
