import numpy as np
import pytest

from mifn import autodiff as ad
from mifn.autodiff import Tensor
from mifn.data import HybridSequence
from mifn.encoder import (
    align_target_states,
    btu_step,
    btu_transfer,
    encode_sequence,
    gru_step,
)
from mifn.params import ModelParams


def add_gru(params, prefix, d, rng=None, scale=0.4):
    for name in ("w_update", "u_update", "w_reset", "u_reset", "w_cand", "u_cand"):
        data = np.zeros((d, d)) if rng is None else rng.normal(size=(d, d)) * scale
        params.add(f"{prefix}.{name}", data)
    for name in ("b_update", "b_reset", "b_cand"):
        data = np.zeros(d) if rng is None else rng.normal(size=d) * scale
        params.add(f"{prefix}.{name}", data)


def add_btu(params, prefix, d, rng=None, scale=0.4):
    for name in ("gate_w_src", "gate_w_tgt", "gate_w_prev", "cand_w", "cand_u"):
        data = np.zeros((d, d)) if rng is None else rng.normal(size=(d, d)) * scale
        params.add(f"{prefix}.{name}", data)
    for name in ("gate_b", "cand_b"):
        data = np.zeros(d) if rng is None else rng.normal(size=d) * scale
        params.add(f"{prefix}.{name}", data)
    add_gru(params, f"{prefix}.xfer", d, rng, scale)


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_gru_step(p, prefix, x, h):
    """Independent plain-numpy replay of the recurrence."""
    z = np_sigmoid(x @ p[f"{prefix}.w_update"].data + h @ p[f"{prefix}.u_update"].data + p[f"{prefix}.b_update"].data)
    r = np_sigmoid(x @ p[f"{prefix}.w_reset"].data + h @ p[f"{prefix}.u_reset"].data + p[f"{prefix}.b_reset"].data)
    cand = np.tanh(x @ p[f"{prefix}.w_cand"].data + (r * h) @ p[f"{prefix}.u_cand"].data + p[f"{prefix}.b_cand"].data)
    return (1 - z) * h + z * cand


class TestEncoder:
    def test_empty_sequence_gives_zero_summary(self):
        params = ModelParams()
        add_gru(params, "enc", 3)
        table = Tensor(np.zeros((2, 3)), requires_grad=True)
        states, summary = encode_sequence([], table, params, "enc", 3)
        assert states == []
        np.testing.assert_array_equal(summary.data, np.zeros(3))

    def test_zero_weights_fixpoint(self):
        params = ModelParams()
        add_gru(params, "enc", 4)
        table = Tensor(np.zeros((3, 4)), requires_grad=True)
        states, summary = encode_sequence([1], table, params, "enc", 4)
        np.testing.assert_array_equal(states[0].data, np.zeros(4))
        np.testing.assert_array_equal(summary.data, np.zeros(4))

    def test_three_item_toy_matches_hand_table(self):
        rng = np.random.default_rng(5)
        params = ModelParams()
        add_gru(params, "enc", 2, rng)
        table = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        idx = [2, 0, 3]
        states, summary = encode_sequence(idx, table, params, "enc", 2)

        # step-by-step hand replay against the recorded graph states
        h = np.zeros(2)
        for graph_state, i in zip(states, idx):
            h = np_gru_step(params, "enc", table.data[i], h)
            np.testing.assert_allclose(graph_state.data, h, atol=1e-12)
        np.testing.assert_allclose(summary.data, h, atol=1e-12)

    def test_out_of_vocabulary_sentinel_and_range_check(self):
        params = ModelParams()
        add_gru(params, "enc", 2)
        table = Tensor(np.ones((2, 2)), requires_grad=True)
        states, _ = encode_sequence([-1], table, params, "enc", 2)
        np.testing.assert_array_equal(states[0].data, np.zeros(2))
        with pytest.raises(ValueError):
            encode_sequence([5], table, params, "enc", 2)

    def test_gradients_through_encoder(self):
        rng = np.random.default_rng(8)
        params = ModelParams()
        add_gru(params, "enc", 3, rng)
        table = params.add("emb", rng.normal(size=(4, 3)) * 0.5)

        def loss_fn():
            states, summary = encode_sequence([0, 2, 1], table, params, "enc", 3)
            return ad.sum_(ad.mul(summary, summary))

        err = ad.finite_diff_check(loss_fn, dict(params.items()), eps=1e-5)
        assert err < 1e-4


class TestBtuStep:
    def test_all_zero_inputs(self):
        params = ModelParams()
        add_btu(params, "btu", 3)
        zero = Tensor(np.zeros(3))
        out = btu_step(zero, zero, zero, params, "btu")
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_saturated_gate_returns_candidate(self):
        rng = np.random.default_rng(2)
        params = ModelParams()
        add_btu(params, "btu", 3, rng)
        params["btu.gate_b"].data = np.full(3, 500.0)  # force f = 1 exactly
        h_src = Tensor(rng.normal(size=3))
        h_tgt = Tensor(rng.normal(size=3))
        h_prev = Tensor(rng.normal(size=3))
        out = btu_step(h_src, h_tgt, h_prev, params, "btu")
        cand = np.tanh(
            h_src.data @ params["btu.cand_w"].data
            + h_prev.data @ params["btu.cand_u"].data
            + params["btu.cand_b"].data
        )
        np.testing.assert_array_equal(out.data, cand)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        params = ModelParams()
        add_btu(params, "btu", 2, rng)
        h_src = Tensor(rng.normal(size=2))
        h_tgt = Tensor(rng.normal(size=2))
        h_prev = Tensor(rng.normal(size=2))
        out = btu_step(h_src, h_tgt, h_prev, params, "btu")

        f = np_sigmoid(
            h_src.data @ params["btu.gate_w_src"].data
            + h_tgt.data @ params["btu.gate_w_tgt"].data
            + h_prev.data @ params["btu.gate_w_prev"].data
            + params["btu.gate_b"].data
        )
        cand = np.tanh(
            h_src.data @ params["btu.cand_w"].data
            + h_prev.data @ params["btu.cand_u"].data
            + params["btu.cand_b"].data
        )
        expected = f * cand + (1 - f) * h_prev.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_gate_range_and_convexity(self):
        rng = np.random.default_rng(4)
        params = ModelParams()
        add_btu(params, "btu", 5, rng, scale=1.5)
        for _ in range(25):
            h_src = Tensor(rng.normal(size=5) * 2)
            h_tgt = Tensor(rng.normal(size=5) * 2)
            h_prev = Tensor(rng.normal(size=5) * 2)
            out = btu_step(h_src, h_tgt, h_prev, params, "btu")
            cand = np.tanh(
                h_src.data @ params["btu.cand_w"].data
                + h_prev.data @ params["btu.cand_u"].data
                + params["btu.cand_b"].data
            )
            low = np.minimum(cand, h_prev.data) - 1e-12
            high = np.maximum(cand, h_prev.data) + 1e-12
            assert np.all(out.data >= low) and np.all(out.data <= high)


class TestBtuTransfer:
    def test_single_step_from_zero_state(self):
        rng = np.random.default_rng(6)
        params = ModelParams()
        add_btu(params, "btu", 3, rng)
        src = [Tensor(rng.normal(size=3))]
        tgt = [Tensor(rng.normal(size=3))]
        steps, summary = btu_transfer(src, tgt, params, "btu", 3)
        assert len(steps) == 1
        distilled = btu_step(src[0], tgt[0], Tensor(np.zeros(3)), params, "btu")
        expected = gru_step(params, "btu.xfer", distilled, Tensor(np.zeros(3)))
        np.testing.assert_allclose(summary.data, expected.data, atol=1e-12)

    def test_zero_weights_zero_flow(self):
        params = ModelParams()
        add_btu(params, "btu", 4)
        src = [Tensor(np.ones(4)) for _ in range(3)]
        tgt = [Tensor(np.ones(4)) for _ in range(3)]
        steps, summary = btu_transfer(src, tgt, params, "btu", 4)
        for s in steps:
            np.testing.assert_array_equal(s.data, np.zeros(4))
        np.testing.assert_array_equal(summary.data, np.zeros(4))

    def test_three_step_hand_unroll(self):
        rng = np.random.default_rng(7)
        params = ModelParams()
        add_btu(params, "btu", 2, rng)
        src = [Tensor(rng.normal(size=2)) for _ in range(3)]
        tgt = [Tensor(rng.normal(size=2)) for _ in range(3)]
        steps, summary = btu_transfer(src, tgt, params, "btu", 2)

        def np_btu(h_src, h_tgt, h_prev):
            f = np_sigmoid(
                h_src @ params["btu.gate_w_src"].data
                + h_tgt @ params["btu.gate_w_tgt"].data
                + h_prev @ params["btu.gate_w_prev"].data
                + params["btu.gate_b"].data
            )
            cand = np.tanh(
                h_src @ params["btu.cand_w"].data
                + h_prev @ params["btu.cand_u"].data
                + params["btu.cand_b"].data
            )
            return f * cand + (1 - f) * h_prev

        prev = np.zeros(2)
        distilled = []
        for s, t in zip(src, tgt):
            prev = np_btu(s.data, t.data, prev)
            distilled.append(prev)
        h = np.zeros(2)
        for d in distilled:
            h = np_gru_step(params, "btu.xfer", d, h)
        np.testing.assert_allclose(summary.data, h, atol=1e-12)

    def test_mismatched_alignment_rejected(self):
        params = ModelParams()
        add_btu(params, "btu", 2)
        with pytest.raises(ValueError):
            btu_transfer([Tensor(np.zeros(2))], [], params, "btu", 2)

    def test_direction_symmetry(self):
        # swapping domain labels and parameter namespaces swaps outputs exactly
        rng = np.random.default_rng(9)
        params = ModelParams()
        add_btu(params, "btu_a2b", 3, rng)
        add_btu(params, "btu_b2a", 3, np.random.default_rng(9))  # identical weights
        src = [Tensor(rng.normal(size=3)) for _ in range(2)]
        tgt = [Tensor(rng.normal(size=3)) for _ in range(2)]
        _, fwd = btu_transfer(src, tgt, params, "btu_a2b", 3)
        _, rev = btu_transfer(src, tgt, params, "btu_b2a", 3)
        np.testing.assert_array_equal(fwd.data, rev.data)

    def test_gradients_through_transfer(self):
        rng = np.random.default_rng(10)
        params = ModelParams()
        add_btu(params, "btu", 2, rng)
        src_data = [rng.normal(size=2) for _ in range(3)]
        tgt_data = [rng.normal(size=2) for _ in range(3)]

        def loss_fn():
            src = [Tensor(x) for x in src_data]
            tgt = [Tensor(x) for x in tgt_data]
            _, summary = btu_transfer(src, tgt, params, "btu", 2)
            return ad.sum_(ad.mul(summary, summary))

        err = ad.finite_diff_check(loss_fn, dict(params.items()), eps=1e-5)
        assert err < 1e-4


class TestAlignment:
    def test_latest_preceding_target_state(self):
        seq = HybridSequence(
            seq_id="s",
            user_id="u",
            item_ids=["a1", "b1", "a2", "b2", "a3"],
            item_domains=["A", "B", "A", "B", "A"],
            gt_a_id="ga",
            gt_b_id="gb",
        )
        target_states = [Tensor(np.full(2, 1.0)), Tensor(np.full(2, 2.0))]
        aligned = align_target_states(seq, seq.sub_a, seq.sub_b, target_states, 2)
        np.testing.assert_array_equal(aligned[0].data, np.zeros(2))  # a1: no B yet
        np.testing.assert_array_equal(aligned[1].data, np.full(2, 1.0))  # a2 after b1
        np.testing.assert_array_equal(aligned[2].data, np.full(2, 2.0))  # a3 after b2
