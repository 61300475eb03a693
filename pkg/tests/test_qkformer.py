import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuralsim.qkformer import (
    AttenReg,
    MaskAxis,
    OrderingViolation,
    QkBlockSpec,
    WriteBack,
    attention_mask,
    onthefly_writeback,
    plain_writeback,
    qk_attention_ref,
)
from neuralsim.simulator import run_qk_block
from neuralsim.spike_core import FixedPointFormat, FixedTensor, LifParams, SpikeTensor

FMT = FixedPointFormat(4)


def spec_from(rng, c, axis="token", residual=False, q_w=None, k_w=None):
    def w():
        return FixedTensor(rng.integers(-128, 128, (c, c, 1, 1)), FMT)

    return QkBlockSpec(
        q_weights=q_w if q_w is not None else w(),
        k_weights=k_w if k_w is not None else w(),
        q_lif=LifParams(16),
        k_lif=LifParams(16),
        residual=residual,
        out_lif=LifParams(16) if residual else None,
        axis=axis,
    )


def naive_qk(x, spec):
    c, h, w = x.shape
    qw, kw = spec.q_weights.values, spec.k_weights.values
    q = np.zeros((c, h, w), dtype=np.uint8)
    k = np.zeros((c, h, w), dtype=np.uint8)
    for o in range(c):
        for y in range(h):
            for xx in range(w):
                qs = sum(int(qw[o, i, 0, 0]) for i in range(c) if x[i, y, xx])
                ks = sum(int(kw[o, i, 0, 0]) for i in range(c) if x[i, y, xx])
                q[o, y, xx] = qs >= spec.q_lif.threshold
                k[o, y, xx] = ks >= spec.k_lif.threshold
    out = np.zeros_like(k)
    for o in range(c):
        for y in range(h):
            for xx in range(w):
                if spec.axis is MaskAxis.TOKEN:
                    m = any(q[i, y, xx] for i in range(c))
                else:
                    m = q[o].any()
                bit = int(k[o, y, xx] and m)
                if spec.residual:
                    bit = int((bit + int(x[o, y, xx])) * FMT.one >= spec.out_lif.threshold)
                out[o, y, xx] = bit
    return q, k, out


blocks = st.tuples(
    st.integers(1, 4),
    st.integers(1, 5),
    st.integers(1, 5),
    st.sampled_from(["token", "channel"]),
    st.booleans(),
    st.floats(0, 1),
    st.integers(0, 2**31 - 1),
)


def build(b):
    c, h, w, axis, residual, d, seed = b
    rng = np.random.default_rng(seed)
    return SpikeTensor.random((c, h, w), d, rng), spec_from(rng, c, axis, residual)


class TestReference:
    def test_zero_q_masks_everything(self, rng):
        zero = FixedTensor(np.zeros((3, 3, 1, 1)), FMT)
        spec = spec_from(rng, 3, q_w=zero)
        res = qk_attention_ref(SpikeTensor.random((3, 4, 4), 0.7, rng), spec)
        assert not res.mask.any() and not res.out.bits.any()

    def test_all_one_q_passes_k(self, rng):
        big = FixedTensor(np.full((3, 3, 1, 1), 127), FMT)
        spec = spec_from(rng, 3, q_w=big)
        x = SpikeTensor(np.ones((3, 4, 4), dtype=np.uint8))
        res = qk_attention_ref(x, spec)
        assert res.mask.all() and res.out == res.k

    @given(blocks)
    def test_matches_three_pass_loops(self, b):
        x, spec = build(b)
        q, k, out = naive_qk(x.bits, spec)
        res = qk_attention_ref(x, spec)
        assert res.q.bits.tolist() == q.tolist()
        assert res.k.bits.tolist() == k.tolist()
        assert res.out.bits.tolist() == out.tolist()

    @given(blocks, st.integers(0, 2**31 - 1))
    def test_mask_monotone_in_q(self, b, seed):
        x, spec = build(b)
        res = qk_attention_ref(x, spec)
        extra = (np.random.default_rng(seed).random(res.q.shape) < 0.3).astype(np.uint8)
        more = attention_mask(res.q.bits | extra, spec.axis)
        assert (more >= res.mask).all()
        assert int((res.k.bits & more).sum()) >= int((res.k.bits & res.mask).sum())

    def test_bad_shapes(self, rng):
        with pytest.raises(ValueError):
            QkBlockSpec(FixedTensor(np.zeros((2, 2, 3, 3)), FMT), FixedTensor(np.zeros((2, 2, 3, 3)), FMT), LifParams(1), LifParams(1))
        w = FixedTensor(np.zeros((2, 2, 1, 1)), FMT)
        with pytest.raises(ValueError):
            QkBlockSpec(w, w, LifParams(1), LifParams(1), residual=True)


def streams(q, k, k_offset):
    c, h, w = q.shape
    qs = [WriteBack(y * w + x, ch, y, x, int(q[ch, y, x])) for y in range(h) for x in range(w) for ch in range(c)]
    ks = [WriteBack(k_offset + y * w + x, ch, y, x, int(k[ch, y, x])) for y in range(h) for x in range(w) for ch in range(c)]
    return qs, ks


class TestWriteback:
    def test_zero_streams_empty_buffer(self):
        q = np.zeros((2, 3, 3), dtype=np.uint8)
        qs, ks = streams(q, q, 100)
        res = onthefly_writeback(qs, ks, AttenReg(2, 3, 3))
        assert not res.out.bits.any() and not res.buffer.region("q").any()

    def test_single_q_spike_at_token_seven(self):
        c, h, w = 2, 3, 3
        q = np.zeros((c, h, w), dtype=np.uint8)
        q[1, 7 // w, 7 % w] = 1
        k = np.ones((c, h, w), dtype=np.uint8)
        qs, ks = streams(q, k, 50)
        out = onthefly_writeback(qs, ks, AttenReg(c, h, w)).out.bits
        expected = np.zeros_like(k)
        expected[:, 2, 1] = 1
        assert out.tolist() == expected.tolist()

    def test_early_k_raises(self):
        q = np.ones((2, 2, 2), dtype=np.uint8)
        qs, ks = streams(q, q, 0)
        ks[0] = ks[0]._replace(time=-1)
        with pytest.raises(OrderingViolation):
            onthefly_writeback(qs, ks, AttenReg(2, 2, 2))

    def test_interleaved_streams_are_fine_when_tokens_complete(self):
        # K for token t may arrive as soon as every Q channel of token t is in
        q = np.array([[[1, 0]], [[0, 0]]], dtype=np.uint8)
        k = np.ones_like(q)
        qs, ks = streams(q, k, 1)
        res = onthefly_writeback(qs, ks, AttenReg(2, 1, 2))
        assert res.out.bits.tolist() == [[[1, 0]], [[1, 0]]]

    def test_write_count_matches_baseline(self):
        q = np.ones((2, 2, 2), dtype=np.uint8)
        qs, ks = streams(q, q, 10)
        res = onthefly_writeback(qs, ks, AttenReg(2, 2, 2))
        assert res.buffer.writes == plain_writeback(qs, ks, (2, 2, 2)).writes == 16
        assert res.attention_reads == 0

    @given(blocks)
    def test_eventdriven_block_equals_oracle(self, b):
        x, spec = build(b)
        run = run_qk_block(spec, x, one=FMT.one)
        assert run.writeback.out == qk_attention_ref(x, spec).out
        assert run.zero_extra_writes
