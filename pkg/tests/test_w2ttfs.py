from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuralsim.graph import ModelError, Scores, avg_pool_ref, fc_ref
from neuralsim.spike_core import FixedPointFormat, FixedTensor, SpikeTensor
from neuralsim.w2ttfs import ScaleTable, TtfsCode, ttfs_fc_exact, w2ttfs_encode, window_spike_count

from oracles import naive_pool_counts

FMT = FixedPointFormat(4)

pooled_maps = st.tuples(
    st.integers(1, 3),
    st.sampled_from([1, 2, 4]),
    st.integers(1, 3),
    st.integers(1, 3),
    st.floats(0, 1),
    st.integers(0, 2**31 - 1),
)


def build(spec):
    c, win, ho, wo, density, seed = spec
    rng = np.random.default_rng(seed)
    return SpikeTensor.random((c, ho * win, wo * win), density, rng), win, rng


class TestWindowCount:
    def test_empty_full_and_three(self):
        bits = np.zeros((1, 4, 4), dtype=np.uint8)
        assert window_spike_count(SpikeTensor(bits), 0, 0, 0, 4) == 0
        bits[0, 1, 1] = bits[0, 2, 3] = bits[0, 3, 0] = 1
        assert window_spike_count(SpikeTensor(bits), 0, 0, 0, 4) == 3
        assert window_spike_count(SpikeTensor(np.ones((1, 4, 4), dtype=np.uint8)), 0, 0, 0, 4) == 16

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            window_spike_count(SpikeTensor.zeros(1, 4, 4), 0, 1, 0, 4)

    def test_matches_popcount(self, rng):
        x = SpikeTensor.random((2, 8, 8), 0.5, rng)
        ref = naive_pool_counts(x.bits, 2)
        for c in range(2):
            for oy in range(4):
                for ox in range(4):
                    assert window_spike_count(x, c, oy, ox, 2) == ref[c, oy, ox]


class TestEncode:
    def test_zero_map_in_slot_zero(self):
        code = w2ttfs_encode(SpikeTensor.zeros(2, 4, 4), 2, 2)
        assert code.slots == 5
        assert code.code[0].all() and not code.code[1:].any()

    def test_full_window_in_top_slot(self):
        code = w2ttfs_encode(SpikeTensor(np.ones((1, 4, 4), dtype=np.uint8)), 1, 1)
        assert code.code[16, 0, 0] == 1 and code.code.sum() == 1

    def test_one_window_with_k_spikes(self):
        bits = np.zeros((1, 4, 8), dtype=np.uint8)
        bits[0, :2, 4:7] = 1  # six spikes in window (0, 1)
        code = w2ttfs_encode(SpikeTensor(bits), 1, 2)
        assert code.slot_of().tolist() == [[0, 6]]

    def test_rejects_non_square_or_non_dividing(self):
        with pytest.raises(ModelError):
            w2ttfs_encode(SpikeTensor.zeros(1, 4, 8), 2, 2)
        with pytest.raises(ModelError):
            w2ttfs_encode(SpikeTensor.zeros(1, 5, 5), 2, 2)

    @given(pooled_maps)
    def test_one_hot(self, spec):
        x, win, _ = build(spec)
        code = w2ttfs_encode(x, x.height // win, x.width // win)
        assert (code.code.sum(axis=0) == 1).all()

    @given(pooled_maps, st.data())
    def test_adding_a_spike_moves_one_slot(self, spec, data):
        x, win, _ = build(spec)
        zeros = np.argwhere(x.bits == 0)
        if not len(zeros):
            return
        c, y, xx = zeros[data.draw(st.integers(0, len(zeros) - 1))]
        bits = x.bits.copy()
        bits[c, y, xx] = 1
        before = w2ttfs_encode(x, x.height // win, x.width // win).slot_of()
        after = w2ttfs_encode(SpikeTensor(bits), x.height // win, x.width // win).slot_of()
        loc = (y // win) * (x.width // win) + xx // win
        diff = after.astype(int) - before.astype(int)
        assert diff[c, loc] == 1 and np.count_nonzero(diff) == 1


class TestExactScores:
    def test_slot_zero_gives_zero(self, rng):
        code = w2ttfs_encode(SpikeTensor.zeros(2, 4, 4), 1, 1)
        scores = ttfs_fc_exact(code, FixedTensor(rng.integers(-128, 128, (3, 2)), FMT))
        assert all(v == 0 for v in scores.as_fractions())

    def test_slot_three_scales_column_by_three_sixteenths(self, rng):
        w = FixedTensor(rng.integers(-128, 128, (4, 2)), FMT)
        code = np.zeros((17, 2, 1), dtype=np.uint8)
        code[0, 0, 0] = 1
        code[3, 1, 0] = 1
        scores = ttfs_fc_exact(TtfsCode(code, 4, (1, 1)), w)
        assert scores.as_fractions() == [Fraction(3, 16) * int(v) for v in w.values[:, 1]]

    def test_scale_table(self):
        t = ScaleTable(16)
        assert t.slots == 17 and t[3] == Fraction(3, 16) and t[0] == 0
        with pytest.raises(IndexError):
            t.scale(17)

    def test_rejects_mismatched_table(self, rng):
        code = w2ttfs_encode(SpikeTensor.zeros(1, 4, 4), 2, 2)
        with pytest.raises(ModelError):
            ttfs_fc_exact(code, FixedTensor(np.zeros((2, 4)), FMT), ScaleTable(16))

    @given(pooled_maps, st.integers(1, 10))
    def test_lossless_against_avgpool_fc(self, spec, classes):
        x, win, rng = build(spec)
        ho, wo = x.height // win, x.width // win
        w = FixedTensor(rng.integers(-128, 128, (classes, x.channels * ho * wo)), FMT)
        got = ttfs_fc_exact(w2ttfs_encode(x, ho, wo), w)
        want = fc_ref(avg_pool_ref(x, win), w)
        assert got == want
        assert got.argmax() == want.argmax()
        assert isinstance(got, Scores)
