import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuralsim.spike_core import (
    ACC_MAX,
    ACC_MIN,
    FixedPointFormat,
    FixedTensor,
    LifParams,
    LifState,
    ResetMode,
    SpikeTensor,
    lif_fire,
    lif_step,
    quantize,
    saturate_acc,
    total_spikes,
)

FMT = FixedPointFormat(4)


class TestQuantize:
    def test_zero(self):
        assert quantize(0.0, FMT) == 0

    def test_three_sixteenths(self):
        raw = quantize(3 / 16, FMT)
        assert raw == 3
        assert FMT.decode(raw) == 0.1875

    def test_saturates_high_and_low(self):
        assert quantize(100.0, FMT) == 127
        assert quantize(-100.0, FMT) == -128
        assert quantize(float("inf"), FMT) == 127
        assert quantize(float("-inf"), FMT) == -128

    def test_half_rounds_away_from_zero(self):
        assert quantize(0.5 / 16, FMT) == 1
        assert quantize(-0.5 / 16, FMT) == -1
        assert quantize(0.49 / 16, FMT) == 0

    @given(st.integers(-128, 127), st.integers(0, 7))
    def test_decode_round_trip(self, v, frac):
        fmt = FixedPointFormat(frac)
        assert quantize(float(fmt.decode(v)), fmt) == v

    @given(st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert quantize(lo, FMT) <= quantize(hi, FMT)

    def test_fixed_tensor_from_real(self):
        t = FixedTensor.from_real([0.0, 3 / 16, 100.0, -1.0], FMT)
        assert t.values.tolist() == [0, 3, 127, -16]
        assert not t.values.flags.writeable

    def test_fixed_tensor_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            FixedTensor(np.array([200]), FMT)


class TestLif:
    def test_exact_threshold_fires_and_hard_resets(self):
        p = LifParams(threshold=16)
        state, spike = lif_step(LifState(), p, 16)
        assert spike == 1 and state.membrane == 0

    def test_one_lsb_below_is_silent(self):
        state, spike = lif_step(LifState(), LifParams(threshold=16), 15)
        assert spike == 0 and state.membrane == 15

    def test_decay_halves_membrane(self):
        state, spike = lif_step(LifState(membrane=8), LifParams(threshold=16, tau=0.5), 0)
        assert state.membrane == 4 and spike == 0

    def test_decay_floors_negative_membrane(self):
        # arithmetic shift: -3 >> 1 == -2
        state, _ = lif_step(LifState(membrane=-3), LifParams(threshold=16, tau=0.5), 0)
        assert state.membrane == -2

    def test_subtract_reset(self):
        state, spike = lif_step(LifState(), LifParams(threshold=16, reset_mode=ResetMode.SUBTRACT), 40)
        assert spike == 1 and state.membrane == 24

    def test_saturation_counts_overflow(self):
        state, spike = lif_step(LifState(), LifParams(threshold=16), ACC_MAX + 10)
        assert state.overflows == 1 and spike == 1
        assert saturate_acc(ACC_MIN - 1) == (ACC_MIN, True)

    @pytest.mark.parametrize("tau", [0.3, 0.0, 1.5])
    def test_rejects_non_shift_tau(self, tau):
        with pytest.raises(ValueError):
            LifParams(threshold=16, tau=tau)

    def test_rejects_nonpositive_threshold(self):
        with pytest.raises(ValueError):
            LifParams(threshold=0)

    @given(st.integers(-(2**15), 2**15 - 1), st.integers(1, 2**15 - 1))
    def test_single_step_is_threshold_compare(self, s, thr):
        _, spike = lif_step(LifState(), LifParams(threshold=thr, tau=0.5), s)
        assert spike == int(s >= thr)

    @given(st.lists(st.integers(-(2**25), 2**25), min_size=1, max_size=30), st.integers(1, 2000))
    def test_vectorised_matches_scalar(self, sums, thr):
        p = LifParams(threshold=thr)
        spikes, overflows = lif_fire(np.array(sums), p)
        scalar = [lif_step(LifState(), p, s) for s in sums]
        assert spikes.tolist() == [sp for _, sp in scalar]
        assert overflows == sum(state.overflows for state, _ in scalar)


class TestSpikeTensor:
    def test_counts(self):
        assert total_spikes(SpikeTensor.zeros(3, 4, 4)) == 0
        assert total_spikes(SpikeTensor(np.ones((3, 4, 4), dtype=np.uint8))) == 48

    def test_matches_element_scan(self, rng):
        t = SpikeTensor.random((3, 7, 5), 0.4, rng)
        n = 0
        for c in range(3):
            for y in range(7):
                for x in range(5):
                    n += int(t.bits[c, y, x])
        assert total_spikes(t) == n

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1), st.integers(1, 3))
    def test_additive_over_channel_slices(self, c, h, w, seed, cut):
        t = SpikeTensor.random((c + cut, h, w), 0.5, np.random.default_rng(seed))
        a, b = SpikeTensor(t.bits[:cut]), SpikeTensor(t.bits[cut:])
        assert total_spikes(t) == total_spikes(a) + total_spikes(b)

    @given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 7), st.integers(0, 2**31 - 1))
    def test_packed_round_trip(self, c, h, w, seed):
        t = SpikeTensor.random((c, h, w), 0.5, np.random.default_rng(seed))
        data = t.packed()
        assert len(data) == (c * h * w + 7) // 8
        assert SpikeTensor.from_packed(data, t.shape) == t

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            SpikeTensor(np.full((1, 2, 2), 2))

    def test_packed_length_checked(self):
        with pytest.raises(ValueError):
            SpikeTensor.from_packed(b"\x00", (1, 4, 4))

    def test_immutable(self):
        t = SpikeTensor.zeros(1, 2, 2)
        with pytest.raises(ValueError):
            t.bits[0, 0, 0] = 1
