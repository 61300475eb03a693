from dataclasses import replace
import numpy as np
import pytest

from neuralsim.compare import classifier_agreement, compare_runs
from neuralsim.epa import EpaConfig
from neuralsim.generate import toy_qkfresnet
from neuralsim.graph import LayerKind, Scores
from neuralsim.qkformer import MaskAxis
from neuralsim.reference import run_reference
from neuralsim.simulator import run_eventdriven
from neuralsim.spike_core import SpikeTensor


@pytest.fixture(scope="module")
def model():
    return toy_qkfresnet(1)


class TestEndToEnd:
    @pytest.mark.parametrize("density", [0.0, 0.05, 0.3, 1.0])
    def test_compare_identical(self, model, density):
        x = SpikeTensor.random(model.input_shape, density, np.random.default_rng(int(density * 100)))
        cmp = compare_runs(run_reference(model, x), run_eventdriven(model, x))
        assert cmp.verdict == "identical", cmp.mismatches
        assert all(cmp.checks.values())

    def test_channel_mask_and_small_array(self):
        model = toy_qkfresnet(4, axis=MaskAxis.CHANNEL)
        x = SpikeTensor.random(model.input_shape, 0.3, np.random.default_rng(0))
        cfg = EpaConfig(rows=2, cols=3, w_fifo_depth=1, s_fifo_depth=1, sdu_fifo_depth=4, wmu_latency=3)
        cmp = compare_runs(run_reference(model, x), run_eventdriven(model, x, cfg))
        assert cmp.verdict == "identical", cmp.mismatches

    def test_zero_input_does_no_compute(self, model):
        ed = run_eventdriven(model, SpikeTensor.zeros(*model.input_shape))
        assert ed.stats.compute_cycles == 0 and ed.synops == 0 and ed.total_spikes == 0

    def test_pre_lif_sums_are_exposed(self, model):
        x = SpikeTensor.random(model.input_shape, 0.3, np.random.default_rng(9))
        ref, ed = run_reference(model, x), run_eventdriven(model, x)
        skip = next(i for i, l in enumerate(model.layers) if l.kind is LayerKind.RESIDUAL_ADD)
        assert np.array_equal(ed.layers[skip].output, ref.trace[skip].output)

    def test_input_shape_checked(self, model):
        with pytest.raises(ValueError):
            run_eventdriven(model, SpikeTensor.zeros(1, 2, 2))


class TestDivergenceDetection:
    def test_flipped_spike_is_reported(self, model):
        x = SpikeTensor.random(model.input_shape, 0.3, np.random.default_rng(3))
        ref, ed = run_reference(model, x), run_eventdriven(model, x)
        bits = ed.layers[1].output.bits.copy()
        bits[0, 0, 0] ^= 1
        ed.layers[1] = replace(ed.layers[1], output=SpikeTensor(bits))
        cmp = compare_runs(ref, ed)
        assert cmp.verdict == "divergent"
        assert any("spikes differ" in m for m in cmp.mismatches)

    def test_failed_check_is_reported(self, model):
        x = SpikeTensor.random(model.input_shape, 0.3, np.random.default_rng(3))
        ref, ed = run_reference(model, x), run_eventdriven(model, x)
        ed.checks["fifo_no_loss"] = False
        assert compare_runs(ref, ed).verdict == "divergent"


class TestClassifierAgreement:
    def test_exact(self):
        s = Scores(np.array([3, 1]), 4)
        assert classifier_agreement(s, Scores(np.array([6, 2]), 8), 0) == ("exact", [])

    def test_within_bound(self):
        exact = Scores(np.array([33, 10]), 16)  # 2.0625, 0.625
        got = Scores(np.array([2, 0]))
        status, problems = classifier_agreement(exact, got, 1)
        assert status == "within-bound" and not problems

    def test_outside_bound(self):
        status, problems = classifier_agreement(Scores(np.array([64, 0]), 16), Scores(np.array([0, 0])), 1)
        assert status == "divergent" and problems

    def test_argmax_must_agree_beyond_margin(self):
        exact = Scores(np.array([80, 0]), 16)  # 5 and 0: margin 5
        got = Scores(np.array([2, 3]))  # each class off by 3, argmax flipped
        assert all(abs(g - e) <= 3 for g, e in zip(got.as_fractions(), exact.as_fractions()))
        status, problems = classifier_agreement(exact, got, 3)
        assert status == "divergent" and "argmax" in problems[0]
        assert classifier_agreement(exact, got, 5)[0] == "within-bound"  # margin no longer exceeds bound
