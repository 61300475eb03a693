"""W2TTFS-based FC core: a window spike counter feeding a multiplier-free classifier.

The FCU never forms ``slot / window**2``. Each weight is shifted right by
``log2(window**2)`` once (floor on two's complement) and that unit is added
``vld_cnt`` times. Functionally this is ``vld_cnt * (w >> shift)``; cycle
accounting still charges one add per repetition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .graph import ModelError, Scores, window_counts
from .spike_core import ACC_MAX, ACC_MIN, FixedTensor, LifParams, SpikeTensor


class HardwareInfeasibleWarning(UserWarning):
    """Window area is not a power of two; the shift path cannot be used."""


class FilterTuple(NamedTuple):
    channel: int
    location: int
    vld_cnt: int


def ttfs_filter(m: SpikeTensor, window: int) -> list[FilterTuple]:
    """One tuple per (channel, pooled location), channel-major."""
    counts = window_counts(m, window).reshape(m.channels, -1)
    return [FilterTuple(c, l, int(v)) for c in range(counts.shape[0]) for l, v in enumerate(counts[c])]


def _shift_for(window_sq: int) -> int | None:
    if window_sq & (window_sq - 1):
        return None
    return window_sq.bit_length() - 1


@dataclass
class FcuState:
    classes: int
    locations: int
    window_sq: int
    exact: bool = False
    acc: np.ndarray = field(init=False)
    shifts: int = 0
    adds: int = 0
    compares: int = 0
    multiplies: int = 0
    saturations: int = 0
    add_cycles: int = 0
    tuples: int = 0
    vld_total: int = 0

    def __post_init__(self):
        self.acc = np.zeros(self.classes, dtype=np.int64)
        if not self.exact and _shift_for(self.window_sq) is None:
            warnings.warn(
                f"window area {self.window_sq} is not a power of two; using exact rational scaling",
                HardwareInfeasibleWarning,
                stacklevel=3,
            )
            self.exact = True

    @property
    def shift(self) -> int | None:
        return None if self.exact else _shift_for(self.window_sq)

    def scores(self) -> Scores:
        return Scores(self.acc.copy(), self.window_sq if self.exact else 1)

    def truncation_bound(self) -> int:
        """Largest possible |score - exact| in raw LSBs, per class."""
        return 0 if self.exact else self.vld_total


def new_fcu(classes: int, locations: int, window: int, exact: bool = False) -> FcuState:
    return FcuState(classes, locations, window * window, exact=exact)


def fcu_accumulate(state: FcuState, tup: FilterTuple, fc_weights: FixedTensor) -> FcuState:
    state.tuples += 1
    if tup.vld_cnt == 0:
        return state
    if not 0 <= tup.vld_cnt <= state.window_sq:
        raise ValueError(f"vld_cnt {tup.vld_cnt} outside [0, {state.window_sq}]")
    f = tup.channel * state.locations + tup.location
    column = fc_weights.wide()[:, f]
    if state.exact:
        # fallback: numerator of vld_cnt * w / window_sq; denominator kept by Scores
        unit = column
    else:
        unit = column >> state.shift
        state.shifts += state.classes
    acc = state.acc + tup.vld_cnt * unit
    clipped = np.clip(acc, ACC_MIN, ACC_MAX)
    state.saturations += int(np.count_nonzero(clipped != acc))
    state.acc = clipped
    state.adds += tup.vld_cnt * state.classes
    state.add_cycles += tup.vld_cnt
    state.vld_total += tup.vld_cnt
    return state


def classify(state: FcuState) -> int:
    """Argmax; ties go to the lowest class index."""
    state.compares += max(state.classes - 1, 0)
    return int(np.argmax(state.acc))


@dataclass
class WtfcRun:
    state: FcuState
    scores: Scores
    prediction: int
    filter_cycles: int
    fcu_cycles: int
    synops: int

    @property
    def cycles(self) -> int:
        return self.filter_cycles + self.fcu_cycles


def run_wtfc(m: SpikeTensor, window: int, fc_weights: FixedTensor, exact: bool = False) -> WtfcRun:
    """Filter ``m`` and classify it with the FCU.

    ``window=1`` turns the core into a plain spike-input FC (shift 0, exact).
    """
    ho, wo = m.height // window, m.width // window
    classes, features = fc_weights.shape
    if features != m.channels * ho * wo:
        raise ModelError(f"fc expects {features} features, pooled map has {m.channels * ho * wo}")
    state = new_fcu(classes, ho * wo, window, exact=exact)
    for tup in ttfs_filter(m, window):
        fcu_accumulate(state, tup, fc_weights)
    pred = classify(state)
    spikes = int(np.count_nonzero(m.bits))
    return WtfcRun(state, state.scores(), pred, spikes, state.add_cycles, state.adds)


def exact_scores(tuples: Iterable[FilterTuple], fc_weights: FixedTensor, locations: int, window_sq: int) -> Scores:
    """Unshifted reference over the same tuple stream."""
    w = fc_weights.wide()
    numer = np.zeros(w.shape[0], dtype=np.int64)
    for t in tuples:
        numer += t.vld_cnt * w[:, t.channel * locations + t.location]
    return Scores(numer, window_sq)


@dataclass
class PoolRun:
    output: SpikeTensor
    filter_cycles: int


def spiking_pool(m: SpikeTensor, window: int, lif: LifParams, one: int) -> PoolRun:
    """Average pooling followed by LIF, via the window counter and a comparator.

    Fires where ``vld_cnt / window**2 >= threshold / one``, compared as integers.
    """
    counts = window_counts(m, window)
    bits = (counts * one >= lif.threshold * window * window).astype(np.uint8)
    return PoolRun(SpikeTensor(bits), int(np.count_nonzero(m.bits)))
