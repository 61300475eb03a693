"""Window-to-time-to-first-spike re-encoding of average pooling.

Each pooling window's spike count becomes the index of a single active time
slot; the classifier then weights slot ``t`` by ``t / window**2``. Applied to
the FC layer this reproduces FC(avg_pool(x)) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import ModelError, Scores, window_counts
from .spike_core import FixedTensor, SpikeTensor


@dataclass(frozen=True)
class ScaleTable:
    window_sq: int

    def scale(self, slot: int) -> Fraction:
        if not 0 <= slot <= self.window_sq:
            raise IndexError(f"slot {slot} outside [0, {self.window_sq}]")
        return Fraction(slot, self.window_sq)

    @property
    def slots(self) -> int:
        return self.window_sq + 1

    def __getitem__(self, slot: int) -> Fraction:
        return self.scale(slot)


@dataclass(frozen=True)
class TtfsCode:
    """One-hot slot code of shape (window**2 + 1, C, Ho * Wo)."""

    code: np.ndarray
    window: int
    out_hw: tuple[int, int]

    @property
    def slots(self) -> int:
        return self.code.shape[0]

    @property
    def channels(self) -> int:
        return self.code.shape[1]

    def slot_of(self) -> np.ndarray:
        """Active slot per (channel, location); equals the window spike count."""
        return np.argmax(self.code, axis=0)

    def scale_table(self) -> ScaleTable:
        return ScaleTable(self.window * self.window)


def window_spike_count(m: SpikeTensor, channel: int, oy: int, ox: int, window: int) -> int:
    if m.height % window or m.width % window:
        raise ModelError(f"window {window} must divide {m.height}x{m.width}")
    if not (0 <= channel < m.channels and 0 <= oy < m.height // window and 0 <= ox < m.width // window):
        raise IndexError(f"window ({channel}, {oy}, {ox}) outside the pooled grid")
    region = m.bits[channel, oy * window : (oy + 1) * window, ox * window : (ox + 1) * window]
    return int(np.count_nonzero(region))


def w2ttfs_encode(m: SpikeTensor, out_h: int, out_w: int) -> TtfsCode:
    if out_h < 1 or out_w < 1 or m.height % out_h or m.width % out_w:
        raise ModelError(f"output {out_h}x{out_w} must divide input {m.height}x{m.width}")
    window = m.height // out_h
    if m.width // out_w != window:
        raise ModelError("pooling windows must be square")
    counts = window_counts(m, window).reshape(m.channels, out_h * out_w)
    code = np.zeros((window * window + 1, m.channels, out_h * out_w), dtype=np.uint8)
    c_idx, l_idx = np.indices(counts.shape)
    code[counts, c_idx, l_idx] = 1
    return TtfsCode(code, window, (out_h, out_w))


def ttfs_fc_exact(code: TtfsCode, fc_weights: FixedTensor, scales: ScaleTable | None = None) -> Scores:
    """Slot-weighted classifier in exact rational arithmetic."""
    scales = scales or code.scale_table()
    if scales.slots != code.slots:
        raise ModelError(f"scale table has {scales.slots} slots, code has {code.slots}")
    w = fc_weights.wide()
    features = code.channels * code.code.shape[2]
    if w.shape[1] != features:
        raise ModelError(f"fc expects {w.shape[1]} features, code has {features}")
    numer = np.zeros(w.shape[0], dtype=np.int64)
    for slot in range(1, code.slots):
        # scale[slot] == slot / window_sq; slot 0 contributes nothing.
        numer += slot * (w @ code.code[slot].reshape(-1).astype(np.int64))
    return Scores(numer, scales.window_sq)
