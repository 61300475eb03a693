"""Spiking QK attention: a dense oracle and the write-back-embedded variant.

The attention register collects an OR of Q spikes while Q results stream
back from the PE array; K results are masked by that register on their own
way back. No extra pass over the spiking buffer is made.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from .spike_core import FixedTensor, LifParams, SpikeTensor, lif_fire


class MaskAxis(str, Enum):
    TOKEN = "token"      # one bit per spatial position, OR over channels
    CHANNEL = "channel"  # one bit per channel, OR over positions


class OrderingViolation(AssertionError):
    """A K write-back reached the mask before its Q inputs were complete."""


@dataclass(frozen=True)
class QkBlockSpec:
    q_weights: FixedTensor  # [C][C][1][1]
    k_weights: FixedTensor
    q_lif: LifParams
    k_lif: LifParams
    residual: bool = False
    out_lif: LifParams | None = None
    axis: MaskAxis = MaskAxis.TOKEN

    def __post_init__(self):
        object.__setattr__(self, "axis", MaskAxis(self.axis))
        for name, w in (("q", self.q_weights), ("k", self.k_weights)):
            s = w.shape
            if len(s) != 4 or s[2:] != (1, 1) or s[0] != s[1]:
                raise ValueError(f"{name}-projection weights must be [C][C][1][1], got {s}")
        if self.q_weights.shape != self.k_weights.shape:
            raise ValueError("q and k projections must have the same shape")
        if self.residual and self.out_lif is None:
            raise ValueError("residual QK block needs out_lif")

    @property
    def channels(self) -> int:
        return self.q_weights.shape[0]


def _project(x: SpikeTensor, weights: FixedTensor) -> np.ndarray:
    w = weights.wide()[:, :, 0, 0]
    return np.einsum("oi,ihw->ohw", w, x.bits.astype(np.int64))


def attention_mask(q: np.ndarray, axis: MaskAxis) -> np.ndarray:
    """Boolean mask broadcastable against a (C, H, W) map."""
    if MaskAxis(axis) is MaskAxis.TOKEN:
        return q.any(axis=0, keepdims=True)
    return q.any(axis=(1, 2), keepdims=True)


def residual_merge(masked_k: np.ndarray, x: np.ndarray, out_lif: LifParams, one: int) -> np.ndarray:
    sums = (masked_k.astype(np.int64) + x.astype(np.int64)) * one
    return lif_fire(sums, out_lif)[0]


@dataclass(frozen=True)
class QkResult:
    q: SpikeTensor
    k: SpikeTensor
    mask: np.ndarray
    out: SpikeTensor


def qk_attention_ref(x: SpikeTensor, spec: QkBlockSpec) -> QkResult:
    if x.channels != spec.channels:
        raise ValueError(f"QK block expects {spec.channels} channels, got {x.channels}")
    q = lif_fire(_project(x, spec.q_weights), spec.q_lif)[0]
    k = lif_fire(_project(x, spec.k_weights), spec.k_lif)[0]
    mask = attention_mask(q, spec.axis)
    masked = (k & mask).astype(np.uint8)
    if spec.residual:
        masked = residual_merge(masked, x.bits, spec.out_lif, 1 << spec.q_weights.fmt.frac_bits)
    return QkResult(SpikeTensor(q), SpikeTensor(k), mask, SpikeTensor(masked))


class WriteBack(NamedTuple):
    """One output neuron leaving a PE for the spiking buffer."""

    time: int
    channel: int
    y: int
    x: int
    bit: int


@dataclass
class AttenReg:
    """Attention register plus the per-token completion counters used for ordering checks."""

    channels: int
    height: int
    width: int
    axis: MaskAxis = MaskAxis.TOKEN
    bits: np.ndarray = field(init=False)
    q_seen: np.ndarray = field(init=False)

    def __post_init__(self):
        self.axis = MaskAxis(self.axis)
        n = self.height * self.width if self.axis is MaskAxis.TOKEN else self.channels
        self.bits = np.zeros(n, dtype=np.uint8)
        self.q_seen = np.zeros(n, dtype=np.int64)

    def _slot(self, c: int, y: int, x: int) -> int:
        return y * self.width + x if self.axis is MaskAxis.TOKEN else c

    @property
    def _needed(self) -> int:
        return self.channels if self.axis is MaskAxis.TOKEN else self.height * self.width

    def record_q(self, c: int, y: int, x: int, bit: int) -> None:
        s = self._slot(c, y, x)
        self.bits[s] |= bit
        self.q_seen[s] += 1

    def gate(self, c: int, y: int, x: int) -> int:
        s = self._slot(c, y, x)
        if self.q_seen[s] < self._needed:
            raise OrderingViolation(
                f"K write-back at (c={c}, y={y}, x={x}) before Q complete "
                f"({self.q_seen[s]}/{self._needed} Q results seen)"
            )
        return int(self.bits[s])


@dataclass
class SpikingBuffer:
    """Write-back target; counts every word written or read."""

    shape: tuple[int, int, int]
    writes: int = 0
    reads: int = 0
    regions: dict = field(default_factory=dict)

    def region(self, name: str) -> np.ndarray:
        if name not in self.regions:
            self.regions[name] = np.zeros(self.shape, dtype=np.uint8)
        return self.regions[name]

    def write(self, name: str, c: int, y: int, x: int, bit: int) -> None:
        self.region(name)[c, y, x] = bit
        self.writes += 1

    def read(self, name: str, c: int, y: int, x: int) -> int:
        self.reads += 1
        return int(self.region(name)[c, y, x])


@dataclass
class WritebackResult:
    out: SpikeTensor
    buffer: SpikingBuffer
    attention_reads: int


def _merged(q_stream: Iterable[WriteBack], k_stream: Iterable[WriteBack]):
    # Q before K on equal timestamps: the register latches before the mask is sampled.
    tagged = [(wb.time, 0, i, wb) for i, wb in enumerate(q_stream)]
    tagged += [(wb.time, 1, i, wb) for i, wb in enumerate(k_stream)]
    tagged.sort(key=lambda t: t[:3])
    return tagged


def onthefly_writeback(
    q_stream: Iterable[WriteBack],
    k_stream: Iterable[WriteBack],
    reg: AttenReg,
    residual_input: SpikeTensor | None = None,
    out_lif: LifParams | None = None,
    one: int = 16,
) -> WritebackResult:
    """Apply the QK mask while Q and K results are written back.

    Q words go to the buffer unchanged and are OR-ed into ``reg`` on the way;
    K words are gated by ``reg`` before they are stored. If ``residual_input``
    is given, each gated K bit is merged with the block input through
    ``out_lif`` at the same point.
    """
    shape = (reg.channels, reg.height, reg.width)
    buf = SpikingBuffer(shape)
    for _, phase, _, wb in _merged(q_stream, k_stream):
        if phase == 0:
            buf.write("q", wb.channel, wb.y, wb.x, wb.bit)
            reg.record_q(wb.channel, wb.y, wb.x, wb.bit)
            continue
        bit = wb.bit & reg.gate(wb.channel, wb.y, wb.x)
        if residual_input is not None:
            xbit = int(residual_input.bits[wb.channel, wb.y, wb.x])
            bit = int(residual_merge(np.array([bit]), np.array([xbit]), out_lif, one)[0])
        buf.write("out", wb.channel, wb.y, wb.x, bit)
    return WritebackResult(SpikeTensor(buf.region("out").copy()), buf, attention_reads=buf.reads)


def plain_writeback(q_stream: Iterable[WriteBack], k_stream: Iterable[WriteBack], shape) -> SpikingBuffer:
    """Baseline flow with no attention: both projections stored as-is."""
    buf = SpikingBuffer(tuple(shape))
    for _, phase, _, wb in _merged(q_stream, k_stream):
        buf.write("q" if phase == 0 else "out", wb.channel, wb.y, wb.x, wb.bit)
    return buf
