"""Pipelined sparse detection: spike index -> center position -> SDU event FIFOs.

Every input spike is routed to the output neurons whose receptive field
contains it. The SDU grid carries a virtual border so that anchors with
negative (or past-the-edge) coordinates can be mapped without branching;
virtual units take writes but are never read out.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .graph import conv_out_size
from .spike_core import SpikeTensor

DEFAULT_SDU_DEPTH = 64


class SpikeEvent(NamedTuple):
    channel: int
    y: int
    x: int
    seq: int


class CenterPosition(NamedTuple):
    oy: int
    ox: int


class EventFifoEntry(NamedTuple):
    """``residual`` entries carry unit weight to output channel ``tap[0]`` only."""

    seq: int
    tap: tuple[int, int, int]
    residual: bool = False


@dataclass(frozen=True)
class ConvGeometry:
    in_h: int
    in_w: int
    kernel: int
    stride: int = 1
    padding: int = 0

    @property
    def out_h(self) -> int:
        return conv_out_size(self.in_h, self.kernel, self.stride, self.padding)

    @property
    def out_w(self) -> int:
        return conv_out_size(self.in_w, self.kernel, self.stride, self.padding)

    @property
    def border(self) -> int:
        return max(self.kernel - 1 - self.padding, 0)


def index_generation(m: SpikeTensor) -> list[SpikeEvent]:
    """All spikes of ``m`` in channel-major raster order."""
    cs, ys, xs = np.nonzero(m.bits)  # C-order == channel-major raster
    return [SpikeEvent(int(c), int(y), int(x), i) for i, (c, y, x) in enumerate(zip(cs, ys, xs))]


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def cp_generation(e: SpikeEvent, stride: int, padding: int, kernel: int) -> CenterPosition:
    """Anchor of the event's footprint: the lowest output coordinate it reaches."""
    return CenterPosition(
        _ceil_div(e.y + padding - kernel + 1, stride),
        _ceil_div(e.x + padding - kernel + 1, stride),
    )


def diffusion_region(e: SpikeEvent, cp: CenterPosition, stride: int, padding: int, kernel: int):
    """Yield ``(oy, ox, ki, kj)`` for every output reading ``e``, unclipped.

    The anchor broadcasts over a ``kernel x kernel`` neighbourhood; with stride
    > 1 only the units whose tap lands inside the kernel are kept.
    """
    for dy in range(kernel):
        oy = cp.oy + dy
        ki = e.y + padding - oy * stride
        if ki < 0:
            break
        if ki >= kernel:
            continue
        for dx in range(kernel):
            ox = cp.ox + dx
            kj = e.x + padding - ox * stride
            if kj < 0:
                break
            if kj >= kernel:
                continue
            yield oy, ox, ki, kj


@dataclass
class SduGrid:
    """Output-sized SDU array plus a virtual border of width ``border``."""

    out_h: int
    out_w: int
    border: int
    capacity: int = DEFAULT_SDU_DEPTH
    units: dict = field(default_factory=dict)
    backpressure_stalls: int = 0
    writes: int = 0

    @classmethod
    def for_geometry(cls, geom: ConvGeometry, capacity: int = DEFAULT_SDU_DEPTH) -> SduGrid:
        return cls(geom.out_h, geom.out_w, geom.border, capacity)

    def is_real(self, oy: int, ox: int) -> bool:
        return 0 <= oy < self.out_h and 0 <= ox < self.out_w

    def in_grid(self, oy: int, ox: int) -> bool:
        b = self.border
        return -b <= oy < self.out_h + b and -b <= ox < self.out_w + b

    def push(self, oy: int, ox: int, entry: EventFifoEntry) -> bool:
        """Append an entry; returns True if the unit was already at capacity.

        A full unit stalls the producer for a cycle but the entry is kept.
        """
        if not self.in_grid(oy, ox):
            raise IndexError(f"SDU ({oy}, {ox}) outside grid with border {self.border}")
        fifo = self.units.setdefault((oy, ox), deque())
        full = len(fifo) >= self.capacity
        if full:
            self.backpressure_stalls += 1
        fifo.append(entry)
        self.writes += 1
        return full

    def entries(self, oy: int, ox: int) -> list[EventFifoEntry]:
        return list(self.units.get((oy, ox), ()))

    def real_entry_count(self) -> int:
        return sum(len(f) for (oy, ox), f in self.units.items() if self.is_real(oy, ox))

    def virtual_entry_count(self) -> int:
        return sum(len(f) for (oy, ox), f in self.units.items() if not self.is_real(oy, ox))

    def snapshot(self) -> dict:
        return {k: tuple(v) for k, v in sorted(self.units.items()) if v}


def read_window(grid: SduGrid, oy: int, ox: int) -> tuple[int, list[EventFifoEntry]]:
    if not grid.is_real(oy, ox):
        raise IndexError(f"SDU ({oy}, {ox}) is virtual or outside the grid; not readable")
    entries = grid.entries(oy, ox)
    return len(entries), entries


def unclipped_incidences(m: SpikeTensor, geom: ConvGeometry) -> int:
    """Sum over spikes of the footprint size before any border clipping."""

    def taps(size: int) -> np.ndarray:
        pos = np.arange(size)[:, None] + geom.padding - np.arange(geom.kernel)[None, :]
        return (pos % geom.stride == 0).sum(axis=1)

    per_pixel = np.outer(taps(m.height), taps(m.width))
    return int((m.bits.astype(np.int64) * per_pixel[None]).sum())


def _map_event(grid: SduGrid, e: SpikeEvent, cp: CenterPosition, stride: int, padding: int, kernel: int) -> int:
    stalls = 0
    for oy, ox, ki, kj in diffusion_region(e, cp, stride, padding, kernel):
        stalls += grid.push(oy, ox, EventFifoEntry(e.seq, (e.channel, ki, kj)))
    return stalls


def cp_map_diffuse(events: Iterable[SpikeEvent], grid: SduGrid, stride: int, padding: int, kernel: int) -> SduGrid:
    for e in events:
        _map_event(grid, e, cp_generation(e, stride, padding, kernel), stride, padding, kernel)
    return grid


def inject_residual(grid: SduGrid, source: SpikeTensor, first_seq: int) -> int:
    """Route a residual source map straight to the SDUs at its own coordinates."""
    n = 0
    for e in index_generation(source):
        grid.push(e.y, e.x, EventFifoEntry(first_seq + e.seq, (e.channel, 0, 0), residual=True))
        n += 1
    return n


@dataclass
class SdaResult:
    grid: SduGrid
    events: int
    cycles: int


def run_sequential(m: SpikeTensor, geom: ConvGeometry, capacity: int = DEFAULT_SDU_DEPTH) -> SduGrid:
    """The three stages as separate passes over the whole map."""
    events = index_generation(m)
    cps = [cp_generation(e, geom.stride, geom.padding, geom.kernel) for e in events]
    grid = SduGrid.for_geometry(geom, capacity)
    for e, cp in zip(events, cps):
        _map_event(grid, e, cp, geom.stride, geom.padding, geom.kernel)
    return grid


def run_pipelined(
    m: SpikeTensor, geom: ConvGeometry, capacity: int = DEFAULT_SDU_DEPTH, queue_depth: int = 2
) -> SdaResult:
    """IG, CP-gen and CP-map as a clocked 3-stage pipeline with bounded queues.

    One event per stage per cycle. A CP-map write into a full SDU costs the
    map stage one extra cycle; that stall propagates upstream through the
    bounded queues.
    """
    if queue_depth < 1:
        raise ValueError("queue_depth must be >= 1")
    pending = deque(index_generation(m))
    n = len(pending)
    ig_q: deque = deque()
    cp_q: deque = deque()
    grid = SduGrid.for_geometry(geom, capacity)
    map_busy = 0
    cycle = 0
    done = 0
    while done < n:
        # Stages evaluated back to front so a slot freed this cycle is reused next cycle.
        if map_busy:
            map_busy -= 1
        elif cp_q:
            e, cp = cp_q.popleft()
            map_busy = _map_event(grid, e, cp, geom.stride, geom.padding, geom.kernel)
            done += 1
        if ig_q and len(cp_q) < queue_depth:
            e = ig_q.popleft()
            cp_q.append((e, cp_generation(e, geom.stride, geom.padding, geom.kernel)))
        if pending and len(ig_q) < queue_depth:
            ig_q.append(pending.popleft())
        cycle += 1
    cycle += map_busy
    return SdaResult(grid, n, cycle)
