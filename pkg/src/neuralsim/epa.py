"""Cycle-approximate model of the elastic PE array.

Control is data-driven: a PE fires as soon as its spike window and the
weight set for its current output channel are both at hand. Computation
inside a PE is event-driven: one event (one weight accumulation) per cycle,
plus a fixed per-window overhead, and nothing at all for silent neurons.

Mapping is output-stationary. Output location ``l`` belongs to PE
``l % P`` in pass ``l // P``; within a pass the PE walks the output channels
in order, reusing the same window with a new weight set each time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Sequence

import numpy as np

from .graph import LayerSpec
from .pipesda import (
    ConvGeometry,
    EventFifoEntry,
    inject_residual,
    read_window,
    run_pipelined,
    unclipped_incidences,
)
from .qkformer import WriteBack
from .spike_core import LifParams, LifState, SpikeTensor, lif_step


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpaConfig:
    rows: int = 8
    cols: int = 8
    w_fifo_depth: int = 4
    s_fifo_depth: int = 8
    sdu_fifo_depth: int = 64
    overhead_cycles: int = 2
    clock_hz: float = 2.0e8
    wmu_latency: int = 0

    def __post_init__(self):
        for f in ("rows", "cols", "w_fifo_depth", "s_fifo_depth", "sdu_fifo_depth"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.overhead_cycles < 0 or self.wmu_latency < 0:
            raise ValueError("overhead_cycles and wmu_latency must be >= 0")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be positive")

    @property
    def pe_count(self) -> int:
        return self.rows * self.cols


class ElasticFifo:
    """Bounded queue. A push into a full FIFO is refused, never dropped."""

    def __init__(self, capacity: int, kind: str):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.kind = kind
        self._q: deque = deque()
        self.pushes = 0
        self.pops = 0

    @property
    def occupancy(self) -> int:
        return len(self._q)

    def full(self) -> bool:
        return len(self._q) >= self.capacity

    def push(self, item) -> bool:
        if self.full():
            return False
        self._q.append(item)
        self.pushes += 1
        return True

    def peek(self):
        return self._q[0] if self._q else None

    def pop(self):
        if not self._q:
            raise SimulationError(f"pop from empty {self.kind} FIFO")
        self.pops += 1
        return self._q.popleft()

    def __len__(self):
        return len(self._q)

    def balanced(self) -> bool:
        return self.pushes == self.pops + self.occupancy


class Dispatch(str, Enum):
    FIRE = "fire"
    STALL_W = "w_fifo_empty"
    STALL_S = "s_fifo_empty"
    STALL_BOTH = "both_empty"


@dataclass
class PeState:
    fifo: list[EventFifoEntry] = field(default_factory=list)
    vld_cnt: int = 0
    lif: LifState = field(default_factory=LifState)
    acc: int = 0
    assigned: tuple[int, int, int] | None = None  # (oc, oy, ox)
    busy: int = 0

    def load(self, entries: list[EventFifoEntry], oc: int) -> None:
        self.fifo = list(entries)
        self.vld_cnt = sum(1 for e in entries if not e.residual or e.tap[0] == oc)
        self.acc = 0


def dispatch(pe: PeState, weights_ready: bool, window_ready: bool, overhead: int = 2) -> Dispatch:
    if weights_ready and window_ready:
        pe.busy = pe.vld_cnt + overhead
        return Dispatch.FIRE
    if not weights_ready and not window_ready:
        return Dispatch.STALL_BOTH
    return Dispatch.STALL_S if weights_ready else Dispatch.STALL_W


def pe_consume_event(pe: PeState, entry: EventFifoEntry, weightbank: np.ndarray, one: int = 16) -> PeState:
    """Accumulate one event for the PE's assigned output channel.

    ``weightbank`` is the raw [oc][ic][k][k] kernel. Residual entries add one
    unit when they target the assigned channel and nothing otherwise.
    """
    if pe.assigned is None:
        raise SimulationError("PE has no assigned neuron")
    oc = pe.assigned[0]
    if entry.residual:
        if entry.tap[0] == oc:
            pe.acc += one
        return pe
    ic, ki, kj = entry.tap
    try:
        pe.acc += int(weightbank[oc, ic, ki, kj])
    except IndexError as exc:
        raise SimulationError(f"no weight for tap {entry.tap} of channel {oc}") from exc
    return pe


@dataclass
class CycleStats:
    pe_count: int = 0
    sda_cycles: int = 0
    epa_cycles: int = 0
    wtfc_cycles: int = 0
    compute_cycles: int = 0
    stall_w_fifo: int = 0
    stall_s_fifo: int = 0
    stall_both: int = 0
    idle_pe_cycles: int = 0
    backpressure: int = 0
    events_consumed: int = 0
    windows_dispatched: int = 0
    spikes_emitted: int = 0
    overflows: int = 0

    @property
    def total_cycles(self) -> int:
        return self.sda_cycles + self.epa_cycles + self.wtfc_cycles

    @property
    def stall_cycles(self) -> int:
        return self.stall_w_fifo + self.stall_s_fifo + self.stall_both

    def __add__(self, other: CycleStats) -> CycleStats:
        if self.pe_count and other.pe_count and self.pe_count != other.pe_count:
            raise ValueError("cannot add stats from differently sized PE arrays")
        out = CycleStats(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})
        out.pe_count = self.pe_count or other.pe_count
        return out

    def pe_cycle_balance(self) -> bool:
        """Every PE-cycle of the EPA phase is compute, stall or idle."""
        return self.pe_count * self.epa_cycles == self.compute_cycles + self.stall_cycles + self.idle_pe_cycles

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total_cycles"] = self.total_cycles
        return d


def layer_latency(stats: CycleStats, cfg: EpaConfig) -> float:
    return stats.total_cycles / cfg.clock_hz


@dataclass
class _Window:
    loc: int
    oy: int
    ox: int
    entries: list[EventFifoEntry]
    vld: np.ndarray   # per output channel
    sums: np.ndarray  # per output channel, exact


def _build_window(loc, oy, ox, entries, weights: np.ndarray, one: int) -> _Window:
    oc = weights.shape[0]
    conv = [e.tap for e in entries if not e.residual]
    vld = np.full(oc, len(conv), dtype=np.int64)
    if conv:
        ic, ki, kj = (np.fromiter((t[d] for t in conv), dtype=np.int64, count=len(conv)) for d in range(3))
        sums = weights[:, ic, ki, kj].sum(axis=1)
    else:
        sums = np.zeros(oc, dtype=np.int64)
    for e in entries:
        if e.residual:
            vld[e.tap[0]] += 1
            sums[e.tap[0]] += one
    return _Window(loc, oy, ox, entries, vld, sums)


@dataclass
class LayerRun:
    output: SpikeTensor
    sums: np.ndarray
    stats: CycleStats
    writebacks: list[WriteBack]
    fifo_balanced: bool
    sdu_real_entries: int
    sdu_virtual_entries: int
    unclipped_incidences: int
    residual_events: int = 0


@dataclass
class _Pe:
    tasks: list  # (k, loc, oc) in stream order
    pos: int = 0
    busy_until: int = 0
    loaded: int = -1  # loc of the window held in the event FIFO

    def next_task(self):
        return self.tasks[self.pos] if self.pos < len(self.tasks) else None


def _simulate(windows: dict[int, _Window], n_locs: int, out_w: int, oc_count: int, lif: LifParams, cfg: EpaConfig):
    P = cfg.pe_count
    stats = CycleStats(pe_count=P)
    needed = sorted({loc // P for loc in windows})
    base = {q: i * oc_count for i, q in enumerate(needed)}
    n_items = len(needed) * oc_count

    pes = [_Pe([]) for _ in range(P)]
    for loc in sorted(windows):
        w = windows[loc]
        q = loc // P
        pes[loc % P].tasks.extend((base[q] + oc, loc, oc) for oc in range(oc_count) if w.vld[oc] > 0)

    w_fifo = ElasticFifo(cfg.w_fifo_depth, "weights")
    s_fifo = ElasticFifo(cfg.s_fifo_depth, "spike-window")
    s_stream = deque(sorted(windows))
    w_next = 0
    out = np.zeros((oc_count, n_locs), dtype=np.uint8)
    writebacks: list[WriteBack] = []
    overflows = 0
    pe_state = PeState()
    busy_charged = 0

    t = 0
    while True:
        active = [p for p in pes if p.pos < len(p.tasks) or p.busy_until > t]
        if not active:
            break
        changed = False
        # producers
        if t >= cfg.wmu_latency and w_next < n_items:
            if w_fifo.push(w_next):
                w_next += 1
                changed = True
        if s_stream:
            if s_fifo.push(s_stream[0]):
                s_stream.popleft()
                changed = True
        # PEs, in index order
        causes = []
        for pi, p in enumerate(pes):
            if p.busy_until > t:
                causes.append("compute")
                continue
            task = p.next_task()
            if task is None:
                causes.append("idle")
                continue
            k, loc, oc = task
            if p.loaded != loc and s_fifo.peek() == loc:
                s_fifo.pop()
                p.loaded = loc
                changed = True
            window_ready = p.loaded == loc
            weights_ready = k < w_next  # pushed and, being needed by p, not yet retired
            win = windows[loc]
            pe_state.vld_cnt = int(win.vld[oc])
            verdict = dispatch(pe_state, weights_ready, window_ready, cfg.overhead_cycles)
            if verdict is not Dispatch.FIRE:
                causes.append(verdict)
                continue
            p.busy_until = t + pe_state.busy
            p.pos += 1
            changed = True
            causes.append("compute")
            busy_charged += pe_state.busy
            stats.events_consumed += pe_state.vld_cnt
            stats.windows_dispatched += 1
            state, spike = lif_step(LifState(), lif, int(win.sums[oc]))
            overflows += state.overflows
            out[oc, loc] = spike
            writebacks.append(WriteBack(p.busy_until, oc, loc // out_w, loc % out_w, spike))
        # retire weight sets every PE has moved past
        horizon = min((p.tasks[p.pos][0] if p.pos < len(p.tasks) else n_items) for p in pes)
        while w_fifo.occupancy and w_fifo.peek() < horizon:
            w_fifo.pop()
            changed = True

        if changed:
            t_next = t + 1
        else:
            pending = [p.busy_until for p in pes if p.busy_until > t]
            if t < cfg.wmu_latency and w_next < n_items:
                pending.append(cfg.wmu_latency)
            if not pending:
                raise SimulationError(f"EPA deadlock at cycle {t}")
            t_next = min(pending)
        span = t_next - t
        for c in causes:
            if c == "compute":
                stats.compute_cycles += span
            elif c == "idle":
                stats.idle_pe_cycles += span
            elif c is Dispatch.STALL_W:
                stats.stall_w_fifo += span
            elif c is Dispatch.STALL_S:
                stats.stall_s_fifo += span
            else:
                stats.stall_both += span
        if w_next < n_items and w_fifo.full():
            stats.backpressure += span
        if s_stream and s_fifo.full():
            stats.backpressure += span
        t = t_next

    stats.epa_cycles = t
    if busy_charged != stats.compute_cycles:
        raise SimulationError(f"compute cycles {stats.compute_cycles} != dispatched busy time {busy_charged}")
    stats.overflows = overflows
    stats.spikes_emitted = int(out.sum())
    balanced = w_fifo.balanced() and s_fifo.balanced() and w_fifo.pushes == n_items and s_fifo.pushes == len(windows)
    return out, stats, writebacks, balanced


def run_layer_eventdriven(
    conv: LayerSpec,
    x: SpikeTensor,
    lif: LifParams,
    cfg: EpaConfig = EpaConfig(),
    residual: SpikeTensor | Sequence[SpikeTensor] | None = None,
) -> LayerRun:
    """Conv (+ optional residual joins) + LIF through PipeSDA and the EPA."""
    weights = conv.weights.wide()
    one = conv.weights.fmt.one
    oc_count, ic, k, _ = weights.shape
    if ic != x.channels:
        raise ValueError(f"weights expect {ic} channels, input has {x.channels}")
    geom = ConvGeometry(x.height, x.width, k, conv.stride, conv.padding)
    oh, ow = geom.out_h, geom.out_w
    sda = run_pipelined(x, geom, cfg.sdu_fifo_depth)
    grid = sda.grid
    sda_cycles = sda.cycles
    residual_events = 0
    if residual is None:
        residual = ()
    elif isinstance(residual, SpikeTensor):
        residual = (residual,)
    for src in residual:
        if src.shape != (oc_count, oh, ow):
            raise ValueError(f"residual source {src.shape} != join shape {(oc_count, oh, ow)}")
        before = grid.backpressure_stalls
        n = inject_residual(grid, src, sda.events + residual_events)
        sda_cycles += n + grid.backpressure_stalls - before
        residual_events += n

    windows: dict[int, _Window] = {}
    sums = np.zeros((oc_count, oh * ow), dtype=np.int64)
    for oy in range(oh):
        for ox in range(ow):
            vld, entries = read_window(grid, oy, ox)
            if vld:
                loc = oy * ow + ox
                windows[loc] = _build_window(loc, oy, ox, entries, weights, one)
                sums[:, loc] = windows[loc].sums

    out, stats, writebacks, balanced = _simulate(windows, oh * ow, ow, oc_count, lif, cfg)
    stats.sda_cycles = sda_cycles
    stats.backpressure += grid.backpressure_stalls
    # silent neurons still write a zero word back
    written = {(wb.channel, wb.y, wb.x) for wb in writebacks}
    for oc in range(oc_count):
        for loc in range(oh * ow):
            key = (oc, loc // ow, loc % ow)
            if key not in written:
                writebacks.append(WriteBack(0, *key, 0))
    writebacks.sort(key=lambda wb: (wb.time, wb.y * ow + wb.x, wb.channel))

    unclipped = unclipped_incidences(x, geom) + residual_events
    return LayerRun(
        output=SpikeTensor(out.reshape(oc_count, oh, ow)),
        sums=sums.reshape(oc_count, oh, ow),
        stats=stats,
        writebacks=writebacks,
        fifo_balanced=balanced,
        sdu_real_entries=grid.real_entry_count(),
        sdu_virtual_entries=grid.virtual_entry_count(),
        unclipped_incidences=unclipped,
        residual_events=residual_events,
    )

