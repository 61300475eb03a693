"""Whole-model event-driven execution on the simulated accelerator."""

from __future__ import annotations

from dataclasses import dataclass, field

from .epa import CycleStats, EpaConfig, LayerRun, run_layer_eventdriven
from .graph import LayerKind, LayerSpec, ModelGraph, Scores
from .qkformer import AttenReg, QkBlockSpec, WriteBack, WritebackResult, onthefly_writeback, plain_writeback
from .reference import conv_incidences
from .spike_core import SpikeTensor, total_spikes
from .wtfc import run_wtfc, spiking_pool


@dataclass
class SimLayer:
    index: int
    name: str
    kind: LayerKind
    output: object = None
    stats: CycleStats = field(default_factory=CycleStats)
    synops: int = 0
    spikes: int = 0


@dataclass
class EventDrivenResult:
    scores: Scores | None
    prediction: int | None
    layers: list[SimLayer]
    checks: dict[str, bool]
    truncation_bound: int = 0

    @property
    def stats(self) -> CycleStats:
        total = CycleStats()
        for layer in self.layers:
            total = total + layer.stats
        return total

    @property
    def synops(self) -> int:
        return sum(layer.synops for layer in self.layers)

    @property
    def total_spikes(self) -> int:
        return sum(layer.spikes for layer in self.layers)

    def spike_maps(self) -> dict[int, SpikeTensor]:
        return {l.index: l.output for l in self.layers if isinstance(l.output, SpikeTensor)}


def _check(checks: dict, name: str, ok: bool) -> None:
    checks[name] = checks.get(name, True) and bool(ok)


def _conv_stage_checks(checks: dict, run: LayerRun, x: SpikeTensor, conv: LayerSpec) -> None:
    _check(checks, "fifo_no_loss", run.fifo_balanced)
    _check(checks, "event_conservation", run.sdu_real_entries + run.sdu_virtual_entries == run.unclipped_incidences)
    real = conv_incidences(x, conv.kernel, conv.stride, conv.padding) + run.residual_events
    _check(checks, "event_conservation", run.sdu_real_entries == real)
    _check(checks, "pe_cycle_balance", run.stats.pe_cycle_balance())


def _shift_writebacks(wbs: list[WriteBack], offset: int) -> list[WriteBack]:
    return [wb._replace(time=wb.time + offset) for wb in wbs]


@dataclass
class QkRun:
    q_conv: LayerSpec
    k_conv: LayerSpec
    q_run: LayerRun
    k_run: LayerRun
    writeback: WritebackResult
    baseline_writes: int

    @property
    def zero_extra_writes(self) -> bool:
        return self.writeback.buffer.writes == self.baseline_writes and self.writeback.attention_reads == 0


def run_qk_block(qk: QkBlockSpec, x: SpikeTensor, cfg: EpaConfig = EpaConfig(), one: int = 16) -> QkRun:
    """Q and K projections on the EPA, masked during write-back.

    K results stream back after the Q pass. Raises OrderingViolation if a K
    word would be gated before its Q inputs are complete.
    """
    q_conv = LayerSpec.conv(qk.q_weights)
    k_conv = LayerSpec.conv(qk.k_weights)
    q_run = run_layer_eventdriven(q_conv, x, qk.q_lif, cfg)
    k_run = run_layer_eventdriven(k_conv, x, qk.k_lif, cfg)
    k_stream = _shift_writebacks(k_run.writebacks, q_run.stats.total_cycles)
    reg = AttenReg(*x.shape, axis=qk.axis)
    wb = onthefly_writeback(
        q_run.writebacks,
        k_stream,
        reg,
        residual_input=x if qk.residual else None,
        out_lif=qk.out_lif,
        one=one,
    )
    baseline = plain_writeback(q_run.writebacks, k_stream, x.shape)
    return QkRun(q_conv, k_conv, q_run, k_run, wb, baseline.writes)


def run_eventdriven(model: ModelGraph, x: SpikeTensor, cfg: EpaConfig = EpaConfig()) -> EventDrivenResult:
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} != model input {model.input_shape}")
    layers = model.layers
    sims = [SimLayer(i, l.name, l.kind) for i, l in enumerate(layers)]
    outputs: list[object] = [None] * len(layers)
    checks: dict[str, bool] = {}
    scores = prediction = None
    bound = 0
    one = model.fmt.one
    value: object = x
    i = 0
    while i < len(layers):
        layer = layers[i]
        kind = layer.kind
        if kind is LayerKind.CONV:
            j = i + 1
            sources = []
            while layers[j].kind is LayerKind.RESIDUAL_ADD:
                sources.append(outputs[layers[j].source])
                j += 1
            lif_layer = layers[j]
            run = run_layer_eventdriven(layer, value, lif_layer.lif, cfg, residual=sources)
            _conv_stage_checks(checks, run, value, layer)
            sims[i].stats = run.stats
            sims[i].synops = run.stats.events_consumed - run.residual_events
            for r in range(i + 1, j):
                sims[r].synops = total_spikes(outputs[layers[r].source])
            sims[j - 1].output = run.sums  # membrane comparison point
            sims[j].output = run.output
            sims[j].spikes = total_spikes(run.output)
            outputs[j] = run.output
            value = run.output
            i = j + 1
            continue
        if kind is LayerKind.QKFORMER:
            qrun = run_qk_block(layer.qk, value, cfg, one)
            q_run, k_run, wb = qrun.q_run, qrun.k_run, qrun.writeback
            for sub, conv in ((q_run, qrun.q_conv), (k_run, qrun.k_conv)):
                _conv_stage_checks(checks, sub, value, conv)
            _check(checks, "qk_ordering", True)
            _check(checks, "qk_zero_extra_writes", qrun.zero_extra_writes)
            sims[i].stats = q_run.stats + k_run.stats
            sims[i].synops = q_run.stats.events_consumed + k_run.stats.events_consumed
            sims[i].output = wb.out
            sims[i].spikes = total_spikes(q_run.output) + total_spikes(k_run.output) + total_spikes(wb.out)
            outputs[i] = wb.out
            value = wb.out
            i += 1
            continue
        if kind is LayerKind.AVG_POOL and layers[i + 1].kind is LayerKind.LIF:
            pool = spiking_pool(value, layer.window, layers[i + 1].lif, one)
            sims[i].stats = CycleStats(wtfc_cycles=pool.filter_cycles)
            sims[i + 1].output = pool.output
            sims[i + 1].spikes = total_spikes(pool.output)
            outputs[i + 1] = pool.output
            value = pool.output
            i += 2
            continue
        if kind in (LayerKind.AVG_POOL, LayerKind.W2TTFS_POOL, LayerKind.FC):
            if kind is LayerKind.FC:
                fc, window, exact, fc_index = layer, 1, False, i
            else:
                fc, window, exact, fc_index = layers[i + 1], layer.window, kind is LayerKind.AVG_POOL, i + 1
            run = run_wtfc(value, window, fc.weights, exact=exact)
            _check(checks, "wtfc_multiplier_free", run.state.multiplies == 0)
            stats = CycleStats(wtfc_cycles=run.cycles, events_consumed=run.synops)
            sims[fc_index].stats = stats
            sims[fc_index].synops = run.synops
            sims[fc_index].output = run.scores
            scores, prediction = run.scores, run.prediction
            bound = run.state.truncation_bound()
            i = fc_index + 1
            continue
        raise ValueError(f"layer {i} ({kind.value}) cannot start an event-driven stage")
    return EventDrivenResult(scores, prediction, sims, checks, bound)
