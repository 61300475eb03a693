"""Dense golden executor. Defines the correct output of every layer kind."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (
    LayerKind,
    ModelGraph,
    PooledTensor,
    Scores,
    avg_pool_ref,
    conv_out_size,
    dense_conv_ref,
    fc_ref,
)
from .qkformer import qk_attention_ref
from .spike_core import SpikeTensor, lif_fire, total_spikes
from .w2ttfs import TtfsCode, ttfs_fc_exact, w2ttfs_encode


@dataclass
class LayerTrace:
    index: int
    name: str
    kind: LayerKind
    output: object
    spikes: int = 0      # spikes emitted by this layer (incl. internal Q/K maps)
    synops: int = 0      # weight accumulations implied by its input spikes
    overflows: int = 0


@dataclass
class ReferenceResult:
    scores: Scores | None
    trace: list[LayerTrace] = field(default_factory=list)

    def spike_maps(self) -> dict[int, SpikeTensor]:
        return {t.index: t.output for t in self.trace if isinstance(t.output, SpikeTensor)}

    @property
    def total_spikes(self) -> int:
        return sum(t.spikes for t in self.trace)

    @property
    def synops(self) -> int:
        return sum(t.synops for t in self.trace)


def conv_incidences(x: SpikeTensor, kernel: int, stride: int, padding: int) -> int:
    """Number of (input spike, real output position) pairs a conv touches."""
    oh = conv_out_size(x.height, kernel, stride, padding)
    ow = conv_out_size(x.width, kernel, stride, padding)

    def fan(size: int, out: int) -> np.ndarray:
        pos = np.arange(size)
        lo = np.maximum(-((kernel - 1 - pos - padding) // stride), 0)  # ceil((pos+p-K+1)/s)
        hi = np.minimum((pos + padding) // stride, out - 1)
        return np.maximum(hi - lo + 1, 0)

    per_pixel = np.outer(fan(x.height, oh), fan(x.width, ow))
    return int((x.bits.astype(np.int64) * per_pixel[None]).sum())


def run_reference(model: ModelGraph, x: SpikeTensor) -> ReferenceResult:
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} != model input {model.input_shape}")
    value: object = x
    outputs: list[object] = []
    trace: list[LayerTrace] = []
    scores = None
    one = model.fmt.one
    for i, layer in enumerate(model.layers):
        t = LayerTrace(i, layer.name, layer.kind, None)
        kind = layer.kind
        if kind is LayerKind.CONV:
            value_out = dense_conv_ref(value, layer.weights, layer.stride, layer.padding)
            t.synops = conv_incidences(value, layer.kernel, layer.stride, layer.padding) * layer.out_channels
        elif kind is LayerKind.RESIDUAL_ADD:
            src = outputs[layer.source]
            value_out = value + src.bits.astype(np.int64) * one
            t.synops = total_spikes(src)
        elif kind is LayerKind.LIF:
            if isinstance(value, PooledTensor):
                # count/denom >= threshold/one, compared without rounding
                bits = (value.counts * one >= layer.lif.threshold * value.denom).astype(np.uint8)
            else:
                bits, t.overflows = lif_fire(value, layer.lif)
            value_out = SpikeTensor(bits)
            t.spikes = total_spikes(value_out)
        elif kind is LayerKind.AVG_POOL:
            value_out = avg_pool_ref(value, layer.window)
        elif kind is LayerKind.W2TTFS_POOL:
            value_out = w2ttfs_encode(value, value.height // layer.window, value.width // layer.window)
        elif kind is LayerKind.QKFORMER:
            res = qk_attention_ref(value, layer.qk)
            value_out = res.out
            t.spikes = total_spikes(res.q) + total_spikes(res.k) + total_spikes(res.out)
            t.synops = 2 * total_spikes(value) * layer.qk.channels
        elif kind is LayerKind.FC:
            classes = layer.weights.shape[0]
            if isinstance(value, TtfsCode):
                scores = ttfs_fc_exact(value, layer.weights)
                # one unit-weight add per spike counted in a window, per class
                t.synops = int(value.slot_of().sum()) * classes
            elif isinstance(value, PooledTensor):
                scores = fc_ref(value, layer.weights)
                t.synops = int(value.counts.sum()) * classes
            else:
                scores = fc_ref(value, layer.weights)
                t.synops = total_spikes(value) * classes
            value_out = scores
        else:  # pragma: no cover
            raise ValueError(f"unhandled layer kind {kind}")
        t.output = value_out
        trace.append(t)
        outputs.append(value_out)
        value = value_out
    return ReferenceResult(scores, trace)
