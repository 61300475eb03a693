"""Layer descriptions, graph validation and the dense reference operators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from .qkformer import QkBlockSpec
from .spike_core import FixedPointFormat, FixedTensor, LifParams, SpikeTensor


class ModelError(ValueError):
    """A graph failed validation. ``layer`` is the offending index, if known."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        super().__init__(f"layer {layer}: {message}" if layer is not None else message)


class LayerKind(str, Enum):
    CONV = "conv"
    LIF = "lif"
    RESIDUAL_ADD = "residual_add"
    AVG_POOL = "avg_pool"
    W2TTFS_POOL = "w2ttfs_pool"
    QKFORMER = "qkformer"
    FC = "fc"


class Value(str, Enum):
    """What flows along an edge of the graph."""

    SPIKES = "spikes"
    SUMS = "sums"        # widened synaptic sums, int64 (C, H, W)
    POOLED = "pooled"    # window spike counts over a known denominator
    CODE = "code"        # TTFS one-hot code
    SCORES = "scores"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    name: str = ""
    weights: FixedTensor | None = None
    stride: int = 1
    padding: int = 0
    window: int = 0
    source: int = -1
    lif: LifParams | None = None
    qk: QkBlockSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    @classmethod
    def conv(cls, weights: FixedTensor, stride: int = 1, padding: int = 0, name: str = "") -> LayerSpec:
        return cls(LayerKind.CONV, name, weights=weights, stride=stride, padding=padding)

    @classmethod
    def lif_layer(cls, params: LifParams, name: str = "") -> LayerSpec:
        return cls(LayerKind.LIF, name, lif=params)

    @classmethod
    def residual(cls, source: int, name: str = "") -> LayerSpec:
        return cls(LayerKind.RESIDUAL_ADD, name, source=source)

    @classmethod
    def avg_pool(cls, window: int, name: str = "") -> LayerSpec:
        return cls(LayerKind.AVG_POOL, name, window=window)

    @classmethod
    def w2ttfs_pool(cls, window: int, name: str = "") -> LayerSpec:
        return cls(LayerKind.W2TTFS_POOL, name, window=window)

    @classmethod
    def qkformer(cls, spec: QkBlockSpec, name: str = "") -> LayerSpec:
        return cls(LayerKind.QKFORMER, name, qk=spec)

    @classmethod
    def fc(cls, weights: FixedTensor, name: str = "") -> LayerSpec:
        return cls(LayerKind.FC, name, weights=weights)

    @property
    def kernel(self) -> int:
        return self.weights.shape[2] if self.kind is LayerKind.CONV else 1

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class LayerShape:
    in_value: Value
    in_shape: tuple
    out_value: Value
    out_shape: tuple


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class ModelGraph:
    """Sequential layer list with residual skips. Validated on construction."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    fmt: FixedPointFormat = FixedPointFormat()
    name: str = "model"
    shapes: tuple[LayerShape, ...] = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        layers = []
        for i, layer in enumerate(self.layers):
            layers.append(layer if layer.name else replace(layer, name=f"{layer.kind.value}{i}"))
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "shapes", tuple(_validate(self)))

    @property
    def residual_edges(self) -> list[tuple[int, int]]:
        return [(l.source, i) for i, l in enumerate(self.layers) if l.kind is LayerKind.RESIDUAL_ADD]

    @property
    def output_value(self) -> Value:
        return self.shapes[-1].out_value if self.shapes else Value.SPIKES


def _check_weights(layer: LayerSpec, i: int, fmt: FixedPointFormat, ndim: int) -> None:
    if layer.weights is None:
        raise ModelError(f"{layer.kind.value} layer has no weights", i)
    if len(layer.weights.shape) != ndim:
        raise ModelError(f"weights must be {ndim}-D, got shape {layer.weights.shape}", i)
    if layer.weights.fmt != fmt:
        raise ModelError(f"weight format {layer.weights.fmt} differs from model format {fmt}", i)


def _validate(model: ModelGraph) -> list[LayerShape]:
    if len(model.input_shape) != 3 or min(model.input_shape) < 1:
        raise ModelError(f"input shape must be three positive dims, got {model.input_shape}")
    value, shape = Value.SPIKES, model.input_shape
    out: list[LayerShape] = []
    n = len(model.layers)
    for i, layer in enumerate(model.layers):
        kind = layer.kind
        if value is Value.SCORES:
            raise ModelError("no layer may follow the classifier", i)
        if kind is LayerKind.CONV:
            if value is not Value.SPIKES:
                raise ModelError(f"conv needs spikes, got {value.value}", i)
            _check_weights(layer, i, model.fmt, 4)
            oc, ic, kh, kw = layer.weights.shape
            if kh != kw:
                raise ModelError(f"kernel must be square, got {kh}x{kw}", i)
            if ic != shape[0]:
                raise ModelError(f"weight in-channels {ic} != input channels {shape[0]}", i)
            if layer.stride not in (1, 2):
                raise ModelError(f"stride must be 1 or 2, got {layer.stride}", i)
            if layer.padding < 0:
                raise ModelError("padding must be non-negative", i)
            oh = conv_out_size(shape[1], kh, layer.stride, layer.padding)
            ow = conv_out_size(shape[2], kh, layer.stride, layer.padding)
            if oh < 1 or ow < 1:
                raise ModelError(f"kernel {kh} does not fit input {shape[1]}x{shape[2]}", i)
            new_value, new_shape = Value.SUMS, (oc, oh, ow)
        elif kind is LayerKind.RESIDUAL_ADD:
            if value is not Value.SUMS:
                raise ModelError("residual add joins synaptic sums before a LIF", i)
            if not 0 <= layer.source < i:
                raise ModelError(f"residual source {layer.source} must precede the join", i)
            src = out[layer.source]
            if src.out_value is not Value.SPIKES or src.out_shape != shape:
                raise ModelError(
                    f"residual source {layer.source} yields {src.out_value.value} {src.out_shape}, join has {shape}", i
                )
            new_value, new_shape = Value.SUMS, shape
        elif kind is LayerKind.LIF:
            if layer.lif is None:
                raise ModelError("lif layer has no parameters", i)
            if value not in (Value.SUMS, Value.POOLED):
                raise ModelError(f"lif needs sums or pooled values, got {value.value}", i)
            new_value, new_shape = Value.SPIKES, shape
        elif kind in (LayerKind.AVG_POOL, LayerKind.W2TTFS_POOL):
            if value is not Value.SPIKES:
                raise ModelError(f"{kind.value} needs spikes, got {value.value}", i)
            win = layer.window
            if win < 1 or shape[1] % win or shape[2] % win:
                raise ModelError(f"window {win} must divide input {shape[1]}x{shape[2]}", i)
            new_value = Value.POOLED if kind is LayerKind.AVG_POOL else Value.CODE
            new_shape = (shape[0], shape[1] // win, shape[2] // win)
        elif kind is LayerKind.QKFORMER:
            if value is not Value.SPIKES:
                raise ModelError(f"qkformer needs spikes, got {value.value}", i)
            if layer.qk is None:
                raise ModelError("qkformer layer has no block spec", i)
            if layer.qk.channels != shape[0]:
                raise ModelError(f"qk block has {layer.qk.channels} channels, input has {shape[0]}", i)
            if layer.qk.q_weights.fmt != model.fmt:
                raise ModelError("qk weight format differs from model format", i)
            new_value, new_shape = Value.SPIKES, shape
        elif kind is LayerKind.FC:
            if value not in (Value.SPIKES, Value.POOLED, Value.CODE):
                raise ModelError(f"fc needs spikes, pooled values or a TTFS code, got {value.value}", i)
            _check_weights(layer, i, model.fmt, 2)
            features = int(np.prod(shape))
            if layer.weights.shape[1] != features:
                raise ModelError(f"fc expects {layer.weights.shape[1]} features, input has {features}", i)
            if i != n - 1:
                raise ModelError("fc must be the final layer", i)
            new_value, new_shape = Value.SCORES, (layer.weights.shape[0],)
        else:  # pragma: no cover
            raise ModelError(f"unknown layer kind {kind}", i)
        out.append(LayerShape(value, shape, new_value, new_shape))
        value, shape = new_value, new_shape
    if value is Value.SUMS:
        raise ModelError("graph ends on synaptic sums; add a lif layer", n - 1)
    if value in (Value.POOLED, Value.CODE):
        raise ModelError("pooled output must feed a classifier", n - 1)
    return out


@dataclass(frozen=True)
class PooledTensor:
    """Window spike counts; the real value is ``counts / denom``."""

    counts: np.ndarray
    denom: int

    def as_fractions(self) -> np.ndarray:
        return np.vectorize(lambda v: Fraction(int(v), self.denom), otypes=[object])(self.counts)


@dataclass(frozen=True)
class Scores:
    """Classifier output in raw accumulator units: ``numer / denom``."""

    numer: np.ndarray
    denom: int = 1

    def as_fractions(self) -> list[Fraction]:
        return [Fraction(int(v), self.denom) for v in self.numer]

    def argmax(self) -> int:
        # np.argmax returns the first maximum: ties go to the lowest class.
        return int(np.argmax(self.numer))

    def __eq__(self, other):
        if not isinstance(other, Scores):
            return NotImplemented
        return self.as_fractions() == other.as_fractions()


def dense_conv_ref(x: SpikeTensor, weights: FixedTensor, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of a spike map with raw weights; exact int64 sums."""
    oc, ic, k, k2 = weights.shape
    if ic != x.channels or k != k2:
        raise ModelError(f"weights {weights.shape} incompatible with input {x.shape}")
    oh = conv_out_size(x.height, k, stride, padding)
    ow = conv_out_size(x.width, k, stride, padding)
    if oh < 1 or ow < 1:
        raise ModelError(f"kernel {k} does not fit input {x.shape}")
    xp = np.pad(x.bits.astype(np.int64), ((0, 0), (padding, padding), (padding, padding)))
    w = weights.wide()
    out = np.zeros((oc, oh, ow), dtype=np.int64)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, ki : ki + stride * (oh - 1) + 1 : stride, kj : kj + stride * (ow - 1) + 1 : stride]
            out += np.einsum("oi,ihw->ohw", w[:, :, ki, kj], patch)
    return out


def window_counts(x: SpikeTensor, window: int) -> np.ndarray:
    c, h, w = x.shape
    if window < 1 or h % window or w % window:
        raise ModelError(f"window {window} must divide {h}x{w}")
    v = x.bits.astype(np.int64).reshape(c, h // window, window, w // window, window)
    return v.sum(axis=(2, 4))


def avg_pool_ref(x: SpikeTensor, window: int) -> PooledTensor:
    return PooledTensor(window_counts(x, window), window * window)


def fc_ref(features, weights: FixedTensor) -> Scores:
    """Classifier over spikes or pooled values, exact."""
    w = weights.wide()
    if isinstance(features, PooledTensor):
        return Scores(w @ features.counts.reshape(-1), features.denom)
    bits = features.bits if isinstance(features, SpikeTensor) else np.asarray(features)
    return Scores(w @ bits.astype(np.int64).reshape(-1), 1)
