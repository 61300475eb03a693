"""Seeded synthetic models and inputs. Random quantized weights, not trained ones."""

from __future__ import annotations

import numpy as np

from .graph import LayerSpec, ModelGraph
from .qkformer import MaskAxis, QkBlockSpec
from .spike_core import FixedPointFormat, FixedTensor, LifParams, SpikeTensor


def _weights(rng: np.random.Generator, shape, fan_in: int, fmt: FixedPointFormat, bias: float = 0.25) -> FixedTensor:
    # Slightly positive mean so that sparse layers still fire.
    scale = 2.5 * fmt.one / np.sqrt(max(fan_in, 1))
    raw = rng.normal(bias * scale, scale, size=shape)
    return FixedTensor(np.clip(np.rint(raw), fmt.raw_min, fmt.raw_max).astype(np.int8), fmt)


def toy_qkfresnet(
    seed: int = 0,
    input_shape: tuple[int, int, int] = (3, 16, 16),
    width: int = 8,
    classes: int = 10,
    frac_bits: int = 4,
    axis: MaskAxis = MaskAxis.TOKEN,
) -> ModelGraph:
    """A QKFResNet-11-shaped toy network using all seven layer kinds.

    conv-lif, conv-lif, conv+skip-lif, QK block, strided conv-lif,
    avgpool-lif, conv-lif, W2TTFS pool, FC.
    """
    rng = np.random.default_rng(seed)
    fmt = FixedPointFormat(frac_bits)
    c_in, h, w = input_shape
    if h % 8 or w % 8:
        raise ValueError("toy model needs spatial dims divisible by 8")
    lif = LifParams(threshold=fmt.one)
    wide = 2 * width

    def conv(ic, oc, k=3):
        return _weights(rng, (oc, ic, k, k), ic * k * k, fmt)

    qk = QkBlockSpec(
        q_weights=conv(width, width, 1),
        k_weights=conv(width, width, 1),
        q_lif=lif,
        k_lif=lif,
        residual=True,
        out_lif=LifParams(threshold=fmt.one),
        axis=axis,
    )
    pooled_hw = (h // 4) * (w // 4) // 4  # after stride-2 conv, 2x avgpool and 2x W2TTFS
    layers = [
        LayerSpec.conv(conv(c_in, width), 1, 1, name="conv1"),
        LayerSpec.lif_layer(lif, name="lif1"),
        LayerSpec.conv(conv(width, width), 1, 1, name="conv2"),
        LayerSpec.lif_layer(lif, name="lif2"),
        LayerSpec.conv(conv(width, width), 1, 1, name="conv3"),
        LayerSpec.residual(1, name="skip1"),
        LayerSpec.lif_layer(lif, name="lif3"),
        LayerSpec.qkformer(qk, name="qkf"),
        LayerSpec.conv(conv(width, wide), 2, 1, name="conv4"),
        LayerSpec.lif_layer(lif, name="lif4"),
        LayerSpec.avg_pool(2, name="ap"),
        LayerSpec.lif_layer(LifParams(threshold=fmt.one // 4), name="lif5"),
        LayerSpec.conv(conv(wide, wide), 1, 1, name="conv5"),
        LayerSpec.lif_layer(lif, name="lif6"),
        LayerSpec.w2ttfs_pool(2, name="w2ttfs"),
        LayerSpec.fc(_weights(rng, (classes, wide * pooled_hw), wide * pooled_hw, fmt, bias=0.0), name="fc"),
    ]
    return ModelGraph(input_shape, tuple(layers), fmt, name=f"toy-qkfresnet11-s{seed}")


def random_conv_model(
    rng: np.random.Generator,
    in_shape: tuple[int, int, int],
    out_channels: int,
    kernel: int,
    stride: int,
    padding: int,
    frac_bits: int = 4,
    threshold: int | None = None,
) -> ModelGraph:
    """Single conv + LIF layer with uniform random int8 weights."""
    fmt = FixedPointFormat(frac_bits)
    w = FixedTensor(rng.integers(fmt.raw_min, fmt.raw_max + 1, (out_channels, in_shape[0], kernel, kernel)), fmt)
    thr = threshold if threshold is not None else int(rng.integers(1, 4 * fmt.one))
    layers = (LayerSpec.conv(w, stride, padding, name="conv"), LayerSpec.lif_layer(LifParams(thr), name="lif"))
    return ModelGraph(in_shape, layers, fmt, name="conv-lif")


def random_inputs(
    shape: tuple[int, int, int], count: int, density: float, seed: int = 0, classes: int | None = None
) -> tuple[list[SpikeTensor], list[int] | None]:
    rng = np.random.default_rng(seed)
    images = [SpikeTensor.random(shape, density, rng) for _ in range(count)]
    labels = [int(v) for v in rng.integers(0, classes, count)] if classes else None
    return images, labels
