"""On-disk formats: model container, input bundle and simulator config.

Model container
    A directory holding ``manifest.txt`` plus one ``.bin`` blob per weight
    tensor. The manifest is line oriented::

        neuralsim-model 1
        name toy
        input 3 16 16
        format frac_bits=4
        layer conv name=conv1 out=8 in=3 kernel=3 stride=1 padding=1 weights=000_conv1.bin
        layer lif name=lif1 threshold=16 tau=0.5 reset=hard
        ...

    Blobs are raw little-endian int8 two's complement, row-major
    ``[oc][ic][kh][kw]`` for conv and ``[classes][features]`` for fc.

Input bundle
    ``NSPKBNDL`` magic, then ``<HIHHHB`` (version, count, C, H, W,
    has_labels), then ``count`` packed bitmaps of ``ceil(C*H*W/8)`` bytes
    (MSB-first, row-major [c][h][w]), then ``count`` int32 labels if present.

Config
    JSON object; see ``CONFIG_KEYS``.
"""

from __future__ import annotations

import json
import shlex
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epa import EpaConfig
from .graph import LayerKind, LayerSpec, ModelError, ModelGraph
from .metrics import MetricsError, PowerModel
from .qkformer import MaskAxis, QkBlockSpec
from .spike_core import FixedPointFormat, FixedTensor, LifParams, ResetMode, SpikeTensor

MAGIC = "neuralsim-model"
FORMAT_VERSION = 1
MANIFEST = "manifest.txt"
BUNDLE_MAGIC = b"NSPKBNDL"
BUNDLE_HEADER = struct.Struct("<HIHHHB")


class ContainerError(Exception):
    def __init__(self, message: str, line: int | None = None, layer: str | None = None):
        self.line = line
        self.layer = layer
        where = []
        if line is not None:
            where.append(f"manifest line {line}")
        if layer:
            where.append(f"layer {layer!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class BadMagicError(ContainerError):
    pass


class ManifestSyntaxError(ContainerError):
    pass


class UnknownLayerKindError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


class TruncatedBlobError(ContainerError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- model


def _lif_fields(p: LifParams, prefix: str = "") -> list[str]:
    return [f"{prefix}threshold={p.threshold}", f"{prefix}tau={p.tau!r}", f"{prefix}reset={p.reset_mode.value}"]


def _blob_name(i: int, name: str, suffix: str = "") -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
    return f"{i:03d}_{safe}{suffix}.bin"


def save_model(model: ModelGraph, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"{MAGIC} {FORMAT_VERSION}", f"name {shlex.quote(model.name)}"]
    lines.append("input " + " ".join(str(v) for v in model.input_shape))
    lines.append(f"format frac_bits={model.fmt.frac_bits}")
    blobs: dict[str, bytes] = {}
    for i, layer in enumerate(model.layers):
        f = [f"name={shlex.quote(layer.name)}"]
        kind = layer.kind
        if kind is LayerKind.CONV:
            oc, ic, k, _ = layer.weights.shape
            blob = _blob_name(i, layer.name)
            blobs[blob] = layer.weights.values.tobytes()
            f += [f"out={oc}", f"in={ic}", f"kernel={k}", f"stride={layer.stride}", f"padding={layer.padding}", f"weights={blob}"]
        elif kind is LayerKind.LIF:
            f += _lif_fields(layer.lif)
        elif kind is LayerKind.RESIDUAL_ADD:
            f.append(f"source={layer.source}")
        elif kind in (LayerKind.AVG_POOL, LayerKind.W2TTFS_POOL):
            f.append(f"window={layer.window}")
        elif kind is LayerKind.QKFORMER:
            qk = layer.qk
            qb, kb = _blob_name(i, layer.name, "_q"), _blob_name(i, layer.name, "_k")
            blobs[qb] = qk.q_weights.values.tobytes()
            blobs[kb] = qk.k_weights.values.tobytes()
            f += [f"channels={qk.channels}", f"axis={qk.axis.value}", f"residual={int(qk.residual)}"]
            f += [f"q_weights={qb}", f"k_weights={kb}"]
            f += _lif_fields(qk.q_lif, "q_") + _lif_fields(qk.k_lif, "k_")
            if qk.out_lif is not None:
                f += _lif_fields(qk.out_lif, "out_")
        elif kind is LayerKind.FC:
            classes, features = layer.weights.shape
            blob = _blob_name(i, layer.name)
            blobs[blob] = layer.weights.values.tobytes()
            f += [f"classes={classes}", f"features={features}", f"weights={blob}"]
        lines.append(f"layer {kind.value} " + " ".join(f))
    (root / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, data in blobs.items():
        (root / name).write_bytes(data)
    return root


class _Line:
    def __init__(self, number: int, text: str):
        self.number = number
        try:
            self.tokens = shlex.split(text, comments=True)
        except ValueError as exc:
            raise ManifestSyntaxError(str(exc), number) from exc
        self.kv: dict[str, str] = {}
        self.layer: str | None = None

    def parse_kv(self, start: int) -> None:
        for tok in self.tokens[start:]:
            if "=" not in tok:
                raise ManifestSyntaxError(f"expected key=value, got {tok!r}", self.number)
            k, v = tok.split("=", 1)
            self.kv[k] = v
        self.layer = self.kv.get("name")

    def get(self, key: str, cast=str, default=None):
        if key not in self.kv:
            if default is not None:
                return default
            raise ManifestSyntaxError(f"missing {key}=", self.number, self.layer)
        try:
            return cast(self.kv[key])
        except (TypeError, ValueError) as exc:
            raise ManifestSyntaxError(f"bad value for {key}: {self.kv[key]!r}", self.number, self.layer) from exc


def _read_blob(root: Path, line: _Line, key: str, shape: tuple[int, ...], fmt: FixedPointFormat) -> FixedTensor:
    name = line.get(key)
    path = root / name
    if not path.is_file():
        raise TruncatedBlobError(f"blob {name} missing", line.number, line.layer)
    data = path.read_bytes()
    expected = int(np.prod(shape))
    if len(data) < expected:
        raise TruncatedBlobError(
            f"blob {name} has {len(data)} bytes, shape {shape} needs {expected}", line.number, line.layer
        )
    if len(data) > expected:
        raise ShapeMismatchError(
            f"blob {name} has {len(data)} bytes, shape {shape} needs {expected}", line.number, line.layer
        )
    return FixedTensor(np.frombuffer(data, dtype="<i1").reshape(shape), fmt)


def _lif_from(line: _Line, prefix: str = "") -> LifParams:
    try:
        return LifParams(
            threshold=line.get(prefix + "threshold", int),
            tau=line.get(prefix + "tau", float, 0.5),
            reset_mode=ResetMode(line.get(prefix + "reset", str, "hard")),
        )
    except ValueError as exc:
        if isinstance(exc, ContainerError):
            raise
        raise ManifestSyntaxError(str(exc), line.number, line.layer) from exc


def load_model(path) -> ModelGraph:
    root = Path(path)
    manifest = root / MANIFEST if root.is_dir() else root
    root = manifest.parent
    if not manifest.is_file():
        raise ContainerError(f"no manifest at {manifest}")
    raw = manifest.read_text(encoding="utf-8").splitlines()
    lines = [_Line(n, t) for n, t in enumerate(raw, start=1)]
    lines = [l for l in lines if l.tokens]
    if not lines or lines[0].tokens[0] != MAGIC:
        raise BadMagicError(f"manifest must start with {MAGIC!r}", lines[0].number if lines else 1)
    head = lines[0]
    if len(head.tokens) != 2 or head.tokens[1] != str(FORMAT_VERSION):
        raise BadMagicError(f"unsupported format version {head.tokens[1:]}", head.number)

    name, input_shape, fmt = "model", None, FixedPointFormat()
    layers: list[LayerSpec] = []
    layer_lines: list[_Line] = []
    for line in lines[1:]:
        key = line.tokens[0]
        if key == "name":
            name = " ".join(line.tokens[1:])
        elif key == "input":
            try:
                input_shape = tuple(int(v) for v in line.tokens[1:])
            except ValueError as exc:
                raise ManifestSyntaxError("input needs three integers", line.number) from exc
            if len(input_shape) != 3:
                raise ManifestSyntaxError("input needs three integers", line.number)
        elif key == "format":
            line.parse_kv(1)
            try:
                fmt = FixedPointFormat(line.get("frac_bits", int))
            except ValueError as exc:
                raise ManifestSyntaxError(str(exc), line.number) from exc
        elif key == "layer":
            if len(line.tokens) < 2:
                raise ManifestSyntaxError("layer needs a kind", line.number)
            line.parse_kv(2)
            layers.append(_parse_layer(root, line, fmt))
            layer_lines.append(line)
        else:
            raise ManifestSyntaxError(f"unknown directive {key!r}", line.number)
    if input_shape is None:
        raise ManifestSyntaxError("missing input line", head.number)
    try:
        return ModelGraph(input_shape, tuple(layers), fmt, name=name)
    except ModelError as exc:
        if exc.layer is not None and exc.layer < len(layer_lines):
            bad = layer_lines[exc.layer]
            raise ShapeMismatchError(str(exc), bad.number, bad.layer) from exc
        raise ShapeMismatchError(str(exc)) from exc


def _parse_layer(root: Path, line: _Line, fmt: FixedPointFormat) -> LayerSpec:
    kind_name = line.tokens[1]
    try:
        kind = LayerKind(kind_name)
    except ValueError as exc:
        raise UnknownLayerKindError(f"unknown layer kind {kind_name!r}", line.number, line.layer) from exc
    name = line.get("name", str, "")
    if kind is LayerKind.CONV:
        k = line.get("kernel", int)
        shape = (line.get("out", int), line.get("in", int), k, k)
        w = _read_blob(root, line, "weights", shape, fmt)
        return LayerSpec.conv(w, line.get("stride", int, 1), line.get("padding", int, 0), name=name)
    if kind is LayerKind.LIF:
        return LayerSpec.lif_layer(_lif_from(line), name=name)
    if kind is LayerKind.RESIDUAL_ADD:
        return LayerSpec.residual(line.get("source", int), name=name)
    if kind is LayerKind.AVG_POOL:
        return LayerSpec.avg_pool(line.get("window", int), name=name)
    if kind is LayerKind.W2TTFS_POOL:
        return LayerSpec.w2ttfs_pool(line.get("window", int), name=name)
    if kind is LayerKind.QKFORMER:
        c = line.get("channels", int)
        residual = bool(line.get("residual", int, 0))
        try:
            spec = QkBlockSpec(
                q_weights=_read_blob(root, line, "q_weights", (c, c, 1, 1), fmt),
                k_weights=_read_blob(root, line, "k_weights", (c, c, 1, 1), fmt),
                q_lif=_lif_from(line, "q_"),
                k_lif=_lif_from(line, "k_"),
                residual=residual,
                out_lif=_lif_from(line, "out_") if "out_threshold" in line.kv else None,
                axis=MaskAxis(line.get("axis", str, "token")),
            )
        except ContainerError:
            raise
        except ValueError as exc:
            raise ManifestSyntaxError(str(exc), line.number, line.layer) from exc
        return LayerSpec.qkformer(spec, name=name)
    shape = (line.get("classes", int), line.get("features", int))
    return LayerSpec.fc(_read_blob(root, line, "weights", shape, fmt), name=name)


# ---------------------------------------------------------------- inputs


@dataclass
class InputBundle:
    images: list[SpikeTensor]
    labels: list[int] | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images[0].shape


def save_inputs(bundle: InputBundle, path) -> Path:
    path = Path(path)
    if not bundle.images:
        raise ValueError("bundle has no images")
    shape = bundle.shape
    if any(img.shape != shape for img in bundle.images):
        raise ValueError("all images in a bundle must share one shape")
    has_labels = bundle.labels is not None
    if has_labels and len(bundle.labels) != len(bundle.images):
        raise ValueError("label count does not match image count")
    parts = [BUNDLE_MAGIC, BUNDLE_HEADER.pack(1, len(bundle.images), *shape, int(has_labels))]
    parts += [img.packed() for img in bundle.images]
    if has_labels:
        parts.append(np.asarray(bundle.labels, dtype="<i4").tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_inputs(path) -> InputBundle:
    data = Path(path).read_bytes()
    if not data.startswith(BUNDLE_MAGIC):
        raise BadMagicError(f"{path}: not an input bundle")
    off = len(BUNDLE_MAGIC)
    if len(data) < off + BUNDLE_HEADER.size:
        raise TruncatedBlobError(f"{path}: header truncated")
    version, count, c, h, w, has_labels = BUNDLE_HEADER.unpack_from(data, off)
    if version != 1:
        raise BadMagicError(f"{path}: unsupported bundle version {version}")
    if count == 0:
        raise ContainerError(f"{path}: bundle holds no images")
    off += BUNDLE_HEADER.size
    per = (c * h * w + 7) // 8
    need = count * per + (4 * count if has_labels else 0)
    if len(data) - off < need:
        raise TruncatedBlobError(f"{path}: expected {need} payload bytes, found {len(data) - off}")
    if len(data) - off > need:
        raise ShapeMismatchError(f"{path}: {len(data) - off - need} trailing bytes")
    images = [SpikeTensor.from_packed(data[off + i * per : off + (i + 1) * per], (c, h, w)) for i in range(count)]
    labels = None
    if has_labels:
        labels = [int(v) for v in np.frombuffer(data[off + count * per :], dtype="<i4")]
    return InputBundle(images, labels)


# ---------------------------------------------------------------- config

CONFIG_KEYS = {
    "pe_rows": "rows",
    "pe_cols": "cols",
    "w_fifo_depth": "w_fifo_depth",
    "s_fifo_depth": "s_fifo_depth",
    "sdu_fifo_depth": "sdu_fifo_depth",
    "overhead_cycles": "overhead_cycles",
    "clock_hz": "clock_hz",
    "wmu_latency": "wmu_latency",
}
POWER_KEYS = {"power_w", "kluts"}


def load_config(path=None) -> tuple[EpaConfig, PowerModel]:
    if path is None:
        return EpaConfig(), PowerModel()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_KEYS) - POWER_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in raw.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        if key in CONFIG_KEYS and key != "clock_hz" and not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
    try:
        epa = EpaConfig(**{CONFIG_KEYS[k]: v for k, v in raw.items() if k in CONFIG_KEYS})
        power = PowerModel(**{k: v for k, v in raw.items() if k in POWER_KEYS})
    except (TypeError, ValueError, MetricsError) as exc:
        raise ConfigError(str(exc)) from exc
    return epa, power
