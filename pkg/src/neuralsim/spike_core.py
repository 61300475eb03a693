"""Binary spike maps, 8-bit fixed-point values and single-step LIF dynamics.

Every arithmetic path in the package is integer-only. Weights are signed
8-bit raws with ``frac_bits`` fractional bits; membrane potentials live in a
24-bit accumulator sharing the same binary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

ACC_BITS = 24
ACC_MIN = -(1 << (ACC_BITS - 1))
ACC_MAX = (1 << (ACC_BITS - 1)) - 1


@dataclass(frozen=True)
class SpikeTensor:
    """Binary activation map of shape (channels, height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 3:
            raise ValueError(f"spike tensor must be 3-D (C, H, W), got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("spike tensor elements must be 0 or 1")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> SpikeTensor:
        return cls(np.zeros((channels, height, width), dtype=np.uint8))

    @classmethod
    def random(cls, shape: tuple[int, int, int], density: float, rng: np.random.Generator) -> SpikeTensor:
        return cls((rng.random(shape) < density).astype(np.uint8))

    @classmethod
    def from_packed(cls, data: bytes, shape: tuple[int, int, int]) -> SpikeTensor:
        n = int(np.prod(shape))
        expected = (n + 7) // 8
        if len(data) != expected:
            raise ValueError(f"packed bitmap has {len(data)} bytes, expected {expected} for shape {shape}")
        flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:n]
        return cls(flat.reshape(shape))

    def packed(self) -> bytes:
        return np.packbits(self.bits.reshape(-1)).tobytes()

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.bits.shape)

    @property
    def channels(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def __eq__(self, other):
        if not isinstance(other, SpikeTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))


def total_spikes(t: SpikeTensor) -> int:
    return int(np.count_nonzero(t.bits))


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed 8-bit fixed point. ``total_bits`` and ``signed`` are not configurable."""

    frac_bits: int = 4
    total_bits: int = field(default=8, init=False)
    signed: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 0 <= self.frac_bits <= 7:
            raise ValueError(f"frac_bits must lie in [0, 7], got {self.frac_bits}")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def one(self) -> int:
        """Raw accumulator value of 1.0 (may exceed the 8-bit weight range)."""
        return 1 << self.frac_bits

    @property
    def real_range(self) -> tuple[float, float]:
        return self.raw_min * self.lsb, self.raw_max * self.lsb

    def decode(self, raw):
        return np.asarray(raw, dtype=np.float64) * self.lsb


def quantize(value: float, fmt: FixedPointFormat) -> int:
    """Round half away from zero, then saturate into the signed 8-bit range."""
    scaled = value * (1 << fmt.frac_bits)
    if math.isnan(scaled):
        return 0
    if math.isinf(scaled):
        return fmt.raw_max if scaled > 0 else fmt.raw_min
    mag = math.floor(abs(scaled) + 0.5)
    raw = mag if scaled >= 0 else -mag
    return max(fmt.raw_min, min(fmt.raw_max, raw))


@dataclass(frozen=True)
class FixedTensor:
    """Raw int8 values with a shared fixed-point format, row-major."""

    values: np.ndarray
    fmt: FixedPointFormat = FixedPointFormat()

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.size and (arr.min() < self.fmt.raw_min or arr.max() > self.fmt.raw_max):
            raise ValueError("raw values exceed the signed 8-bit range")
        arr = arr.astype(np.int8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_real(cls, values, fmt: FixedPointFormat = FixedPointFormat()) -> FixedTensor:
        arr = np.asarray(values, dtype=np.float64)
        raws = np.array([quantize(v, fmt) for v in arr.reshape(-1)], dtype=np.int8)
        return cls(raws.reshape(arr.shape), fmt)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def real(self) -> np.ndarray:
        return self.fmt.decode(self.values)

    def wide(self) -> np.ndarray:
        """Raw values widened to int64 for accumulation."""
        return self.values.astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, FixedTensor):
            return NotImplemented
        return self.fmt == other.fmt and self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.fmt, self.shape, self.values.tobytes()))


class ResetMode(str, Enum):
    HARD_ZERO = "hard"
    SUBTRACT = "subtract"


@dataclass(frozen=True)
class LifParams:
    """LIF configuration. ``threshold`` is a raw accumulator value.

    ``tau`` must be a power of two (``2**-k``) so that decay is a shift.
    """

    threshold: int
    tau: float = 0.5
    reset_mode: ResetMode = ResetMode.HARD_ZERO

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        k = -math.log2(self.tau)
        if k != int(k):
            raise ValueError(f"tau must be a power of two, got {self.tau}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        object.__setattr__(self, "reset_mode", ResetMode(self.reset_mode))

    @property
    def decay_shift(self) -> int:
        return int(-math.log2(self.tau))


@dataclass(frozen=True)
class LifState:
    membrane: int = 0
    overflows: int = 0


def saturate_acc(value: int) -> tuple[int, bool]:
    if value > ACC_MAX:
        return ACC_MAX, True
    if value < ACC_MIN:
        return ACC_MIN, True
    return value, False


def lif_step(state: LifState, params: LifParams, synaptic_sum: int) -> tuple[LifState, int]:
    """One timestep: shift-decay, integrate, fire, reset."""
    decayed = state.membrane >> params.decay_shift
    membrane, overflowed = saturate_acc(decayed + int(synaptic_sum))
    overflows = state.overflows + int(overflowed)
    spike = int(membrane >= params.threshold)
    if spike:
        if params.reset_mode is ResetMode.HARD_ZERO:
            membrane = 0
        else:
            membrane -= params.threshold
    return LifState(membrane, overflows), spike


def lif_fire(sums: np.ndarray, params: LifParams) -> tuple[np.ndarray, int]:
    """Vectorised ``lif_step`` from a zero membrane (the single-timestep case).

    Returns the spike map and the number of saturated neurons.
    """
    sums = np.asarray(sums, dtype=np.int64)
    clipped = np.clip(sums, ACC_MIN, ACC_MAX)
    overflows = int(np.count_nonzero(clipped != sums))
    return (clipped >= params.threshold).astype(np.uint8), overflows
