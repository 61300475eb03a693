"""Run-level metrics: spikes, SynOps, latency, FPS, energy and GSOPS/W.

A SynOp is one synaptic weight accumulation, i.e. one consumed event. Power
is not simulated; it is an input (a silicon measurement), so energy here is
``power * latency`` and nothing more.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class PowerModel:
    power_w: float = 0.792
    kluts: float = 71.7

    def __post_init__(self):
        if self.power_w <= 0:
            raise MetricsError(f"power must be positive, got {self.power_w}")
        if self.kluts <= 0:
            raise MetricsError(f"kLUTs must be positive, got {self.kluts}")


@dataclass(frozen=True)
class RunMetrics:
    total_spikes: int
    synops: float
    total_cycles: int
    latency_s: float
    power_w: float
    kluts: float = 71.7

    @classmethod
    def from_counts(cls, total_spikes: int, synops: float, total_cycles: int, clock_hz: float, power: PowerModel):
        return cls(total_spikes, synops, total_cycles, total_cycles / clock_hz, power.power_w, power.kluts)

    @classmethod
    def from_fps(cls, synops: float, fps: float, power_w: float, kluts: float = 71.7, total_spikes: int = 0):
        if fps <= 0:
            raise MetricsError(f"fps must be positive, got {fps}")
        return cls(total_spikes, synops, 0, 1.0 / fps, power_w, kluts)

    @property
    def fps(self) -> float:
        return 1.0 / self.latency_s if self.latency_s > 0 else float("inf")

    @property
    def energy_j(self) -> float:
        return energy_per_frame(self)

    @property
    def gsops_per_watt(self) -> float:
        return derive_efficiency(self)

    @property
    def eff_per_klut(self) -> float:
        return self.gsops_per_watt / self.kluts


def count_synops(trace) -> int:
    """Sum of per-layer SynOps for a reference or event-driven trace."""
    layers = trace
    for attr in ("trace", "layers"):
        if hasattr(trace, attr):
            layers = getattr(trace, attr)
            break
    return sum(int(layer.synops) for layer in layers)


def derive_efficiency(m: RunMetrics) -> float:
    """GSOPS/W = synops / latency / power / 1e9."""
    if m.power_w <= 0:
        raise MetricsError(f"power must be positive, got {m.power_w}")
    if m.synops == 0:
        return 0.0
    if m.latency_s <= 0:
        raise MetricsError(f"latency must be positive, got {m.latency_s}")
    return m.synops / m.latency_s / m.power_w / 1e9


def energy_per_frame(m: RunMetrics) -> float:
    if m.power_w <= 0:
        raise MetricsError(f"power must be positive, got {m.power_w}")
    return m.power_w * m.latency_s


METRIC_FIELDS = (
    "total_spikes",
    "synops",
    "total_cycles",
    "latency_s",
    "fps",
    "power_w",
    "energy_j",
    "gsops_per_watt",
    "eff_per_klut",
)


def metrics_dict(m: RunMetrics) -> dict:
    out = {}
    for name in METRIC_FIELDS:
        try:
            out[name] = getattr(m, name)
        except MetricsError:
            out[name] = float("nan")
    return out


def fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: fmt_value(row.get(k, "")) for k in columns})
    return buf.getvalue()
