"""Batch execution in reference / event-driven / compare mode, plus report emission.

Per-image work is independent, so a batch may be spread over worker
processes; results are always merged back in input order.
"""

from __future__ import annotations

import datetime as _dt
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .compare import compare_runs
from .epa import EpaConfig
from .graph import ModelGraph
from .metrics import METRIC_FIELDS, PowerModel, RunMetrics, fmt_value, metrics_dict, to_csv
from .reference import run_reference
from .simulator import run_eventdriven
from .spike_core import SpikeTensor

MODES = ("reference", "eventdriven", "compare")
REPORT_VERSION = 1
LAYER_COLUMNS = [
    "image",
    "layer",
    "name",
    "kind",
    "spikes",
    "synops",
    "total_cycles",
    "compute_cycles",
    "stall_cycles",
    "events_consumed",
]
CSV_COLUMNS = LAYER_COLUMNS + [f for f in METRIC_FIELDS if f not in LAYER_COLUMNS]


@dataclass
class ImageResult:
    index: int
    label: int | None
    reference_class: int | None = None
    eventdriven_class: int | None = None
    verdict: str | None = None
    classifier: str | None = None
    mismatches: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    layers: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def predicted(self) -> int | None:
        return self.reference_class if self.reference_class is not None else self.eventdriven_class


def process_image(mode: str, model: ModelGraph, x: SpikeTensor, index: int, label, cfg: EpaConfig, power: PowerModel):
    res = ImageResult(index, label)
    ref = ed = None
    if mode in ("reference", "compare"):
        ref = run_reference(model, x)
        res.reference_class = ref.scores.argmax() if ref.scores is not None else None
    if mode in ("eventdriven", "compare"):
        ed = run_eventdriven(model, x, cfg)
        res.eventdriven_class = ed.prediction
        res.checks = dict(ed.checks)
    if ed is not None:
        stats = ed.stats
        m = RunMetrics.from_counts(ed.total_spikes, ed.synops, stats.total_cycles, cfg.clock_hz, power)
        res.metrics = metrics_dict(m)
        res.metrics["compute_cycles"] = stats.compute_cycles
        res.metrics["stall_cycles"] = stats.stall_cycles
        for layer in ed.layers:
            res.layers.append(
                {
                    "image": index,
                    "layer": layer.index,
                    "name": layer.name,
                    "kind": layer.kind.value,
                    "spikes": layer.spikes,
                    "synops": layer.synops,
                    "total_cycles": layer.stats.total_cycles,
                    "compute_cycles": layer.stats.compute_cycles,
                    "stall_cycles": layer.stats.stall_cycles,
                    "events_consumed": layer.stats.events_consumed,
                }
            )
    else:
        res.metrics = {"total_spikes": ref.total_spikes, "synops": ref.synops}
        for t in ref.trace:
            res.layers.append(
                {"image": index, "layer": t.index, "name": t.name, "kind": t.kind.value, "spikes": t.spikes, "synops": t.synops}
            )
    if mode == "compare":
        cmp = compare_runs(ref, ed)
        res.verdict = cmp.verdict
        res.classifier = cmp.classifier
        res.mismatches = cmp.mismatches
        res.checks = cmp.checks
    return res


def _job(args):
    return process_image(*args)


def run_batch(
    mode: str,
    model: ModelGraph,
    images: list[SpikeTensor],
    labels: list[int] | None = None,
    cfg: EpaConfig = EpaConfig(),
    power: PowerModel = PowerModel(),
    workers: int = 1,
) -> list[ImageResult]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    jobs = [(mode, model, x, i, labels[i] if labels else None, cfg, power) for i, x in enumerate(images)]
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def diverged(results: list[ImageResult]) -> bool:
    return any(r.verdict == "divergent" for r in results)


def accuracy(results: list[ImageResult]) -> tuple[int, int] | None:
    labelled = [r for r in results if r.label is not None and r.predicted is not None]
    if not labelled:
        return None
    return sum(r.predicted == r.label for r in labelled), len(labelled)


def render_text(mode: str, model: ModelGraph, results: list[ImageResult], deterministic: bool = False) -> str:
    out = ["# neuralsim report", f"report_version: {REPORT_VERSION}", f"mode: {mode}", f"model: {model.name}"]
    out.append(f"images: {len(results)}")
    if not deterministic:
        out.append(f"generated: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}")
    if mode == "compare":
        out.append(f"verdict: {'divergent' if diverged(results) else 'identical'}")
    acc = accuracy(results)
    if acc is not None:
        out.append(f"accuracy: {fmt_value(acc[0] / acc[1])} ({acc[0]}/{acc[1]})")
    out.append("energy_model: power_w is a configured input; energy_j = power_w * latency_s")
    for r in results:
        out.append("")
        out.append(f"[image {r.index}]")
        if r.label is not None:
            out.append(f"label: {r.label}")
        if r.reference_class is not None:
            out.append(f"reference_class: {r.reference_class}")
        if r.eventdriven_class is not None:
            out.append(f"eventdriven_class: {r.eventdriven_class}")
        if r.verdict is not None:
            out.append(f"verdict: {r.verdict}")
            out.append(f"classifier: {r.classifier}")
        for k, v in r.metrics.items():
            out.append(f"{k}: {fmt_value(v)}")
        if r.checks:
            out.append("checks: " + " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in sorted(r.checks.items())))
        for m in r.mismatches:
            out.append(f"mismatch: {m}")
        cols = [c for c in LAYER_COLUMNS[1:] if c in r.layers[0]] if r.layers else []
        if cols:
            out.append("layers: " + " ".join(cols))
            for row in r.layers:
                out.append("  " + " ".join(fmt_value(row[c]) for c in cols))
    return "\n".join(out) + "\n"


def render_csv(results: list[ImageResult]) -> str:
    rows = []
    for r in results:
        rows.extend(r.layers)
        total = {"image": r.index, "layer": "total", "name": "", "kind": ""}
        total.update(r.metrics)
        rows.append(total)
    return to_csv(rows, CSV_COLUMNS)
