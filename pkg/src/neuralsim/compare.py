"""Reference vs event-driven comparison for one input."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .reference import ReferenceResult
from .simulator import EventDrivenResult
from .spike_core import SpikeTensor


@dataclass
class Comparison:
    identical: bool
    mismatches: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    classifier: str = "none"  # exact | within-bound | divergent | none

    @property
    def verdict(self) -> str:
        return "identical" if self.identical else "divergent"


def classifier_agreement(ref_scores, ed_scores, bound: int) -> tuple[str, list[str]]:
    """Exact match, or the WTFC shift error stays inside its bound.

    Within the bound the argmax must still agree whenever the exact top score
    leads every other class by more than the bound.
    """
    if ref_scores is None and ed_scores is None:
        return "none", []
    exact = ref_scores.as_fractions()
    got = ed_scores.as_fractions()
    if exact == got:
        return "exact", []
    problems = []
    for j, (e, g) in enumerate(zip(exact, got)):
        if abs(e - g) > bound:
            problems.append(f"class {j}: |{g} - {e}| exceeds truncation bound {bound}")
    # exact argmax with lowest-index tie-break
    top = min(j for j, v in enumerate(exact) if v == max(exact))
    margin = min((exact[top] - v for j, v in enumerate(exact) if j != top), default=Fraction(0))
    ed_top = ed_scores.argmax()
    if margin > bound and ed_top != top:
        problems.append(f"argmax {ed_top} != exact argmax {top} despite margin {margin} > bound {bound}")
    return ("divergent" if problems else "within-bound"), problems


def compare_runs(ref: ReferenceResult, ed: EventDrivenResult) -> Comparison:
    mismatches: list[str] = []
    ref_by_index = {t.index: t for t in ref.trace}
    for sim in ed.layers:
        r = ref_by_index[sim.index]
        if isinstance(sim.output, SpikeTensor):
            if sim.output != r.output:
                diff = int(np.count_nonzero(sim.output.bits != r.output.bits))
                mismatches.append(f"layer {sim.index} ({sim.name}): {diff} spikes differ")
        elif isinstance(sim.output, np.ndarray):
            if not np.array_equal(sim.output, r.output):
                mismatches.append(f"layer {sim.index} ({sim.name}): membrane sums differ")
        if sim.synops != r.synops:
            mismatches.append(f"layer {sim.index} ({sim.name}): synops {sim.synops} != reference {r.synops}")
        if sim.spikes != r.spikes:
            mismatches.append(f"layer {sim.index} ({sim.name}): spike count {sim.spikes} != reference {r.spikes}")
    status, problems = classifier_agreement(ref.scores, ed.scores, ed.truncation_bound)
    mismatches.extend(problems)

    checks = dict(ed.checks)
    total = ed.stats
    checks["stats_additivity"] = (
        sum(l.stats.total_cycles for l in ed.layers) == total.total_cycles
        and sum(l.stats.events_consumed for l in ed.layers) == total.events_consumed
        and ed.synops == ref.synops
    )
    checks["pe_cycle_balance"] = checks.get("pe_cycle_balance", True) and total.pe_cycle_balance()
    failed = [name for name, ok in checks.items() if not ok]
    mismatches.extend(f"check failed: {name}" for name in failed)
    return Comparison(not mismatches, mismatches, checks, status)
