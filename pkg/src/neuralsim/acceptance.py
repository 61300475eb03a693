"""Seeded acceptance checks with deterministic text reports.

Every check builds its fixtures from a fixed seed, evaluates each case
(optionally across worker processes) and renders a report whose bytes do
not depend on timing or worker count.
"""

from __future__ import annotations

import hashlib
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .epa import EpaConfig, run_layer_eventdriven
from .generate import random_inputs, toy_qkfresnet
from .graph import LayerSpec, avg_pool_ref, dense_conv_ref, fc_ref
from .metrics import RunMetrics
from .qkformer import MaskAxis, OrderingViolation, QkBlockSpec, qk_attention_ref
from .reference import run_reference
from .runner import render_text, run_batch
from .simulator import run_eventdriven, run_qk_block
from .spike_core import FixedPointFormat, FixedTensor, LifParams, ResetMode, SpikeTensor, lif_fire
from .w2ttfs import ttfs_fc_exact, w2ttfs_encode
from .wtfc import HardwareInfeasibleWarning, exact_scores, run_wtfc, ttfs_filter

FMT = FixedPointFormat(4)
DENSITIES = (0.0, 0.05, 0.5, 1.0)


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    report: str
    elapsed: float
    limit_s: float | None = None

    @property
    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        timing = f"{self.elapsed:.2f}s" + (f" (limit {self.limit_s:g}s)" if self.limit_s else "")
        return f"[{status}] criterion {self.number}: {self.title} [{timing}]"


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:12]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _rng(criterion: int, case: int) -> np.random.Generator:
    return np.random.default_rng([criterion, case])


def _int8(rng, shape) -> FixedTensor:
    return FixedTensor(rng.integers(FMT.raw_min, FMT.raw_max + 1, shape), FMT)


def _lif(rng) -> LifParams:
    return LifParams(
        threshold=int(rng.integers(1, 4 * FMT.one)),
        tau=float(rng.choice([0.5, 0.25, 1.0])),
        reset_mode=ResetMode(rng.choice(["hard", "subtract"])),
    )


def _finish(number, title, lines, ok, t0, limit=None) -> Outcome:
    elapsed = time.perf_counter() - t0
    passed = ok and (limit is None or elapsed < limit)
    body = [f"# criterion {number}: {title}"] + lines + [f"result: {'pass' if ok else 'fail'}"]
    return Outcome(number, title, passed, "\n".join(body) + "\n", elapsed, limit)


# 1. sparse/dense equivalence ------------------------------------------------


def conv_case(i: int) -> tuple[bool, str]:
    rng = _rng(1, i)
    c, oc = (int(v) for v in rng.integers(1, 9, 2))
    h, w = (int(v) for v in rng.integers(4, 17, 2))
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    p = int(rng.choice([0, 1]))
    density = DENSITIES[i % len(DENSITIES)]
    x = SpikeTensor.random((c, h, w), density, rng)
    weights = _int8(rng, (oc, c, k, k))
    lif = _lif(rng)
    run = run_layer_eventdriven(LayerSpec.conv(weights, s, p), x, lif)
    sums = dense_conv_ref(x, weights, s, p)
    spikes, _ = lif_fire(sums, lif)
    ok = np.array_equal(run.sums, sums) and np.array_equal(run.output.bits, spikes)
    ok = ok and run.fifo_balanced and run.stats.pe_cycle_balance()
    desc = (
        f"case {i:03d} C={c} OC={oc} HxW={h}x{w} K={k} s={s} p={p} d={density:g} "
        f"spikes={int(spikes.sum())} cycles={run.stats.total_cycles} out={_digest(spikes)} "
        f"{'ok' if ok else 'MISMATCH'}"
    )
    return ok, desc


def criterion_1(workers: int = 1, cases: int = 200) -> Outcome:
    t0 = time.perf_counter()
    res = _map(conv_case, range(cases), workers)
    return _finish(1, "sparse/dense conv equivalence", [d for _, d in res], all(ok for ok, _ in res), t0, 60)


# 2/3. W2TTFS exactness and WTFC bound -------------------------------------


def _fc_fixture(i: int):
    rng = _rng(2, i)
    window = int(rng.choice([2, 4]))
    c = int(rng.integers(1, 5))
    ho, wo = (int(v) for v in rng.integers(1, 17 // window + 1, 2))
    classes = int(rng.integers(2, 11))
    density = float(rng.choice(DENSITIES + (0.25, 0.75)))
    m = SpikeTensor.random((c, ho * window, wo * window), density, rng)
    weights = _int8(rng, (classes, c * ho * wo))
    return m, window, weights


def w2ttfs_case(i: int) -> tuple[bool, str]:
    m, window, weights = _fc_fixture(i)
    code = w2ttfs_encode(m, m.height // window, m.width // window)
    got = ttfs_fc_exact(code, weights)
    want = fc_ref(avg_pool_ref(m, window), weights)
    ok = got == want and got.argmax() == want.argmax()
    return ok, f"case {i:03d} shape={m.shape} window={window} argmax={got.argmax()} {'ok' if ok else 'MISMATCH'}"


def criterion_2(workers: int = 1, cases: int = 100) -> Outcome:
    t0 = time.perf_counter()
    res = _map(w2ttfs_case, range(cases), workers)
    return _finish(2, "W2TTFS classifier exactness", [d for _, d in res], all(ok for ok, _ in res), t0, 10)


def wtfc_case(i: int) -> tuple[bool, str]:
    m, window, weights = _fc_fixture(i)
    wsq = window * window
    locations = (m.height // window) * (m.width // window)
    run = run_wtfc(m, window, weights)
    exact = exact_scores(ttfs_filter(m, window), weights, locations, wsq).as_fractions()
    bound = run.state.truncation_bound()
    err = max(abs(Fraction(int(a)) - e) for a, e in zip(run.scores.numer, exact))
    ok = err <= bound and run.state.multiplies == 0
    # weights that are multiples of window**2 lose nothing to the shift
    divisible = FixedTensor((weights.values.astype(np.int64) // wsq * wsq).astype(np.int8), FMT)
    run_d = run_wtfc(m, window, divisible)
    exact_d = exact_scores(ttfs_filter(m, window), divisible, locations, wsq)
    ok_d = run_d.scores == exact_d
    ok = ok and ok_d
    return ok, (
        f"case {i:03d} window={window} vld={run.state.vld_total} max_err={err} bound={bound} "
        f"divisible_exact={ok_d} {'ok' if ok else 'MISMATCH'}"
    )


def criterion_3(workers: int = 1, cases: int = 100) -> Outcome:
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("error", HardwareInfeasibleWarning)
        res = _map(wtfc_case, range(cases), workers)
    return _finish(3, "WTFC truncation bound", [d for _, d in res], all(ok for ok, _ in res), t0, 10)


# 4. QK on-the-fly write-back ----------------------------------------------


def qk_case(i: int) -> tuple[bool, str]:
    rng = _rng(4, i)
    c = int(rng.integers(1, 5))
    h, w = (int(v) for v in rng.integers(1, 7, 2))
    residual = bool(rng.integers(0, 2))
    spec = QkBlockSpec(
        q_weights=_int8(rng, (c, c, 1, 1)),
        k_weights=_int8(rng, (c, c, 1, 1)),
        q_lif=_lif(rng),
        k_lif=_lif(rng),
        residual=residual,
        out_lif=_lif(rng) if residual else None,
        axis=MaskAxis(rng.choice(["token", "channel"])),
    )
    x = SpikeTensor.random((c, h, w), float(rng.choice(DENSITIES)), rng)
    want = qk_attention_ref(x, spec)
    try:
        run = run_qk_block(spec, x, one=FMT.one)
    except OrderingViolation as exc:
        return False, f"case {i:03d} ordering violation: {exc}"
    ok = run.writeback.out == want.out and run.zero_extra_writes
    return ok, (
        f"case {i:03d} C={c} HxW={h}x{w} axis={spec.axis.value} residual={int(residual)} "
        f"writes={run.writeback.buffer.writes} baseline={run.baseline_writes} "
        f"out={_digest(want.out.bits)} {'ok' if ok else 'MISMATCH'}"
    )


def criterion_4(workers: int = 1, cases: int = 100) -> Outcome:
    t0 = time.perf_counter()
    res = _map(qk_case, range(cases), workers)
    return _finish(4, "QK on-the-fly write-back", [d for _, d in res], all(ok for ok, _ in res), t0)


# 5. sparsity law -----------------------------------------------------------


def criterion_5(workers: int = 1) -> Outcome:
    t0 = time.perf_counter()
    model = toy_qkfresnet(0)
    lines, ok = [], True
    zero = SpikeTensor.zeros(*model.input_shape)
    ed = run_eventdriven(model, zero)
    st = ed.stats
    z_ok = st.compute_cycles == 0 and ed.synops == 0 and st.events_consumed == 0
    lines.append(f"zero input: compute={st.compute_cycles} synops={ed.synops} {'ok' if z_ok else 'FAIL'}")
    ok &= z_ok

    bits = np.zeros(model.input_shape, dtype=np.uint8)
    bits[0, 5, 7] = 1
    one_spike = SpikeTensor(bits)
    ed = run_eventdriven(model, one_spike)
    ref = run_reference(model, one_spike)
    width = model.layers[0].out_channels
    first = ed.layers[0]
    s_ok = first.synops == 9 * width == first.stats.events_consumed and ed.synops == ref.synops
    lines.append(f"single interior spike: conv1 synops={first.synops} expected={9 * width} {'ok' if s_ok else 'FAIL'}")
    ok &= s_ok

    # bare layers: interior, edge and corner spikes against the clipped-footprint formula
    rng = _rng(5, 0)
    for (y, x), k, s, p, expect in (
        ((4, 4), 3, 1, 1, 9),
        ((0, 4), 3, 1, 1, 6),
        ((0, 0), 3, 1, 1, 4),
        ((4, 4), 1, 1, 0, 1),
        ((3, 3), 3, 2, 1, 4),
    ):
        oc = 5
        m = np.zeros((2, 9, 9), dtype=np.uint8)
        m[1, y, x] = 1
        run = run_layer_eventdriven(LayerSpec.conv(_int8(rng, (oc, 2, k, k)), s, p), SpikeTensor(m), LifParams(FMT.one))
        got = run.stats.events_consumed
        good = got == expect * oc
        ok &= good
        lines.append(f"spike@({y},{x}) K={k} s={s} p={p}: consumed={got} expected={expect * oc} {'ok' if good else 'FAIL'}")
    return _finish(5, "event-driven sparsity law", lines, ok, t0)


# 6. metric arithmetic -------------------------------------------------------

TABLE_GSOPS_W = 52.37
TABLE_EFF_PER_KLUT = 0.73


def criterion_6(workers: int = 1) -> Outcome:
    t0 = time.perf_counter()
    m = RunMetrics.from_fps(6.1e8, 68, 0.792, 71.7)
    g, e = m.gsops_per_watt, m.eff_per_klut
    g_err = abs(g - TABLE_GSOPS_W) / TABLE_GSOPS_W
    e_err = abs(e - TABLE_EFF_PER_KLUT) / TABLE_EFF_PER_KLUT
    ok = g_err <= 0.01 and e_err <= 0.02
    lines = [
        f"gsops_per_watt={g:.6g} target={TABLE_GSOPS_W} rel_err={g_err:.4%}",
        f"eff_per_klut={e:.6g} target={TABLE_EFF_PER_KLUT} rel_err={e_err:.4%}",
    ]
    return _finish(6, "metric arithmetic round trip", lines, ok, t0)


# 7. end-to-end compare -------------------------------------------------------

CONSERVATION = ("fifo_no_loss", "event_conservation", "stats_additivity")


def criterion_7(workers: int = 1, images: int = 4) -> Outcome:
    t0 = time.perf_counter()
    model = toy_qkfresnet(0)
    kinds = {l.kind for l in model.layers}
    xs, labels = random_inputs(model.input_shape, images, 0.3, seed=7, classes=10)
    xs[0] = SpikeTensor.random(model.input_shape, 0.05, np.random.default_rng(70))
    results = run_batch("compare", model, xs, labels, EpaConfig(), workers=workers)
    ok = len(kinds) == 7 and all(
        r.verdict == "identical" and all(r.checks.get(c, False) for c in CONSERVATION) and all(r.checks.values())
        for r in results
    )
    lines = [f"layer kinds present: {len(kinds)}", render_text("compare", model, results, deterministic=True)]
    return _finish(7, "end-to-end compare on toy model", lines, ok, t0, 30)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7)


def run_all(workers: int = 1) -> list[Outcome]:
    return [fn(workers) for fn in CRITERIA]


def criterion_8(worker_counts=(1, 4)) -> tuple[Outcome, list[Outcome]]:
    """Run everything twice on one worker and once per other worker count."""
    t0 = time.perf_counter()
    first = run_all(worker_counts[0])
    runs = {"run-a": first, "run-b": run_all(worker_counts[0])}
    for n in worker_counts[1:]:
        runs[f"workers={n}"] = run_all(n)
    lines, ok = [], True
    base = [o.report for o in first]
    for name, outs in runs.items():
        same = [o.report == b for o, b in zip(outs, base)]
        ok &= all(same)
        lines.append(f"{name}: " + " ".join(f"c{o.number}={'same' if s else 'DIFF'}" for o, s in zip(outs, same)))
    return _finish(8, "byte-identical reports across runs and workers", lines, ok, t0), first
