import numpy as np
import pytest

from neuralsim import runner
from neuralsim.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_LOAD, EXIT_OK, main
from neuralsim.container import InputBundle, load_inputs, load_model, save_inputs, save_model
from neuralsim.generate import toy_qkfresnet
from neuralsim.reference import run_reference
from neuralsim.simulator import run_eventdriven
from neuralsim.spike_core import SpikeTensor


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--seed", "3", "--model-out", str(root / "m"), "--input-out", str(root / "in.bin"), "--count", "3"]) == 0
    return root


def run(fixture_dir, tmp_path, *extra):
    report = tmp_path / "report.txt"
    code = main(["run", "--model", str(fixture_dir / "m"), "--input", str(fixture_dir / "in.bin"), "--report", str(report), *extra])
    return code, report.read_text() if report.exists() else ""


def test_generate_is_seeded(fixture_dir, tmp_path):
    main(["generate", "--seed", "3", "--model-out", str(tmp_path / "m"), "--input-out", str(tmp_path / "in.bin"), "--count", "3"])
    for name in sorted(p.name for p in (fixture_dir / "m").iterdir()):
        assert (fixture_dir / "m" / name).read_bytes() == (tmp_path / "m" / name).read_bytes()
    assert (fixture_dir / "in.bin").read_bytes() == (tmp_path / "in.bin").read_bytes()


def test_compare_identical_and_deterministic(fixture_dir, tmp_path):
    code, a = run(fixture_dir, tmp_path, "--mode", "compare", "--deterministic-output")
    assert code == EXIT_OK
    assert "verdict: identical" in a and "divergent" not in a and "generated:" not in a
    _, b = run(fixture_dir, tmp_path, "--mode", "compare", "--deterministic-output", "--workers", "2")
    assert a == b


def test_timestamp_without_flag(fixture_dir, tmp_path):
    _, text = run(fixture_dir, tmp_path, "--mode", "reference")
    assert "generated:" in text


def test_reference_accuracy_tally(fixture_dir, tmp_path):
    code, text = run(fixture_dir, tmp_path, "--mode", "reference", "--deterministic-output")
    assert code == EXIT_OK
    model = load_model(fixture_dir / "m")
    bundle = load_inputs(fixture_dir / "in.bin")
    hits = sum(
        int(np.argmax(run_reference(model, x).scores.numer)) == label for x, label in zip(bundle.images, bundle.labels)
    )
    assert f"({hits}/3)" in text


def test_eventdriven_zero_input_reports_no_compute(tmp_path):
    model = toy_qkfresnet(0)
    save_model(model, tmp_path / "m")
    save_inputs(InputBundle([SpikeTensor.zeros(*model.input_shape)]), tmp_path / "z.bin")
    out = tmp_path / "r.csv"
    code = main(["run", "--model", str(tmp_path / "m"), "--input", str(tmp_path / "z.bin"), "--mode", "eventdriven", "--emit", "csv", "--report", str(out)])
    assert code == EXIT_OK
    header, *rows = out.read_text().splitlines()
    cols = header.split(",")
    total = dict(zip(cols, rows[-1].split(",")))
    assert total["layer"] == "total" and total["compute_cycles"] == "0" and total["synops"] == "0"
    assert len(rows) == len(model.layers) + 1


def test_csv_totals_equal_layer_sums(fixture_dir, tmp_path):
    code, text = run(fixture_dir, tmp_path, "--mode", "eventdriven", "--emit", "csv")
    assert code == EXIT_OK
    lines = text.splitlines()
    cols = lines[0].split(",")
    rows = [dict(zip(cols, l.split(","))) for l in lines[1:]]
    for img in {r["image"] for r in rows}:
        layer_rows = [r for r in rows if r["image"] == img and r["layer"] != "total"]
        total = next(r for r in rows if r["image"] == img and r["layer"] == "total")
        for key in ("synops", "total_cycles", "compute_cycles"):
            assert sum(int(r[key]) for r in layer_rows) == int(total[key])


def test_divergence_exit_code(fixture_dir, tmp_path, monkeypatch):
    def broken(model, x, cfg):
        res = run_eventdriven(model, x, cfg)
        res.checks["fifo_no_loss"] = False
        return res

    monkeypatch.setattr(runner, "run_eventdriven", broken)
    code, text = run(fixture_dir, tmp_path, "--mode", "compare", "--deterministic-output")
    assert code == EXIT_DIVERGED and "verdict: divergent" in text


def test_load_errors(fixture_dir, tmp_path):
    assert main(["run", "--model", str(tmp_path / "missing"), "--input", str(fixture_dir / "in.bin")]) == EXIT_LOAD
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["run", "--model", str(fixture_dir / "m"), "--input", str(bad)]) == EXIT_LOAD
    other = tmp_path / "other.bin"
    save_inputs(InputBundle([SpikeTensor.zeros(1, 4, 4)]), other)
    assert main(["run", "--model", str(fixture_dir / "m"), "--input", str(other)]) == EXIT_LOAD


def test_config_errors(fixture_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"s_fifo_depth": 0}')
    code, _ = run(fixture_dir, tmp_path, "--config", str(cfg))
    assert code == EXIT_CONFIG
    code, _ = run(fixture_dir, tmp_path, "--workers", "0")
    assert code == EXIT_CONFIG


def test_config_changes_cycles_not_results(fixture_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"pe_rows": 2, "pe_cols": 2, "power_w": 1.0}')
    code, slow = run(fixture_dir, tmp_path, "--config", str(cfg), "--deterministic-output")
    assert code == EXIT_OK and "power_w: 1\n" in slow
    _, fast = run(fixture_dir, tmp_path, "--deterministic-output")
    pick = lambda t, k: [l for l in t.splitlines() if l.startswith(k)]
    assert pick(slow, "reference_class") == pick(fast, "reference_class")
    assert pick(slow, "total_cycles") != pick(fast, "total_cycles")
