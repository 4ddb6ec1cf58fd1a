import random
from dataclasses import replace
from pathlib import Path

import pytest

from geobft.cli import EXIT_BREACH, EXIT_OK, EXIT_USAGE, main
from geobft.harness import (
    InvariantBreach,
    average,
    compare,
    metrics_from_record,
    run_experiment,
    run_once,
    sweep,
    vary,
)
from geobft.sim import ScenarioError, load_scenario, parse_scenario
from helpers import fake

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

SMALL = """
[system]
z = 2
n = 4
f = 1
batch_size = 10
base_timeout = 400
seed = 2

[latency]
preset = table1
jitter_pct = 10

[workload]
batches = 4
clients = 2
depth = 2
"""


@pytest.fixture
def small_file(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_average_is_order_independent():
    rng = random.Random(3)
    runs = [fake(rng.uniform(0, 1e5), latency_mean_ms=rng.uniform(0, 500)) for _ in range(7)]
    a = average(runs)
    for _ in range(5):
        rng.shuffle(runs)
        assert average(runs) == a
    assert a.seed == "avg"


def test_single_run_average_equals_run():
    sc = parse_scenario(SMALL)
    runs, avg = run_experiment(sc, 1)
    r = runs[0]
    assert avg.throughput == r.throughput and avg.local_messages == r.local_messages
    assert avg.latency_p99_ms == r.latency_p99_ms


def test_repetitions_use_consecutive_seeds():
    runs, avg = run_experiment(parse_scenario(SMALL), 3, seed=10)
    assert [r.seed for r in runs] == [10, 11, 12]
    assert avg.completed


def test_record_round_trip():
    m, _ = run_once(parse_scenario(SMALL))
    assert metrics_from_record(m.record()) == m


def test_compare_self_is_unity():
    m = fake(500.0)
    c = compare(m, m, "k", "k")
    assert c.throughput_ratio == 1.0 and c.latency_ratio == 1.0 and c.global_per_decision_ratio == 1.0


def test_compare_refuses_mismatched_settings():
    with pytest.raises(ScenarioError):
        compare(fake(1.0), fake(2.0), "a", "b")


def test_global_messages_per_decision():
    # z = 4 clusters of n = 15 with f = 4: each certificate goes to f + 1 = 5
    # replicas of each of the 3 other clusters, 15 messages per decision.
    z, f = 4, 4
    per_round = z * (z - 1) * (f + 1)
    m = fake(1.0, global_messages=per_round * 10, rounds_executed=10)
    c = compare(m, replace(m, mode="flat-pbft", global_messages=0), z=z)
    assert c.geobft_global_per_decision == 15.0


def test_vary_clusters_keeps_population():
    sc = load_scenario(SCENARIOS / "scale_z4_n6.ini")
    v = vary(sc, "clusters", 2)
    assert (v.config.z, v.config.n, v.config.f) == (2, 12, 3)
    assert v.workload.depth * 2 == sc.workload.depth * 4
    assert v.workload.batches * 2 == sc.workload.batches * 4
    with pytest.raises(ScenarioError):
        vary(sc, "clusters", 5)
    with pytest.raises(ScenarioError):
        vary(sc, "colour", 1)


def test_vary_replicas_recomputes_f():
    sc = parse_scenario(SMALL)
    assert vary(sc, "replicas", 7).config.f == 2
    assert vary(sc, "batch_size", 50).config.batch_size == 50


def test_single_value_sweep():
    rows = sweep(parse_scenario(SMALL), "batch_size", [5])
    assert len(rows) == 1 and rows[0][0] == 5 and rows[0][2].completed


def test_breach_is_reported(monkeypatch):
    import geobft.harness as h

    monkeypatch.setattr(h, "check_invariants", lambda result: ["forced"])
    with pytest.raises(InvariantBreach) as info:
        run_once(parse_scenario(SMALL))
    assert info.value.problems == ["forced"]


# -- command line ----------------------------------------------------------------

def test_cli_run(small_file, tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert main(["run", "--scenario", str(small_file), "--repetitions", "3", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    assert sum("record=run" in l for l in lines) == 3 and lines[-1].startswith("record=average")
    assert capsys.readouterr().out.splitlines() == lines


def test_cli_run_is_deterministic(small_file, capsys):
    main(["run", "--scenario", str(small_file), "--seed", "4", "--jitter", "25"])
    first = capsys.readouterr().out
    main(["run", "--scenario", str(small_file), "--seed", "4", "--jitter", "25"])
    assert capsys.readouterr().out == first


def test_cli_usage_errors(small_file, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("n = 4", "n = 3"))
    assert main(["run", "--scenario", str(bad)]) == EXIT_USAGE
    assert main(["run", "--scenario", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    assert main(["run", "--scenario", str(small_file), "--repetitions", "0"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["explode"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["sweep", "--scenario", str(small_file), "--axis", "colour", "--values", "1"])
    assert e.value.code == EXIT_USAGE
    assert main(["sweep", "--scenario", str(small_file), "--axis", "batch_size", "--values", "x"]) == EXIT_USAGE


def test_cli_breach_writes_trace(small_file, tmp_path, monkeypatch, capsys):
    import geobft.harness as h

    monkeypatch.setattr(h, "check_invariants", lambda result: ["forced"])
    out = tmp_path / "run.txt"
    assert main(["run", "--scenario", str(small_file), "--out", str(out)]) == EXIT_BREACH
    trace = tmp_path / "run.trace"
    assert trace.exists() and trace.read_text().startswith("problem: forced")
    assert "record=breach" in capsys.readouterr().out


def test_cli_ledger_round_trip(small_file, tmp_path, capsys):
    ledger = tmp_path / "ledger.txt"
    assert main(["run", "--scenario", str(small_file), "--export-ledger", str(ledger)]) == EXIT_OK
    capsys.readouterr()
    assert main(["verify-ledger", "--scenario", str(small_file), "--ledger", str(ledger)]) == EXIT_OK
    assert "accepted=True" in capsys.readouterr().out
    lines = ledger.read_text().splitlines()
    # Flip one hex digit inside the second block.
    row = lines[1]
    i = len(row) // 2
    lines[1] = row[:i] + ("0" if row[i] != "0" else "1") + row[i + 1:]
    ledger.write_text("\n".join(lines) + "\n")
    assert main(["verify-ledger", "--scenario", str(small_file), "--ledger", str(ledger)]) == EXIT_BREACH
    assert "accepted=False" in capsys.readouterr().out
    ledger.write_text("not hex\n")
    assert main(["verify-ledger", "--scenario", str(small_file), "--ledger", str(ledger)]) == EXIT_BREACH


def test_cli_compare_scenario_and_files(small_file, tmp_path, capsys):
    assert main(["compare", "--scenario", str(small_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "record=compare" in out and "throughput_ratio=" in out
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    main(["run", "--scenario", str(small_file), "--out", str(a)])
    main(["run", "--scenario", str(small_file), "--out", str(b), "--mode", "flat-pbft"])
    capsys.readouterr()
    assert main(["compare", str(a), str(a)]) == EXIT_OK
    assert "throughput_ratio=1 " in capsys.readouterr().out
    assert main(["compare", str(a), str(b), "--clusters", "2"]) == EXIT_OK
    assert main(["compare", str(a)]) == EXIT_USAGE
    assert main(["compare"]) == EXIT_USAGE


def test_cli_sweep_and_trace(small_file, capsys):
    assert main(["sweep", "--scenario", str(small_file), "--axis", "batch_size", "--values", "5,10",
                 "--mode", "geobft"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("record=sweep") == 2
    assert main(["trace", "--scenario", str(small_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[-1].startswith("record=trace") and "completed=True" in out


def test_module_entry_point(small_file):
    import subprocess
    import sys

    p = subprocess.run([sys.executable, "-m", "geobft", "run", "--scenario", str(small_file)],
                       capture_output=True, text=True)
    assert p.returncode == 0 and "record=average" in p.stdout
