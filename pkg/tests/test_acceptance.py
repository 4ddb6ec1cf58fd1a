"""Acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and
prints a single ``PASS``/``FAIL`` line. Run alone with::

    pytest tests/test_acceptance.py -v -s
"""

from __future__ import annotations

import time
from collections import defaultdict
from pathlib import Path

import pytest

from geobft.codec import DecodeError
from geobft.core import ReplicaId, SystemConfig
from geobft.execution import Ledger, verify_ledger
from geobft.harness import check_invariants, compare_modes, metrics_of, sweep
from geobft.messages import CommitCertificate
from geobft.pbft import verify_certificate
from geobft.sim import LatencyMatrix, Simulator, Workload, load_scenario
from geobft.sim.scenario import Scenario
from geobft.suites import cases, run_case

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"

_outcomes: dict = {}


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"

    return emit


def sweep_outcomes():
    """102 seeded cases, six fault classes; shared by the safety and liveness checks."""
    if "cases" not in _outcomes:
        start = time.perf_counter()
        _outcomes["cases"] = [run_case(kind, sc) for kind, sc in cases(17)]
        _outcomes["elapsed"] = time.perf_counter() - start
    return _outcomes["cases"], _outcomes["elapsed"]


def test_criterion_1_safety(report):
    outcomes, elapsed = sweep_outcomes()
    kinds = {o.kind for o in outcomes}
    unsafe = [f"{o.name}: {o.problems[0]}" for o in outcomes if not o.safe]
    ok = len(outcomes) >= 100 and len(kinds) == 6 and not unsafe and elapsed < 300
    report("1 safety", ok,
           f"{len(outcomes)} scenarios over {len(kinds)} fault classes, {len(unsafe)} unsafe, "
           f"{elapsed:.0f}s (budget 300s) {unsafe[:3]}")


def test_criterion_2_liveness(report):
    outcomes, _ = sweep_outcomes()
    stuck = [f"{o.name} ({o.end_ms:.0f}ms cap {10 * o.fault_free_ms:.0f}ms)" for o in outcomes if not o.completed]
    worst = max(o.end_ms / o.fault_free_ms for o in outcomes)
    report("2 liveness", not stuck,
           f"{len(outcomes) - len(stuck)}/{len(outcomes)} completed within 10x fault-free duration, "
           f"worst slowdown {worst:.2f}x {stuck[:3]}")


def _parse(line: str):
    parts = line.split()
    t, who, event = float(parts[0]), parts[1], parts[2]
    if who == "deliver":
        return t, "deliver", {"src": parts[2], "dst": parts[3], "kind": parts[4]}
    kv = dict(p.split("=", 1) for p in parts[3:] if "=" in p)
    return t, event, dict(kv, node=who)


def test_criterion_3_withhold_recovery(report):
    sc = load_scenario(SCENARIOS / "withhold_z2_n4.ini")
    c = sc.config
    from_round = sc.faults[0].from_round
    result = Simulator(sc, trace=True).run()
    lines = [_parse(l) for l in result.trace if l[0].isdigit()]
    remote = [f"R2.{i}" for i in range(1, c.n + 1)]

    def first_index(pred):
        return next((i for i, (_, ev, kv) in enumerate(lines) if pred(ev, kv)), None)

    timer = first_index(lambda ev, kv: ev == "remote_timeout" and kv["node"] in remote and kv["target"] == "1")
    drvc_senders, drvc_at = set(), None
    rvc_in, rvc_at = 0, None
    for i, (_, ev, kv) in enumerate(lines):
        if ev != "deliver":
            continue
        if kv["kind"] == "DRVC" and kv["src"] in remote:
            drvc_senders.add(kv["src"])
            if drvc_at is None and len(drvc_senders) >= c.n - c.f:
                drvc_at = i
        if kv["kind"] == "RVC" and kv["src"] in remote and kv["dst"].startswith("R1."):
            rvc_in += 1
            if rvc_at is None and rvc_in >= c.f + 1:
                rvc_at = i
    local_vc = first_index(lambda ev, kv: ev == "view_change_start" and kv["node"].startswith("R1."))
    last_round = result.rounds_executed
    needed = {(r, k) for r in remote for k in range(from_round, last_round + 1)}
    buffered_at = None
    for i, (_, ev, kv) in enumerate(lines):
        if ev == "buffered" and kv["origin"] == "1":
            needed.discard((kv["node"], int(kv["round"])))
            if not needed:
                buffered_at = i
                break
    steps = [timer, drvc_at, rvc_at, local_vc, buffered_at]
    ordered = None not in steps and steps == sorted(steps)

    bound_ok = True
    for rep in result.correct.values():
        for requester, n in rep.remote.triggered.items():
            bound_ok &= n <= rep.remote.max_honored_v.get(requester, -1) + 1
    problems = check_invariants(result)
    ok = ordered and bound_ok and not problems and result.completed
    report("3 withhold recovery", ok,
           f"trace positions timer={timer} drvc(n-f)={drvc_at} rvc(f+1)={rvc_at} local_vc={local_vc} "
           f"all_buffered={buffered_at} (rounds {from_round}..{last_round}), replay bound ok={bound_ok}")


@pytest.mark.parametrize("shape", [(2, 4, 1), (4, 7, 2), (4, 13, 4)])
def test_criterion_4_message_counts(shape, report):
    z, n, f = shape
    config = SystemConfig(z=z, n=n, f=f, batch_size=10, base_timeout=1000.0, checkpoint_period=10**6, seed=3)
    sc = Scenario(config, LatencyMatrix.table1(z, jitter_pct=0.0), Workload(batches=6, clients=2, depth=2))
    r = Simulator(sc).run()
    rounds = r.rounds_executed
    per_global = z * (z - 1) * (f + 1)
    per_local = z * ((n - 1) + (n - 1) ** 2 + n * (n - 1) + (z - 1) * (f + 1) * (n - 1))
    ok = (r.completed and rounds > 0 and r.local_view_changes == 0
          and r.global_messages == per_global * rounds and r.local_messages == per_local * rounds)
    report(f"4 message counts z={z} n={n} f={f}", ok,
           f"{rounds} rounds, global {r.global_messages} (expected {per_global * rounds}), "
           f"local {r.local_messages} (expected {per_local * rounds})")


def test_criterion_5_geo_vs_flat(report):
    start = time.perf_counter()
    geo, flat, cmp15 = compare_modes(load_scenario(SCENARIOS / "geo_z4_n15.ini"))
    rows = sweep(load_scenario(SCENARIOS / "geo_z4_n7.ini"), "batch_size", [10, 50, 100, 200, 300],
                 ("geobft", "flat-pbft"))
    elapsed = time.perf_counter() - start
    by = defaultdict(dict)
    for value, mode, m in rows:
        by[value][mode] = m.throughput
    ratios = [by[v]["geobft"] / by[v]["flat-pbft"] for v in sorted(by)]
    monotone = all(a <= b for a, b in zip(ratios, ratios[1:]))
    ok = cmp15.throughput_ratio >= 1.5 and monotone and elapsed < 600
    report("5 geobft vs flat pbft", ok,
           f"n=15 batch 100 ratio {cmp15.throughput_ratio:.2f} ({geo.throughput:.0f} vs {flat.throughput:.0f} txn/s); "
           f"n=7 ratios over batch {sorted(by)}: {[round(x, 2) for x in ratios]}; {elapsed:.0f}s (budget 600s)")


def test_criterion_6_scalability(report):
    base = load_scenario(SCENARIOS / "scale_z4_n6.ini")
    clusters = {v: m.throughput for v, _, m in sweep(base, "clusters", [1, 2, 4])}
    replicas = [m.throughput for _, _, m in sweep(base, "replicas", [4, 7, 13])]
    gain = clusters[4] / clusters[1]
    nonincreasing = all(a >= b for a, b in zip(replicas, replicas[1:]))
    ok = gain >= 1.3 and nonincreasing
    report("6 scalability", ok,
           f"24 replicas, z=1/2/4 throughput {[round(clusters[k]) for k in (1, 2, 4)]} (z=4 / z=1 = {gain:.2f}); "
           f"z=4 n=4/7/13 throughput {[round(x) for x in replicas]}")


def _mutations(raw: bytes):
    for i in range(len(raw)):
        bad = bytearray(raw)
        bad[i] ^= 0x01
        yield i, bytes(bad)


def test_criterion_7_byte_flips(report):
    config = SystemConfig(z=2, n=4, f=1, batch_size=5, base_timeout=400.0, seed=5)
    sc = Scenario(config, LatencyMatrix.table1(2, jitter_pct=0.0), Workload(batches=5, clients=2, depth=1))
    sim = Simulator(sc)
    result = sim.run()
    ledger = result.correct[ReplicaId(1, 2)].executor.ledger
    assert len(ledger) == 10 and verify_ledger(ledger, sim.config, sim.keyring)

    cert_total = cert_rejected = 0
    for block in ledger.blocks[:4]:
        for _, bad in _mutations(block.certificate.to_bytes()):
            cert_total += 1
            try:
                mutated = CommitCertificate.from_bytes(bad)
            except (DecodeError, ValueError):
                cert_rejected += 1
                continue
            cert_rejected += not verify_certificate(sim.config, mutated, sim.keyring)

    lines = ledger.export().splitlines()
    ledger_total = ledger_rejected = 0
    for h, line in enumerate(lines):
        for _, bad in _mutations(bytes.fromhex(line)):
            ledger_total += 1
            text = "\n".join(lines[:h] + [bad.hex()] + lines[h + 1:])
            try:
                mutated = Ledger.load(text)
            except DecodeError:
                ledger_rejected += 1
                continue
            ledger_rejected += not verify_ledger(mutated, sim.config, sim.keyring)
    ok = cert_rejected == cert_total and ledger_rejected == ledger_total
    report("7 byte-flip rejection", ok,
           f"certificates {cert_rejected}/{cert_total} rejected, "
           f"10-block ledger {ledger_rejected}/{ledger_total} rejected")


@pytest.mark.parametrize("name", ["basic_z2_n4", "withhold_z2_n4", "crash_z3_n7"])
def test_criterion_8_determinism(name, report):
    sc = load_scenario(SCENARIOS / f"{name}.ini")
    a = Simulator(sc, trace=True).run()
    b = Simulator(sc, trace=True).run()
    same = a.trace == b.trace and metrics_of(a).record() == metrics_of(b).record()
    golden = (GOLDEN / f"{name}.trace").read_text()
    rendered = "\n".join(a.trace + [metrics_of(a).record()]) + "\n"
    ok = same and rendered == golden
    report(f"8 determinism {name}", ok,
           f"repeat identical={same}, matches golden trace={rendered == golden} ({len(a.trace)} lines)")
