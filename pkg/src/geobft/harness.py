"""Experiment harness: run scenarios, check invariants, aggregate metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np

from .core import SystemConfig
from .execution import replay, verify_ledger
from .sim.engine import SimResult, Simulator
from .sim.scenario import Scenario, ScenarioError


class InvariantBreach(RuntimeError):
    def __init__(self, problems: list[str], result: SimResult | None = None):
        super().__init__("; ".join(problems[:5]))
        self.problems = problems
        self.result = result


@dataclass(frozen=True)
class Metrics:
    scenario: str
    mode: str
    seed: int | str
    completed: bool
    throughput: float
    latency_mean_ms: float
    latency_p50_ms: float
    latency_p90_ms: float
    latency_p99_ms: float
    local_messages: int
    global_messages: int
    client_messages: int
    rejected_messages: int
    local_view_changes: int
    remote_view_changes: int
    rounds_executed: int
    accepted_txns: int
    duration_ms: float
    trace_digest: str

    def record(self, kind: str = "run") -> str:
        parts = [f"record={kind}"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float):
                v = repr(v)
            parts.append(f"{f.name}={v}")
        return " ".join(parts)

    @property
    def total_messages(self) -> int:
        return self.local_messages + self.global_messages


def parse_record(line: str) -> dict[str, str]:
    out = {}
    for tok in line.split():
        k, _, v = tok.partition("=")
        out[k] = v
    return out


def metrics_from_record(line: str) -> Metrics:
    raw = parse_record(line)
    kwargs = {}
    for f in fields(Metrics):
        v = raw.get(f.name)
        if v is None:
            raise ValueError(f"record lacks {f.name}")
        if f.type in ("int",):
            # Averages of counters are fractional.
            kwargs[f.name] = int(v) if v.lstrip("-").isdigit() else float(v)
        elif f.type in ("float",):
            kwargs[f.name] = float(v)
        elif f.type in ("bool",):
            kwargs[f.name] = v == "True"
        elif f.name == "seed":
            kwargs[f.name] = int(v) if v.isdigit() else v
        else:
            kwargs[f.name] = v
    return Metrics(**kwargs)


def metrics_of(result: SimResult) -> Metrics:
    lat = np.asarray(result.latencies_ms, dtype=float)
    if lat.size:
        mean = float(lat.mean())
        p50, p90, p99 = (float(x) for x in np.percentile(lat, [50, 90, 99]))
    else:
        mean = p50 = p90 = p99 = 0.0
    return Metrics(
        scenario=result.scenario.name,
        mode=result.scenario.mode,
        seed=result.seed,
        completed=result.completed,
        throughput=result.throughput,
        latency_mean_ms=mean,
        latency_p50_ms=p50,
        latency_p90_ms=p90,
        latency_p99_ms=p99,
        local_messages=result.local_messages,
        global_messages=result.global_messages,
        client_messages=result.client_messages,
        rejected_messages=result.rejected,
        local_view_changes=result.local_view_changes,
        remote_view_changes=result.remote_view_changes,
        rounds_executed=result.rounds_executed,
        accepted_txns=result.accepted_txns,
        duration_ms=result.duration_ms,
        trace_digest=result.trace_digest,
    )


def average(records: Sequence[Metrics]) -> Metrics:
    """Field-wise mean; exact sums make the result independent of run order."""
    if not records:
        raise ValueError("nothing to average")
    first = records[0]
    out = {}
    for f in fields(Metrics):
        values = [getattr(r, f.name) for r in records]
        if f.name in ("scenario", "mode"):
            out[f.name] = first.scenario if f.name == "scenario" else first.mode
        elif f.name == "seed":
            out[f.name] = "avg"
        elif f.name == "completed":
            out[f.name] = all(values)
        elif f.name == "trace_digest":
            out[f.name] = "-"
        else:
            out[f.name] = math.fsum(values) / len(values)
    return Metrics(**out)


def effective_config(result: SimResult) -> SystemConfig:
    sc = result.scenario
    if sc.mode == "flat-pbft":
        total = sc.config.z * sc.config.n
        return replace(sc.config, z=1, n=total, f=(total - 1) // 3)
    return sc.config


def check_invariants(result: SimResult, keyring=None, verify_ledgers: bool = True) -> list[str]:
    """Safety checks over the final states of all non-faulty replicas."""
    problems = list(result.violations)
    problems += [f"alarm {a}" for a in result.alarms]
    correct = result.correct
    config = effective_config(result)
    reference: dict[int, bytes] = {}
    owner: dict[int, object] = {}
    for r, rep in sorted(correct.items()):
        for b in rep.executor.ledger:
            hdr = b.header_bytes()
            if b.height in reference:
                if reference[b.height] != hdr:
                    problems.append(f"divergence at height {b.height}: {owner[b.height]} vs {r}")
            else:
                reference[b.height] = hdr
                owner[b.height] = r
    # Every non-faulty replica buffers the same request for a slot.
    slots: dict[tuple[int, int], bytes] = {}
    for r, rep in sorted(correct.items()):
        for key, share in rep.shares.shares.items():
            d = share.request.digest
            if slots.setdefault(key, d) != d:
                problems.append(f"share disagreement for {key} at {r}")
    if verify_ledgers:
        kr = keyring if keyring is not None else next(iter(result.replicas.values())).keyring
        for r, rep in sorted(correct.items()):
            verdict = verify_ledger(rep.executor.ledger, config, kr)
            if not verdict:
                problems.append(f"ledger of {r} rejected at height {verdict.height}: {verdict.reason}")
            if replay(rep.executor.ledger).store_digest() != rep.executor.state.store_digest():
                problems.append(f"ledger replay of {r} does not reproduce its store")
    # Replay protection for remote view-changes.
    for r, rep in correct.items():
        for requester, n_triggered in rep.remote.triggered.items():
            bound = rep.remote.max_honored_v.get(requester, -1) + 1
            if n_triggered > bound:
                problems.append(f"{r}: {n_triggered} remote view-changes from {requester} exceed bound {bound}")
    return problems


def run_once(scenario: Scenario, seed: int | None = None, *, trace: bool = False,
             max_time: float | None = None, check: bool = True) -> tuple[Metrics, SimResult]:
    result = Simulator(scenario, seed, trace, max_time).run()
    if check:
        problems = check_invariants(result)
        if problems:
            raise InvariantBreach(problems, result)
    return metrics_of(result), result


def run_experiment(scenario: Scenario, repetitions: int = 1, seed: int | None = None,
                   check: bool = True) -> tuple[list[Metrics], Metrics]:
    """Run seeds ``seed, seed + 1, ...``; returns per-run records and their average."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    base = scenario.config.seed if seed is None else seed
    runs = [run_once(scenario, base + i, check=check)[0] for i in range(repetitions)]
    return runs, average(runs)


@dataclass(frozen=True)
class Comparison:
    throughput_ratio: float
    latency_ratio: float
    global_per_decision_ratio: float
    geobft_global_per_decision: float
    baseline_global_per_decision: float

    def record(self) -> str:
        return " ".join(["record=compare"] + [f"{k}={v:.6g}" for k, v in asdict(self).items()])


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare(a: Metrics, b: Metrics, key_a: str | None = None, key_b: str | None = None,
            z: int = 1) -> Comparison:
    """Ratios of ``a`` over ``b``; refuses runs of different scenarios."""
    if key_a is not None and key_b is not None and key_a != key_b:
        raise ScenarioError("runs come from different system/latency/workload settings")
    ga = a.global_messages / max(1, a.rounds_executed * (z if a.mode == "geobft" else 1))
    gb = b.global_messages / max(1, b.rounds_executed * (z if b.mode == "geobft" else 1))
    return Comparison(
        throughput_ratio=_ratio(a.throughput, b.throughput),
        latency_ratio=_ratio(a.latency_mean_ms, b.latency_mean_ms),
        global_per_decision_ratio=_ratio(ga, gb),
        geobft_global_per_decision=ga,
        baseline_global_per_decision=gb,
    )


def compare_modes(scenario: Scenario, repetitions: int = 1, seed: int | None = None,
                  check: bool = True) -> tuple[Metrics, Metrics, Comparison]:
    _, geo = run_experiment(scenario.with_mode("geobft"), repetitions, seed, check)
    _, flat = run_experiment(scenario.with_mode("flat-pbft"), repetitions, seed, check)
    key = scenario.comparable_key()
    return geo, flat, compare(geo, flat, key, key, scenario.config.z)


AXES = ("clusters", "replicas", "batch_size")


def vary(scenario: Scenario, axis: str, value: int) -> Scenario:
    c = scenario.config
    if axis == "clusters":
        total = c.z * c.n
        if value < 1 or total % value:
            raise ScenarioError(f"{total} replicas do not split evenly into {value} clusters")
        n = total // value
        config = replace(c, z=value, n=n, f=(n - 1) // 3)
        if len(scenario.latency) < value:
            raise ScenarioError("latency matrix has too few regions")
        # The client population stays fixed and is spread evenly over the regions.
        w = scenario.workload
        depth, batches = w.depth * c.z, w.batches * c.z
        if depth % value or batches % value:
            raise ScenarioError(f"workload of {batches} batches at depth {depth} does not split over {value} regions")
        scenario = replace(scenario, workload=replace(w, depth=depth // value, batches=batches // value))
    elif axis == "replicas":
        config = replace(c, n=value, f=(value - 1) // 3)
    elif axis == "batch_size":
        config = replace(c, batch_size=value)
    else:
        raise ScenarioError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    return replace(scenario, config=config, name=f"{scenario.name}-{axis}{value}")


def sweep(scenario: Scenario, axis: str, values: Iterable[int], modes: Sequence[str] = ("geobft",),
          repetitions: int = 1, seed: int | None = None, check: bool = True) -> list[tuple[int, str, Metrics]]:
    rows = []
    for value in values:
        varied = vary(scenario, axis, value)
        for mode in modes:
            _, avg = run_experiment(varied.with_mode(mode), repetitions, seed, check)
            rows.append((value, mode, avg))
    return rows


def format_table(rows: list[tuple[int, str, Metrics]], axis: str) -> str:
    head = f"{axis:>10} {'mode':>10} {'throughput':>12} {'latency_ms':>11} {'global':>8} {'local':>9} {'rounds':>7}"
    lines = [head]
    for value, mode, m in rows:
        lines.append(
            f"{value:>10} {mode:>10} {m.throughput:>12.1f} {m.latency_mean_ms:>11.2f} "
            f"{m.global_messages:>8.0f} {m.local_messages:>9.0f} {m.rounds_executed:>7.0f}"
        )
    return "\n".join(lines)
