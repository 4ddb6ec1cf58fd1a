"""Seeded scenario families for the safety and liveness sweeps."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .core import ReplicaId, SystemConfig
from .harness import check_invariants
from .sim.engine import Simulator
from .sim.faults import Crash, PartialGlobalShare, SilencePrimary, WithholdGlobalShare
from .sim.latency import LatencyMatrix
from .sim.scenario import Scenario, Workload

FAULT_CLASSES = ("none", "crash1", "crash_f", "silence", "withhold", "partial")

# (z, n, f) shapes covered by the sweep.
SHAPES = ((2, 4, 1), (3, 4, 1), (4, 4, 1), (2, 7, 2), (4, 7, 2))


def faults_for(kind: str, config: SystemConfig, rng: random.Random) -> tuple:
    z, n, f = config.z, config.n, config.f
    if kind == "none":
        return ()
    if kind == "crash1":
        victim = ReplicaId(rng.randint(1, z), rng.randint(1, n))
        return (Crash(victim, round(rng.uniform(0, 300), 1)),)
    if kind == "crash_f":
        out = []
        for c in range(1, z + 1):
            for local in sorted(rng.sample(range(1, n + 1), f)):
                out.append(Crash(ReplicaId(c, local), round(rng.uniform(0, 300), 1)))
        return tuple(out)
    if kind == "silence":
        return (SilencePrimary(rng.randint(1, z), round(rng.uniform(0, 200), 1)),)
    if kind == "withhold":
        return (WithholdGlobalShare(rng.randint(1, z), rng.randint(1, 3)),)
    if kind == "partial":
        return (PartialGlobalShare(rng.randint(1, z), rng.randint(0, f)),)
    raise ValueError(f"unknown fault class {kind!r}")


def make_case(kind: str, shape: tuple[int, int, int], seed: int, batches: int = 40) -> Scenario:
    z, n, f = shape
    rng = random.Random(f"{kind}/{shape}/{seed}")
    config = SystemConfig(z=z, n=n, f=f, batch_size=10, base_timeout=400.0, checkpoint_period=40, seed=seed)
    latency = LatencyMatrix.table1(z, jitter_pct=rng.choice((0.0, 10.0, 25.0)))
    return Scenario(
        config=config,
        latency=latency,
        workload=Workload(batches=batches, clients=2, depth=rng.randint(1, 2)),
        faults=faults_for(kind, config, rng),
        name=f"{kind}-z{z}n{n}-s{seed}",
    )


def cases(per_class: int, seed: int = 0) -> list[tuple[str, Scenario]]:
    """``per_class`` cases for every fault class, cycling through the shapes."""
    out = []
    for kind in FAULT_CLASSES:
        for i in range(per_class):
            shape = SHAPES[i % len(SHAPES)]
            out.append((kind, make_case(kind, shape, seed + i)))
    return out


@dataclass
class CaseOutcome:
    name: str
    kind: str
    problems: list[str]
    completed: bool
    rounds: int
    fault_free_ms: float
    end_ms: float
    view_changes: int

    @property
    def safe(self) -> bool:
        return not self.problems


def run_case(kind: str, scenario: Scenario, cap_factor: float = 10.0) -> CaseOutcome:
    """Run ``scenario`` capped at ``cap_factor`` times its fault-free duration."""
    baseline = Simulator(scenario.without_faults()).run()
    cap = cap_factor * baseline.end_time
    result = Simulator(replace(scenario, max_time=cap)).run()
    return CaseOutcome(
        name=scenario.name,
        kind=kind,
        problems=check_invariants(result),
        completed=result.completed,
        rounds=result.rounds_executed,
        fault_free_ms=baseline.end_time,
        end_ms=result.end_time,
        view_changes=result.local_view_changes,
    )
