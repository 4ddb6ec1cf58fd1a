"""Deterministic discrete-event simulation of GeoBFT and flat PBFT deployments."""

from .engine import SimResult, Simulator, run
from .faults import (
    Crash,
    DropGlobal,
    FaultBudgetError,
    FaultPlan,
    PartialGlobalShare,
    SilencePrimary,
    WithholdGlobalShare,
)
from .latency import TABLE1, LatencyMatrix, deliver_delay
from .scenario import Scenario, ScenarioError, Workload, load_scenario, parse_scenario

__all__ = [
    "Crash",
    "DropGlobal",
    "FaultBudgetError",
    "FaultPlan",
    "LatencyMatrix",
    "PartialGlobalShare",
    "Scenario",
    "ScenarioError",
    "SilencePrimary",
    "SimResult",
    "Simulator",
    "TABLE1",
    "WithholdGlobalShare",
    "Workload",
    "deliver_delay",
    "load_scenario",
    "parse_scenario",
    "run",
]
