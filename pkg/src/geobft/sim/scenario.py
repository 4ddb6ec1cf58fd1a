"""Scenario files.

A scenario is an INI document::

    [system]
    z = 2
    n = 4
    f = 1
    batch_size = 10
    base_timeout = 500
    checkpoint_period = 600
    seed = 7

    [latency]
    preset = table1            ; or: uniform
    regions = Oregon, Iowa
    intra_ms = 0.5
    jitter_pct = 10
    ; explicit matrices instead of a preset, rows separated by ';'
    ; rtt = 0 38; 38 0
    ; bandwidth = 7998 669; 669 10004

    [workload]
    batches = 20               ; client batches per cluster
    clients = 4                ; clients per cluster
    depth = 4                  ; outstanding batches per cluster
    keyspace = 1000

    [faults]
    behaviors =
        crash R1.2 at 0
        silence 1 at 0
        withhold 1 from 3
        partial 1 k 1
        drop 0.05

    [mode]
    mode = geobft              ; or flat-pbft

An optional ``[cpu]`` section overrides the per-operation costs of
:class:`CpuModel` (microseconds) and ``[run]`` holds ``window``,
``max_time`` and ``suite``.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..core import ConfigError, ReplicaId, SystemConfig
from .faults import (
    Crash,
    DropGlobal,
    FaultBudgetError,
    FaultPlan,
    PartialGlobalShare,
    SilencePrimary,
    WithholdGlobalShare,
)
from .latency import LatencyMatrix

MODES = ("geobft", "flat-pbft")


class ScenarioError(ValueError):
    """The scenario text is malformed or describes an invalid system."""


@dataclass(frozen=True)
class Workload:
    batches: int = 10
    clients: int = 1
    depth: int = 1
    keyspace: int = 1000
    client_timeout: float | None = None  # defaults to 4 * base_timeout

    def __post_init__(self) -> None:
        if self.batches < 0 or self.clients < 1 or self.depth < 1 or self.keyspace < 1:
            raise ScenarioError("workload values must be positive")


@dataclass(frozen=True)
class CpuModel:
    """Per-operation processing costs in microseconds."""

    message_us: float = 10.0
    verify_us: float = 40.0
    sign_us: float = 20.0
    mac_us: float = 1.0
    txn_us: float = 1.0
    enabled: bool = True

    def cost_ms(self, verifies: int, macs: int, signs: int, txns: int) -> float:
        if not self.enabled:
            return 0.0
        us = (
            self.message_us
            + verifies * self.verify_us
            + macs * self.mac_us
            + signs * self.sign_us
            + txns * self.txn_us
        )
        return us / 1000.0


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    latency: LatencyMatrix
    workload: Workload = field(default_factory=Workload)
    faults: tuple = ()
    mode: str = "geobft"
    cpu: CpuModel = field(default_factory=CpuModel)
    window: int = 64
    max_time: float | None = None
    suite: str = "hash"
    name: str = "scenario"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if len(self.latency) < self.config.z:
            raise ScenarioError(
                f"latency section names {len(self.latency)} regions for z={self.config.z} clusters"
            )
        try:
            FaultPlan(self.faults, self.config)
        except FaultBudgetError as exc:
            raise ScenarioError(str(exc)) from exc
        if self.mode == "flat-pbft" and any(not isinstance(b, (Crash, DropGlobal)) for b in self.faults):
            raise ScenarioError("flat-pbft mode supports only crash and drop faults")

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, config=replace(self.config, seed=seed))

    def with_mode(self, mode: str) -> "Scenario":
        return replace(self, mode=mode)

    def without_faults(self) -> "Scenario":
        return replace(self, faults=())

    def with_jitter(self, pct: float) -> "Scenario":
        return replace(self, latency=replace(self.latency, jitter_pct=pct))

    def comparable_key(self) -> str:
        """Hash of the system, latency and workload settings (mode and seed excluded)."""
        c = self.config
        parts = [
            (c.z, c.n, c.f, c.batch_size, c.base_timeout, c.checkpoint_period),
            self.latency,
            self.workload,
            self.cpu,
            self.window,
        ]
        return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


_REPLICA = re.compile(r"^R?(\d+)\.(\d+)$", re.IGNORECASE)


def parse_replica(text: str) -> ReplicaId:
    m = _REPLICA.match(text.strip())
    if not m:
        raise ScenarioError(f"bad replica id {text!r}; expected R<cluster>.<local>")
    return ReplicaId(int(m.group(1)), int(m.group(2)))


def parse_behavior(line: str):
    words = line.split()
    if not words:
        raise ScenarioError("empty fault line")
    verb, args = words[0].lower(), words[1:]

    def kw(name: str, default=None):
        if name in args:
            i = args.index(name)
            if i + 1 >= len(args):
                raise ScenarioError(f"missing value after {name!r} in {line!r}")
            return args[i + 1]
        if default is None:
            raise ScenarioError(f"missing {name!r} in {line!r}")
        return default

    try:
        if verb == "crash":
            return Crash(parse_replica(args[0]), float(kw("at", "0")))
        if verb in ("silence", "silence_primary"):
            return SilencePrimary(int(args[0]), float(kw("at", "0")))
        if verb == "withhold":
            return WithholdGlobalShare(int(args[0]), int(kw("from", "1")))
        if verb == "partial":
            return PartialGlobalShare(int(args[0]), int(kw("k")))
        if verb == "drop":
            return DropGlobal(float(args[0]))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad fault line {line!r}: {exc}") from exc
    raise ScenarioError(f"unknown fault behaviour {verb!r}")


def _matrix(text: str) -> tuple[tuple[float, ...], ...]:
    try:
        return tuple(tuple(float(x) for x in row.split()) for row in text.split(";") if row.strip())
    except ValueError as exc:
        raise ScenarioError(f"bad matrix {text!r}") from exc


def _num(section, key, kind, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError as exc:
        raise ScenarioError(f"[{section.name}] {key} = {raw!r} is not a valid {kind.__name__}") from exc


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc
    if "system" not in cp:
        raise ScenarioError("missing [system] section")
    s = cp["system"]
    for key in ("z", "n", "f"):
        if key not in s:
            raise ScenarioError(f"[system] is missing {key}")
    try:
        config = SystemConfig(
            z=_num(s, "z", int, 1),
            n=_num(s, "n", int, 4),
            f=_num(s, "f", int, 1),
            batch_size=_num(s, "batch_size", int, 100),
            base_timeout=_num(s, "base_timeout", float, 500.0),
            checkpoint_period=_num(s, "checkpoint_period", int, 600),
            seed=_num(s, "seed", int, 0),
        )
    except ConfigError as exc:
        raise ScenarioError(str(exc)) from exc

    lat = cp["latency"] if "latency" in cp else None
    intra = _num(lat, "intra_ms", float, 0.5)
    jitter = _num(lat, "jitter_pct", float, 10.0)
    try:
        if lat is not None and "rtt" in lat:
            rtt = _matrix(lat["rtt"])
            bw = _matrix(lat["bandwidth"]) if "bandwidth" in lat else None
            names = [x.strip() for x in lat.get("regions", "").split(",") if x.strip()]
            names = names or [f"region{i + 1}" for i in range(len(rtt))]
            latency = LatencyMatrix(tuple(names), rtt, bw, intra, jitter)
        else:
            preset = (lat.get("preset", "table1") if lat is not None else "table1").strip().lower()
            if preset == "table1":
                regions = lat.get("regions") if lat is not None else None
                names = [x for x in regions.split(",") if x.strip()] if regions else config.z
                latency = LatencyMatrix.table1(names, intra, jitter)
            elif preset == "uniform":
                latency = LatencyMatrix.uniform(config.z, _num(lat, "rtt_ms", float, 0.0), intra, jitter)
            else:
                raise ScenarioError(f"unknown latency preset {preset!r}")
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc

    w = cp["workload"] if "workload" in cp else None
    workload = Workload(
        batches=_num(w, "batches", int, 10),
        clients=_num(w, "clients", int, 1),
        depth=_num(w, "depth", int, 1),
        keyspace=_num(w, "keyspace", int, 1000),
        client_timeout=_num(w, "client_timeout", float, None),
    )

    faults = []
    if "faults" in cp:
        for line in cp["faults"].get("behaviors", "").splitlines():
            if line.strip():
                faults.append(parse_behavior(line))

    mode = cp["mode"].get("mode", "geobft").strip() if "mode" in cp else "geobft"

    cpu_defaults = CpuModel()
    c = cp["cpu"] if "cpu" in cp else None
    cpu = CpuModel(**{
        fl.name: _num(c, fl.name, type(getattr(cpu_defaults, fl.name)), getattr(cpu_defaults, fl.name))
        for fl in fields(CpuModel)
    })

    r = cp["run"] if "run" in cp else None
    return Scenario(
        config=config,
        latency=latency,
        workload=workload,
        faults=tuple(faults),
        mode=mode,
        cpu=cpu,
        window=_num(r, "window", int, 64),
        max_time=_num(r, "max_time", float, None),
        suite=(r.get("suite", "hash").strip() if r is not None else "hash"),
        name=name,
    )


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc}") from exc
    return parse_scenario(text, name=p.stem)
