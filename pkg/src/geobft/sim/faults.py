"""Byzantine and crash behaviours injected by the simulator.

Every behaviour except :class:`DropGlobal` names a faulty replica; a plan
is rejected when it names more than ``f`` faulty replicas in one cluster.
Behaviours act on the sending side: a filtered message is never sent and
is therefore not counted.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..core import ReplicaId, SystemConfig
from ..messages import GlobalShare, NewView, PrePrepare


class FaultBudgetError(ValueError):
    """The plan exceeds f faulty replicas in some cluster or is out of range."""


@dataclass(frozen=True)
class Crash:
    replica: ReplicaId
    at_time: float = 0.0


@dataclass(frozen=True)
class SilencePrimary:
    """The initial primary of ``cluster`` stops sending proposals."""

    cluster: int
    at_time: float = 0.0


@dataclass(frozen=True)
class WithholdGlobalShare:
    """The initial primary certifies normally but never shares from ``from_round`` on."""

    cluster: int
    from_round: int = 1


@dataclass(frozen=True)
class PartialGlobalShare:
    """The initial primary shares with only ``k`` of the f + 1 targets per cluster."""

    cluster: int
    k: int = 1


@dataclass(frozen=True)
class DropGlobal:
    """Each inter-cluster message is lost with ``probability``."""

    probability: float


Behavior = Crash | SilencePrimary | WithholdGlobalShare | PartialGlobalShare | DropGlobal


def faulty_replica(b: Behavior) -> ReplicaId | None:
    if isinstance(b, Crash):
        return b.replica
    if isinstance(b, (SilencePrimary, WithholdGlobalShare, PartialGlobalShare)):
        return ReplicaId(b.cluster, 1)
    return None


class FaultPlan:
    def __init__(self, behaviors, config: SystemConfig, seed: int = 0) -> None:
        self.behaviors = tuple(behaviors)
        self.config = config
        self._rng = random.Random(seed ^ 0x5EED_D40B)
        per_cluster: dict[int, set[ReplicaId]] = {}
        self.crash_at: dict[ReplicaId, float] = {}
        self.silence: dict[ReplicaId, float] = {}
        self.withhold: dict[ReplicaId, int] = {}
        self.partial: dict[ReplicaId, int] = {}
        self.drop_probability = 0.0
        for b in self.behaviors:
            if isinstance(b, DropGlobal):
                if not 0.0 <= b.probability <= 1.0:
                    raise FaultBudgetError("drop probability must lie in [0, 1]")
                self.drop_probability = max(self.drop_probability, b.probability)
                continue
            r = faulty_replica(b)
            if not (1 <= r.cluster <= config.z and 1 <= r.local <= config.n):
                raise FaultBudgetError(f"{b} names a replica outside the system")
            per_cluster.setdefault(r.cluster, set()).add(r)
            if isinstance(b, Crash):
                self.crash_at[r] = min(b.at_time, self.crash_at.get(r, b.at_time))
            elif isinstance(b, SilencePrimary):
                self.silence[r] = b.at_time
            elif isinstance(b, WithholdGlobalShare):
                self.withhold[r] = b.from_round
            elif isinstance(b, PartialGlobalShare):
                if not 0 <= b.k < config.f + 1:
                    raise FaultBudgetError(f"partial sharing needs k < f + 1, got k={b.k}")
                self.partial[r] = b.k
        for cluster, members in per_cluster.items():
            if len(members) > config.f:
                raise FaultBudgetError(
                    f"cluster {cluster} has {len(members)} faulty replicas, at most f={config.f} allowed"
                )
        self.faulty: frozenset[ReplicaId] = frozenset(r for s in per_cluster.values() for r in s)

    def crashed(self, node, now: float) -> bool:
        at = self.crash_at.get(node)
        return at is not None and now >= at

    def allow_send(self, src, dst, msg, now: float) -> bool:
        if self.crashed(src, now):
            return False
        if src in self.silence and now >= self.silence[src] and isinstance(msg, (PrePrepare, NewView)):
            return False
        if isinstance(msg, GlobalShare) and msg.origin_cluster == getattr(src, "cluster", None):
            if src in self.withhold and msg.round >= self.withhold[src]:
                return False
            if src in self.partial and dst.local > self.partial[src]:
                return False
        return True

    def drop(self, src_region: int, dst_region: int) -> bool:
        if self.drop_probability <= 0.0 or src_region == dst_region:
            return False
        return self._rng.random() < self.drop_probability
