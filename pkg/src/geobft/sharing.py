"""Optimistic inter-cluster sharing of certified requests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .core import ReplicaId, Round, SystemConfig
from .effects import Effects
from .messages import CommitCertificate, GlobalShare


def select_targets(origin: int, dest: int, config: SystemConfig) -> list[ReplicaId]:
    """The f + 1 lowest-id replicas of ``dest``."""
    if origin == dest:
        raise ValueError("a cluster does not share with itself")
    if not (1 <= origin <= config.z and 1 <= dest <= config.z):
        raise ValueError(f"cluster out of range: {origin} -> {dest}")
    return [ReplicaId(dest, i) for i in range(1, config.f + 2)]


def send_global(
    cert: CommitCertificate,
    config: SystemConfig,
    fx: Effects,
    valid: Callable[[CommitCertificate], bool] | None = None,
) -> int:
    """Ship ``cert`` to the targets of every other cluster; returns the send count."""
    if valid is not None and not valid(cert):
        fx.emit("share_refused", round=cert.round)
        return 0
    msg = GlobalShare.of(cert)
    sent = 0
    for dest in config.clusters():
        if dest == cert.origin_cluster:
            continue
        fx.broadcast(select_targets(cert.origin_cluster, dest, config), msg)
        sent += config.f + 1
    return sent


@dataclass
class ShareBuffer:
    """Received shares of one replica, keyed by (origin cluster, round)."""

    me: ReplicaId
    peers: list[ReplicaId]
    shares: dict[tuple[int, Round], GlobalShare] = field(default_factory=dict)
    forwarded: set[tuple[int, Round]] = field(default_factory=set)
    rejected: int = 0

    def has(self, origin: int, rnd: Round) -> bool:
        return (origin, rnd) in self.shares

    def get(self, origin: int, rnd: Round) -> GlobalShare | None:
        return self.shares.get((origin, rnd))

    def handle_global(
        self,
        msg: GlobalShare,
        src: ReplicaId,
        fx: Effects,
        valid: Callable[[CommitCertificate], bool],
    ) -> bool:
        """Validate, buffer and (on the first copy from the origin) forward.

        Returns True when the share was newly buffered.
        """
        cert = msg.certificate
        if (
            msg.origin_cluster == self.me.cluster
            or cert.origin_cluster != msg.origin_cluster
            or cert.round != msg.round
            or msg.request != cert.request
        ):
            self.rejected += 1
            return False
        key = (msg.origin_cluster, msg.round)
        held = self.shares.get(key)
        if held is None:
            if not valid(cert):
                self.rejected += 1
                fx.emit("share_rejected", origin=msg.origin_cluster, round=msg.round)
                return False
            self.shares[key] = msg
        elif held.request.digest != msg.request.digest:
            # Two valid certificates for one slot would break agreement.
            if valid(cert):
                fx.emit("share_conflict", origin=msg.origin_cluster, round=msg.round)
            self.rejected += 1
            return False
        if src.cluster == msg.origin_cluster and key not in self.forwarded:
            self.forwarded.add(key)
            fx.broadcast(self.peers, msg)
        if held is None:
            fx.emit("buffered", origin=msg.origin_cluster, round=msg.round)
        return held is None

    def prune(self, below: Round) -> None:
        for key in [k for k in self.shares if k[1] < below]:
            del self.shares[key]
        self.forwarded = {k for k in self.forwarded if k[1] >= below}
