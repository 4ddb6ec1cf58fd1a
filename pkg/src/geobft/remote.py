"""Remote view-change: detecting a cluster that fails to share, agreeing on
it locally (DRVC), and asking the faulty cluster to replace its primary (RVC).

Timers are keyed by (remote cluster, round). Each replica keeps one ``v``
counter per remote cluster; the receiving side keeps one *honored* counter
per requesting cluster so that replayed requests cannot depose a primary
twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .core import ReplicaId, Round, SystemConfig
from .crypto import Keyring
from .effects import Effects
from .messages import Drvc, Rvc, signed


@dataclass
class RemoteTimer:
    target_cluster: int
    round: Round
    deadline: float
    backoff_exponent: int = 0

    @property
    def key(self) -> tuple:
        return ("remote", self.target_cluster, self.round)


class RvcOutcome:
    IGNORED = "ignored"
    PENDING = "pending"
    TRIGGERED = "triggered"
    ABSORBED = "absorbed"
    REPLAY = "replay"


@dataclass
class RemoteViewChange:
    me: ReplicaId
    peers: list[ReplicaId]
    config: SystemConfig
    keyring: Keyring

    timers: dict[tuple[int, Round], RemoteTimer] = field(default_factory=dict)
    v: dict[int, int] = field(default_factory=dict)
    detected: set[tuple[int, Round, int]] = field(default_factory=set)
    drvc_votes: dict[tuple[int, Round, int], set[ReplicaId]] = field(default_factory=dict)
    rvc_sent: set[tuple[int, Round, int]] = field(default_factory=set)

    honored: dict[int, int] = field(default_factory=dict)
    max_honored_v: dict[int, int] = field(default_factory=dict)
    rvc_votes: dict[tuple[int, Round, int], dict[ReplicaId, Rvc]] = field(default_factory=dict)
    rvc_forwarded: set[tuple] = field(default_factory=set)
    pending: dict[int, Round] = field(default_factory=dict)  # requester -> lowest round asked
    evidence: dict[tuple[int, Round, int], tuple[Rvc, ...]] = field(default_factory=dict)
    triggered: dict[int, int] = field(default_factory=dict)  # requester -> local VCs caused

    @property
    def f(self) -> int:
        return self.config.f

    @property
    def quorum(self) -> int:
        return self.config.n - self.config.f

    # -- timers -----------------------------------------------------------

    def arm(self, target: int, rnd: Round, now: float, fx: Effects, exponent: int = 0) -> RemoteTimer:
        delay = self.config.base_timeout * (2 ** exponent)
        t = RemoteTimer(target, rnd, now + delay, exponent)
        self.timers[(target, rnd)] = t
        fx.set_timer(t.key, delay)
        return t

    def disarm(self, target: int, rnd: Round, fx: Effects) -> None:
        t = self.timers.pop((target, rnd), None)
        if t is not None:
            fx.cancel_timer(t.key)

    def on_timer_expiry(self, target: int, rnd: Round, now: float, has_share: bool, fx: Effects) -> Drvc | None:
        timer = self.timers.get((target, rnd))
        if timer is None:
            return None
        if has_share:
            del self.timers[(target, rnd)]
            return None
        v = self.v.get(target, 0)
        fx.emit("remote_timeout", target=target, round=rnd, v=v)
        drvc = self._detect(target, rnd, v, fx)
        self.v[target] = v + 1
        self.arm(target, rnd, now, fx, timer.backoff_exponent + 1)
        return drvc

    def _detect(self, target: int, rnd: Round, v: int, fx: Effects) -> Drvc | None:
        key = (target, rnd, v)
        if key in self.detected:
            return None
        self.detected.add(key)
        msg = Drvc(target, rnd, v, self.me)
        fx.broadcast(self.peers, msg)
        self.drvc_votes.setdefault(key, set()).add(self.me)
        self._maybe_rvc(key, fx)
        return msg

    # -- DRVC -------------------------------------------------------------

    def on_drvc(self, msg: Drvc, src: ReplicaId, now: float, share, fx: Effects) -> None:
        """``share`` is the buffered share for (target, round), or None."""
        if src != msg.sender or src.cluster != self.me.cluster or src == self.me:
            return
        if msg.target_cluster == self.me.cluster or not 1 <= msg.target_cluster <= self.config.z:
            return
        if share is not None:
            fx.send(src, share)
            fx.emit("share_resent", target=msg.target_cluster, round=msg.round, to=str(src))
            return
        key = (msg.target_cluster, msg.round, msg.v)
        votes = self.drvc_votes.setdefault(key, set())
        if msg.sender in votes:
            return
        votes.add(msg.sender)
        own_v = self.v.get(msg.target_cluster, 0)
        if len(votes) >= self.f + 1 and key not in self.detected and msg.v >= own_v:
            fx.emit("drvc_join", target=msg.target_cluster, round=msg.round, v=msg.v)
            self._detect(*key, fx)
            self.v[msg.target_cluster] = msg.v + 1
            old = self.timers.get((msg.target_cluster, msg.round))
            exp = (old.backoff_exponent if old else 0) + 1
            self.arm(msg.target_cluster, msg.round, now, fx, exp)
        self._maybe_rvc(key, fx)

    def _maybe_rvc(self, key: tuple[int, Round, int], fx: Effects) -> None:
        if key in self.rvc_sent or len(self.drvc_votes.get(key, ())) < self.quorum:
            return
        target, rnd, v = key
        self.rvc_sent.add(key)
        rvc = signed(Rvc(target, rnd, v, self.me), self.keyring)
        fx.send(ReplicaId(target, self.me.local), rvc)
        fx.emit("rvc_sent", target=target, round=rnd, v=v)

    # -- RVC --------------------------------------------------------------

    def on_rvc(self, msg: Rvc, src: ReplicaId, recently_changed: bool, fx: Effects) -> str:
        """Tally a verified RVC aimed at this cluster.

        Returns one of the :class:`RvcOutcome` values; ``TRIGGERED`` means the
        caller must start a local view-change.
        """
        requester = msg.sender.cluster
        if msg.target_cluster != self.me.cluster or requester == self.me.cluster:
            return RvcOutcome.IGNORED
        if msg.v < self.honored.get(requester, 0):
            return RvcOutcome.REPLAY
        fwd_key = (msg.sender, msg.round, msg.v)
        if src == msg.sender and fwd_key not in self.rvc_forwarded:
            self.rvc_forwarded.add(fwd_key)
            fx.broadcast(self.peers, msg)
        key = (requester, msg.round, msg.v)
        votes = self.rvc_votes.setdefault(key, {})
        if msg.sender in votes:
            return RvcOutcome.IGNORED
        votes[msg.sender] = msg
        if len(votes) < self.f + 1:
            return RvcOutcome.PENDING
        self.honored[requester] = msg.v + 1
        self.max_honored_v[requester] = max(msg.v, self.max_honored_v.get(requester, -1))
        self.pending[requester] = min(self.pending.get(requester, msg.round), msg.round)
        self.evidence[key] = tuple(votes[s] for s in sorted(votes))
        for k in [k for k in self.rvc_votes if k[0] == requester and k[2] <= msg.v]:
            del self.rvc_votes[k]
        if recently_changed:
            fx.emit("rvc_absorbed", requester=requester, round=msg.round, v=msg.v)
            return RvcOutcome.ABSORBED
        self.triggered[requester] = self.triggered.get(requester, 0) + 1
        fx.emit("rvc_honored", requester=requester, round=msg.round, v=msg.v)
        return RvcOutcome.TRIGGERED

    def evidence_list(self) -> tuple[Rvc, ...]:
        out: list[Rvc] = []
        for key in sorted(self.evidence):
            out.extend(self.evidence[key])
        return tuple(out)

    def adopt_evidence(self, rvcs, verify: Callable[[Rvc], bool]) -> None:
        """Learn pending remote requests from RVCs carried in VIEWCHANGEs."""
        groups: dict[tuple[int, Round, int], set[ReplicaId]] = {}
        for r in rvcs:
            if r.target_cluster != self.me.cluster or r.sender.cluster == self.me.cluster:
                continue
            if not verify(r):
                continue
            groups.setdefault((r.sender.cluster, r.round, r.v), set()).add(r.sender)
        for (requester, rnd, v), senders in groups.items():
            if len(senders) >= self.f + 1:
                self.pending[requester] = min(self.pending.get(requester, rnd), rnd)
                if v + 1 > self.honored.get(requester, 0):
                    self.honored[requester] = v + 1

    def take_pending(self) -> dict[int, Round]:
        out, self.pending = self.pending, {}
        self.evidence.clear()
        return out
