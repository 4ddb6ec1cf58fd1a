"""One replica: authentication, request handling and the glue between local
replication, global sharing, remote view-change and execution.

:meth:`Replica.handle` and :meth:`Replica.on_timer` are the only entry
points. Both return an :class:`~geobft.effects.Effects` that the driver
turns into network sends and timer changes.
"""

from __future__ import annotations

import logging
from collections import Counter

from .core import ClientId, ClientRequest, ReplicaId, Round, SystemConfig
from .crypto import Auth, Keyring
from .effects import Effects
from .execution import ConflictError, ExecutedRound, Executor, noop_rounds
from .messages import (
    Checkpoint,
    ClientResponse,
    Commit,
    CommitCertificate,
    Drvc,
    GlobalShare,
    NewView,
    PrePrepare,
    Prepare,
    Rvc,
    ViewChange,
)
from .pbft import DivergenceError, LocalReplication, verify_certificate, verify_request
from .remote import RemoteViewChange, RvcOutcome
from .sharing import ShareBuffer, select_targets, send_global

log = logging.getLogger(__name__)

REQUEST_TIMER = ("req",)


class Replica:
    """Protocol state of a single replica.

    ``window`` bounds how many rounds a primary may propose beyond the last
    executed round (out-of-order processing depth).
    """

    def __init__(self, me: ReplicaId, config: SystemConfig, keyring: Keyring, window: int = 64) -> None:
        self.me = me
        self.config = config
        self.keyring = keyring
        self.window = window
        members = config.replicas(me.cluster)
        peers = [m for m in members if m != me]
        self.pbft = LocalReplication(me, members, config, keyring)
        self.shares = ShareBuffer(me, peers)
        self.remote = RemoteViewChange(me, peers, config, keyring)
        self.pbft.rvc_evidence = self.remote.evidence_list
        self.executor = Executor(config)

        self.pending: dict[bytes, ClientRequest] = {}
        self.in_log: set[bytes] = set()
        self.own_certs: dict[Round, CommitCertificate] = {}
        self.shared: set[Round] = set()
        self._verified: set[bytes] = set()
        self._seen_view = 0
        self.halted = False
        self.alarm: str | None = None
        self._rejected = 0
        self._req_timer = False
        self.meter: Counter = Counter()

    def __repr__(self) -> str:
        return f"Replica({self.me}, view={self.pbft.view}, executed={self.executor.last_executed})"

    # -- helpers ----------------------------------------------------------

    @property
    def cluster(self) -> int:
        return self.me.cluster

    @property
    def is_primary(self) -> bool:
        return self.pbft.is_primary

    @property
    def rejected(self) -> int:
        return self._rejected + self.shares.rejected

    def cert_valid(self, cert: CommitCertificate) -> bool:
        key = cert.canonical
        if key in self._verified:
            return True
        self.meter["verify"] += len(cert.commits) + (0 if cert.request.is_noop else 1)
        ok = bool(verify_certificate(self.config, cert, self.keyring))
        if ok:
            self._verified.add(key)
        return ok

    def _authentic(self, msg, src, tag: bytes | None) -> bool:
        if isinstance(msg, ClientRequest):
            self.meter["verify"] += 1
            return verify_request(msg, self.keyring, None, None)
        if msg.auth is Auth.SIGNATURE:
            self.meter["verify"] += 1
            return msg.verify_signature(self.keyring)
        if tag is None:
            return False
        self.meter["mac"] += 1
        return self.keyring.verify_mac(src, self.me, msg.signed_bytes, tag)

    def _executed(self, request: ClientRequest) -> bool:
        return (request.client_id, request.nonce) in self.executor.state.applied

    # -- entry points -----------------------------------------------------

    def handle(self, msg, src, now: float, tag: bytes | None = None) -> Effects:
        fx = Effects()
        if self.halted:
            return fx
        if not self._authentic(msg, src, tag):
            self._rejected += 1
            fx.emit("rejected", kind=type(msg).__name__, src=str(src))
            return fx
        try:
            self._dispatch(msg, src, now, fx)
            self._after(now, fx)
        except (DivergenceError, ConflictError) as exc:
            self._halt(str(exc), fx)
        return fx

    def on_timer(self, key, now: float) -> Effects:
        fx = Effects()
        if self.halted:
            return fx
        try:
            if key == REQUEST_TIMER:
                self._req_timer = False
                if self._unordered() and not self.is_primary:
                    self.pbft.start_view_change(self.pbft.view + 1, now, fx, reason="request-timeout")
            elif key[0] == "vc":
                self.pbft.on_view_change_timer(key[1], now, fx)
            elif key[0] == "remote":
                _, target, rnd = key
                held = self.shares.has(target, rnd) or self.executor.has(rnd, target)
                self.remote.on_timer_expiry(target, rnd, now, held, fx)
            self._after(now, fx)
        except (DivergenceError, ConflictError) as exc:
            self._halt(str(exc), fx)
        return fx

    def _halt(self, reason: str, fx: Effects) -> None:
        self.halted = True
        self.alarm = reason
        fx.emit("alarm", reason=reason)
        log.warning("%s halted: %s", self.me, reason)

    # -- dispatch ---------------------------------------------------------

    def _dispatch(self, msg, src, now: float, fx: Effects) -> None:
        pb = self.pbft
        if isinstance(msg, ClientRequest):
            self._on_request(msg, src, fx)
        elif isinstance(msg, PrePrepare):
            before = pb.conflicts
            pb.handle_preprepare(msg, src, fx)
            if pb.conflicts > before and not pb.in_view_change:
                pb.start_view_change(pb.view + 1, now, fx, reason="conflict")
            if msg.view == pb.view:
                self.in_log.add(msg.request_digest)
        elif isinstance(msg, Prepare):
            pb.handle_prepare(msg, src, fx)
        elif isinstance(msg, Commit):
            pb.handle_commit(msg, src, fx)
        elif isinstance(msg, Checkpoint):
            pb.handle_checkpoint(msg, src, fx)
        elif isinstance(msg, ViewChange):
            if msg.sender != src:
                return
            self.remote.adopt_evidence(msg.rvc_evidence, self._rvc_ok)
            pb.handle_viewchange(msg, src, now, fx)
        elif isinstance(msg, NewView):
            pb.handle_newview(msg, src, now, fx)
        elif isinstance(msg, GlobalShare):
            self._on_share(msg, src, fx)
        elif isinstance(msg, Drvc):
            share = self.shares.get(msg.target_cluster, msg.round)
            self.remote.on_drvc(msg, src, now, share, fx)
        elif isinstance(msg, Rvc):
            outcome = self.remote.on_rvc(msg, src, pb.recently_changed_view(now), fx)
            if outcome == RvcOutcome.TRIGGERED:
                pb.start_view_change(pb.view + 1, now, fx, reason="remote")
                fx.emit("remote_view_change", requester=msg.sender.cluster, v=msg.v)
            elif outcome == RvcOutcome.ABSORBED and self.is_primary:
                self._resend_pending(fx)
        else:
            self._rejected += 1

    def _rvc_ok(self, rvc: Rvc) -> bool:
        self.meter["verify"] += 1
        return rvc.verify_signature(self.keyring)

    def _on_request(self, req: ClientRequest, src, fx: Effects) -> None:
        if req.is_noop or req.cluster != self.cluster or self._executed(req):
            return
        dig = req.digest
        if dig in self.pending:
            return
        self.pending[dig] = req
        if not isinstance(src, ReplicaId) and not self.is_primary:
            # Received straight from a client: relay and start watching the primary.
            fx.send(self.pbft.primary(), req)
            self._arm_request_timer(fx)

    def _on_share(self, msg: GlobalShare, src, fx: Effects) -> None:
        if self.shares.handle_global(msg, src, fx, self.cert_valid):
            self.executor.offer(msg.certificate)
            self.remote.disarm(msg.origin_cluster, msg.round, fx)
            self._maybe_noop(msg.round, fx)

    # -- post-processing --------------------------------------------------

    def _after(self, now: float, fx: Effects) -> None:
        pb = self.pbft
        i = 0
        while i < len(fx.certificates):
            self._on_certified(fx.certificates[i], now, fx)
            i += 1
        if pb.views_installed != self._seen_view:
            self._seen_view = pb.views_installed
            self._on_view_installed(now, fx)
            while i < len(fx.certificates):
                self._on_certified(fx.certificates[i], now, fx)
                i += 1
        executed = self.executor.try_execute()
        for er in executed:
            self._on_executed(er, fx)
        self._propose(fx)
        while i < len(fx.certificates):
            self._on_certified(fx.certificates[i], now, fx)
            i += 1
        for er in self.executor.try_execute():
            self._on_executed(er, fx)
        if self._req_timer:
            if not self.pending or self.is_primary:
                self._req_timer = False
                fx.cancel_timer(REQUEST_TIMER)
            elif fx.certificates and not pb.in_view_change:
                self._arm_request_timer(fx)

    def _arm_request_timer(self, fx: Effects) -> None:
        self._req_timer = True
        fx.set_timer(REQUEST_TIMER, self.pbft.timeout())

    def _unordered(self) -> list[ClientRequest]:
        return [r for d, r in self.pending.items() if d not in self.in_log]

    def _on_certified(self, cert: CommitCertificate, now: float, fx: Effects) -> None:
        rnd = cert.round
        self.own_certs[rnd] = cert
        self.in_log.add(cert.request.digest)
        self.pending.pop(cert.request.digest, None)
        self.executor.offer(cert)
        for c in self.config.clusters():
            if c != self.cluster and not self.executor.has(rnd, c) and (c, rnd) not in self.remote.timers:
                self.remote.arm(c, rnd, now, fx)
        if self.is_primary and rnd not in self.shared:
            self._share(cert, fx)

    def _share(self, cert: CommitCertificate, fx: Effects) -> None:
        self.shared.add(cert.round)
        if self.config.z > 1:
            send_global(cert, self.config, fx)

    def _on_executed(self, er: ExecutedRound, fx: Effects) -> None:
        for request, result in er.results:
            self.meter["txn"] += request.transactions
            if request.is_noop:
                continue
            self.pending.pop(request.digest, None)
            if request.cluster == self.cluster:
                fx.send(
                    ClientId(request.client_id),
                    ClientResponse(request.client_id, request.nonce, er.round, result, self.me, self.pbft.view),
                )
        for c in self.config.clusters():
            self.remote.disarm(c, er.round, fx)
        fx.emit("executed", round=er.round, height=er.blocks[-1].height)
        c = self.cluster
        self.pbft.checkpoint(er.round, er.txns_before.get(c, 0), er.txns_after.get(c, 0), er.head, fx)

    def _on_view_installed(self, now: float, fx: Effects) -> None:
        pb = self.pbft
        self.in_log = pb.proposed_digests()
        fx.emit("view_change_done", view=pb.view, cluster=self.cluster)
        # Remote clusters may have been starved by our old primary; give
        # them a fresh window before suspecting them.
        for (target, rnd), t in sorted(self.remote.timers.items()):
            self.remote.arm(target, rnd, now, fx, t.backoff_exponent)
        if not self.is_primary:
            return
        self.shared = {r for r in self.shared if r in self.own_certs}
        self._resend_pending(fx)

    def _resend_pending(self, fx: Effects) -> None:
        """A (new) primary answers remote view-change requests."""
        pending = self.remote.take_pending()
        if not pending:
            return
        target = max(pending.values())
        self._propose(fx)
        if not self._unordered():
            for rnd in noop_rounds(self.pbft.next_free_round(), target, True):
                self._propose_one(ClientRequest.noop(self.cluster, rnd), rnd, fx)
        top = max(self.own_certs, default=0)
        for requester, low in sorted(pending.items()):
            for rnd in range(low, top + 1):
                cert = self.own_certs.get(rnd)
                if cert is None:
                    continue
                self.shared.add(rnd)
                fx.broadcast(select_targets(self.cluster, requester, self.config), GlobalShare.of(cert))
            fx.emit("resent", requester=requester, low=low, high=top)

    def _propose_one(self, request: ClientRequest, rnd: Round, fx: Effects) -> None:
        self.pbft.propose(request, rnd, fx)
        self.in_log.add(request.digest)

    def _propose(self, fx: Effects) -> None:
        if not self.is_primary:
            return
        limit = self.executor.last_executed + self.window
        for req in self._unordered():
            rnd = self.pbft.next_free_round()
            if rnd > limit:
                break
            if self._executed(req):
                self.pending.pop(req.digest, None)
                continue
            self._propose_one(req, rnd, fx)

    def _maybe_noop(self, rnd: Round, fx: Effects) -> None:
        if not self.is_primary:
            return
        self._propose(fx)
        for r in noop_rounds(self.pbft.next_free_round(), rnd, not self._unordered()):
            self._propose_one(ClientRequest.noop(self.cluster, r), r, fx)
