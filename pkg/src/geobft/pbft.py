"""Per-cluster PBFT: normal case, commit certificates, checkpoints, view-change.

One :class:`LocalReplication` instance is owned by each replica. Handlers
are invoked sequentially and append their side effects to an
:class:`~geobft.effects.Effects` collector; newly formed certificates are
both returned and appended to ``fx.certificates``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .core import ClientId, ClientRequest, ReplicaId, Round, SystemConfig
from .crypto import Keyring
from .effects import Effects
from .messages import (
    Checkpoint,
    Commit,
    CommitCertificate,
    NewView,
    PrePrepare,
    Prepare,
    PreparedProof,
    Rvc,
    ViewChange,
    signed,
)

log = logging.getLogger(__name__)


class RoleError(RuntimeError):
    """Operation reserved for the current primary."""


class DuplicateProposalError(RuntimeError):
    """The slot already holds a proposal in the current view."""


class DivergenceError(RuntimeError):
    """A checkpoint quorum disagrees with this replica's own state."""


class Reject(enum.Enum):
    COUNT = "count"
    DUPLICATE_SIGNER = "duplicate signer"
    DIGEST_MISMATCH = "digest mismatch"
    BAD_SIGNATURE = "bad signature"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reject | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def verify_request(request: ClientRequest, keyring: Keyring, cluster: int | None = None,
                   round: Round | None = None) -> bool:
    if not request.structurally_valid(cluster, round):
        return False
    if request.is_noop:
        return True
    return keyring.verify(ClientId(request.client_id), request.signed_bytes, request.signature)


def verify_certificate(config: SystemConfig, cert: CommitCertificate, keyring: Keyring) -> Verdict:
    """Check every certificate invariant and all n - f commit signatures."""
    pp = cert.preprepare
    origin = cert.origin_cluster
    if not 1 <= origin <= config.z:
        return Verdict(False, Reject.MALFORMED)
    if (pp.origin_cluster != origin or pp.round != cert.round or cert.round < 1
            or pp.request != cert.request):
        return Verdict(False, Reject.MALFORMED)
    if pp.request_digest != cert.request.digest:
        return Verdict(False, Reject.DIGEST_MISMATCH)
    if not cert.request.structurally_valid(origin, cert.round):
        return Verdict(False, Reject.MALFORMED)
    quorum = config.n - config.f
    if len(cert.commits) != quorum:
        return Verdict(False, Reject.COUNT)
    senders = [c.sender for c in cert.commits]
    if len(set(senders)) != len(senders):
        return Verdict(False, Reject.DUPLICATE_SIGNER)
    for c in cert.commits:
        if c.sender.cluster != origin or not 1 <= c.sender.local <= config.n:
            return Verdict(False, Reject.MALFORMED)
        if c.view != pp.view or c.round != cert.round or c.request_digest != pp.request_digest:
            return Verdict(False, Reject.DIGEST_MISMATCH)
    for c in cert.commits:
        if not c.verify_signature(keyring):
            return Verdict(False, Reject.BAD_SIGNATURE)
    if not cert.request.is_noop and not verify_request(cert.request, keyring):
        return Verdict(False, Reject.BAD_SIGNATURE)
    return ACCEPT


@dataclass
class Slot:
    round: Round
    known: dict[int, PrePrepare] = field(default_factory=dict)  # from the primary of each view
    accepted: dict[int, PrePrepare] = field(default_factory=dict)  # views we prepared in
    prepares: dict[tuple[int, bytes], dict[ReplicaId, Prepare]] = field(default_factory=dict)
    commits: dict[tuple[int, bytes], dict[ReplicaId, Commit]] = field(default_factory=dict)
    sent_commit: set[int] = field(default_factory=set)
    prepared: PreparedProof | None = None
    certificate: CommitCertificate | None = None


@dataclass(frozen=True)
class ViewPlan:
    view: int
    low: Round
    high: Round
    certificates: tuple[CommitCertificate, ...]
    preprepares: tuple[PrePrepare, ...]


def plan_new_view(
    view: int,
    viewchanges: Sequence[ViewChange],
    cluster: int,
    cert_ok: Callable[[CommitCertificate], bool],
    request_ok: Callable[[ClientRequest, Round], bool],
) -> ViewPlan:
    """Derive the NEWVIEW content from a quorum of VIEWCHANGE messages.

    Rounds above the highest stable checkpoint keep their certified request
    if any replica reports a certificate, else the highest-view prepared
    request, else a no-op.
    """
    vcs = sorted(viewchanges, key=lambda m: m.sender)
    low = max(vc.stable_round for vc in vcs)
    floor = min(vc.stable_round for vc in vcs)
    certs: dict[Round, CommitCertificate] = {}
    for vc in vcs:
        for c in vc.certificates:
            if c.round > floor and c.round not in certs and c.origin_cluster == cluster and cert_ok(c):
                certs[c.round] = c
    best: dict[Round, PrePrepare] = {}
    for vc in vcs:
        for p in vc.prepared:
            pp = p.preprepare
            if pp.round <= low or pp.origin_cluster != cluster:
                continue
            if pp.request_digest != pp.request.digest or not request_ok(pp.request, pp.round):
                continue
            if pp.round not in best or pp.view > best[pp.round].view:
                best[pp.round] = pp
    high = max([low, *certs, *best])
    proposals = []
    for rnd in range(low + 1, high + 1):
        if rnd in certs:
            continue
        request = best[rnd].request if rnd in best else ClientRequest.noop(cluster, rnd)
        proposals.append(PrePrepare(view, rnd, cluster, request.digest, request))
    return ViewPlan(
        view, low, high, tuple(certs[r] for r in sorted(certs)), tuple(proposals)
    )


class LocalReplication:
    """PBFT log and view state of one replica within its cluster.

    ``members`` lists the cluster in local-index order; the primary of view
    ``v`` is ``members[v % n]``.
    """

    def __init__(
        self,
        me: ReplicaId,
        members: Sequence[ReplicaId],
        config: SystemConfig,
        keyring: Keyring,
    ) -> None:
        self.me = me
        self.members = list(members)
        self.config = config
        self.keyring = keyring
        self.cluster = me.cluster
        self.n = len(self.members)
        self.f = config.f
        self.quorum = self.n - self.f
        self._member_set = set(self.members)

        self.view = 0
        self.in_view_change = False
        self.target_view = 0
        self.vc_backoff = 0
        self.vc_started_at: float | None = None
        self.vc_completed_at: float | None = None
        self.views_installed = 0

        self.slots: dict[Round, Slot] = {}
        self.max_round = 0  # highest round with a proposal or certificate
        self.stable_round = 0
        self.executed_round = 0  # a checkpoint only becomes stable once reached locally
        self.checkpoint_votes: dict[Round, dict[ReplicaId, bytes]] = {}
        self.own_checkpoints: dict[Round, bytes] = {}
        self.quorum_checkpoints: dict[Round, bytes] = {}
        self.viewchanges: dict[int, dict[ReplicaId, ViewChange]] = {}
        self.newview_sent: set[int] = set()
        self.rvc_evidence: Callable[[], tuple[Rvc, ...]] = tuple
        self.conflicts = 0

    # -- roles ------------------------------------------------------------

    def primary(self, view: int | None = None) -> ReplicaId:
        return self.members[(self.view if view is None else view) % self.n]

    @property
    def is_primary(self) -> bool:
        return not self.in_view_change and self.primary() == self.me

    def peers(self) -> list[ReplicaId]:
        return [m for m in self.members if m != self.me]

    def slot(self, rnd: Round) -> Slot:
        s = self.slots.get(rnd)
        if s is None:
            s = self.slots[rnd] = Slot(rnd)
        return s

    def certificate(self, rnd: Round) -> CommitCertificate | None:
        s = self.slots.get(rnd)
        return s.certificate if s else None

    def certified_rounds(self) -> list[Round]:
        return sorted(r for r, s in self.slots.items() if s.certificate is not None)

    # -- normal case ------------------------------------------------------

    def propose(self, request: ClientRequest, rnd: Round, fx: Effects) -> PrePrepare:
        if self.in_view_change or self.primary() != self.me:
            raise RoleError(f"{self.me} is not the primary of view {self.view}")
        slot = self.slot(rnd)
        if self.view in slot.accepted or slot.certificate is not None or rnd <= self.stable_round:
            raise DuplicateProposalError(f"round {rnd} already proposed")
        pp = PrePrepare(self.view, rnd, self.cluster, request.digest, request)
        slot.known[self.view] = pp
        slot.accepted[self.view] = pp
        self.max_round = max(self.max_round, rnd)
        fx.broadcast(self.peers(), pp)
        fx.emit("propose", round=rnd, view=self.view, noop=request.is_noop)
        self._progress(slot, self.view, pp.request_digest, fx)
        return pp

    def handle_preprepare(self, pp: PrePrepare, src: ReplicaId, fx: Effects) -> CommitCertificate | None:
        if src != self.primary(pp.view) or pp.origin_cluster != self.cluster:
            return None
        if pp.request_digest != pp.request.digest or pp.round <= self.stable_round:
            return None
        slot = self.slot(pp.round)
        slot.known.setdefault(pp.view, pp)
        if pp.view != self.view or self.in_view_change:
            return self._progress(slot, pp.view, pp.request_digest, fx)
        existing = slot.accepted.get(pp.view)
        if existing is not None:
            if existing.request_digest != pp.request_digest:
                self._conflict(pp, fx)
            return None
        if slot.certificate is not None and slot.certificate.request.digest != pp.request_digest:
            self._conflict(pp, fx)
            return None
        slot.accepted[pp.view] = pp
        slot.known[pp.view] = pp
        self.max_round = max(self.max_round, pp.round)
        if self.me != self.primary(pp.view):
            prep = Prepare(pp.view, pp.round, pp.request_digest, self.me)
            slot.prepares.setdefault((pp.view, pp.request_digest), {})[self.me] = prep
            fx.broadcast(self.peers(), prep)
        return self._progress(slot, pp.view, pp.request_digest, fx)

    def handle_prepare(self, p: Prepare, src: ReplicaId, fx: Effects) -> CommitCertificate | None:
        if src != p.sender or p.sender not in self._member_set or p.round <= self.stable_round:
            return None
        if p.sender == self.primary(p.view):
            return None
        slot = self.slot(p.round)
        votes = slot.prepares.setdefault((p.view, p.request_digest), {})
        if p.sender in votes:
            return None
        votes[p.sender] = p
        return self._progress(slot, p.view, p.request_digest, fx)

    def handle_commit(self, c: Commit, src: ReplicaId, fx: Effects) -> CommitCertificate | None:
        if c.sender not in self._member_set or c.round <= self.stable_round:
            return None
        slot = self.slot(c.round)
        votes = slot.commits.setdefault((c.view, c.request_digest), {})
        if c.sender in votes:
            return None
        votes[c.sender] = c
        return self._progress(slot, c.view, c.request_digest, fx)

    def _conflict(self, pp: PrePrepare, fx: Effects) -> None:
        self.conflicts += 1
        fx.emit("preprepare_conflict", round=pp.round, view=pp.view)
        fx.suspicions.append("conflict")

    def _progress(self, slot: Slot, view: int, dig: bytes, fx: Effects) -> CommitCertificate | None:
        pp = slot.accepted.get(view)
        if (
            pp is not None
            and pp.request_digest == dig
            and view == self.view
            and not self.in_view_change
            and view not in slot.sent_commit
        ):
            prepares = slot.prepares.get((view, dig), {})
            if 1 + len(prepares) >= self.quorum:
                commit = signed(Commit(view, slot.round, dig, self.me), self.keyring)
                slot.sent_commit.add(view)
                slot.prepared = PreparedProof(pp, tuple(sorted(prepares)))
                slot.commits.setdefault((view, dig), {})[self.me] = commit
                fx.broadcast(self.peers(), commit)
        if slot.certificate is not None:
            return None
        commits = slot.commits.get((view, dig))
        known = slot.known.get(view)
        if not commits or len(commits) < self.quorum or known is None or known.request_digest != dig:
            return None
        chosen = tuple(commits[s] for s in sorted(commits)[: self.quorum])
        cert = CommitCertificate(known.request, slot.round, self.cluster, known, chosen)
        slot.certificate = cert
        self.max_round = max(self.max_round, slot.round)
        if view == self.view:
            self.vc_backoff = 0
        fx.certificates.append(cert)
        fx.emit("certified", round=slot.round, view=view)
        return cert

    # -- checkpoints ------------------------------------------------------

    def checkpoint(self, rnd: Round, before: int, after: int, state_digest: bytes, fx: Effects) -> Checkpoint | None:
        """Called after executing ``rnd``; ``before``/``after`` are this
        cluster's executed-transaction totals around that round."""
        expected = self.quorum_checkpoints.get(rnd)
        if expected is not None and expected != state_digest:
            raise DivergenceError(f"{self.me}: state at round {rnd} differs from checkpoint quorum")
        self.executed_round = max(self.executed_round, rnd)
        period = self.config.checkpoint_period
        if after // period <= before // period:
            return None
        cp = signed(Checkpoint(rnd, state_digest, self.me), self.keyring)
        self.own_checkpoints[rnd] = state_digest
        fx.broadcast(self.peers(), cp)
        self.checkpoint_votes.setdefault(rnd, {})[self.me] = state_digest
        self._check_stable(rnd, fx)
        return cp

    def handle_checkpoint(self, cp: Checkpoint, src: ReplicaId, fx: Effects) -> None:
        if cp.sender not in self._member_set or cp.round <= self.stable_round:
            return
        votes = self.checkpoint_votes.setdefault(cp.round, {})
        votes.setdefault(cp.sender, cp.state_digest)
        self._check_stable(cp.round, fx)

    def _check_stable(self, rnd: Round, fx: Effects) -> None:
        votes = self.checkpoint_votes.get(rnd, {})
        tally: dict[bytes, int] = {}
        for d in votes.values():
            tally[d] = tally.get(d, 0) + 1
        for d, count in tally.items():
            if count >= self.quorum and self.stable_round < rnd <= self.executed_round:
                own = self.own_checkpoints.get(rnd)
                if own is not None and own != d:
                    raise DivergenceError(f"{self.me}: checkpoint quorum at round {rnd} disagrees")
                self.quorum_checkpoints[rnd] = d
                self.stable_round = rnd
                for r in [r for r, s in self.slots.items() if r <= rnd and s.certificate is not None]:
                    del self.slots[r]
                for r in [r for r in self.checkpoint_votes if r < rnd]:
                    del self.checkpoint_votes[r]
                fx.emit("stable_checkpoint", round=rnd)
                return

    # -- view change ------------------------------------------------------

    def timeout(self) -> float:
        return self.config.base_timeout * (2 ** self.vc_backoff)

    def start_view_change(self, new_view: int, now: float, fx: Effects, reason: str = "timeout") -> ViewChange | None:
        current = self.target_view if self.in_view_change else self.view
        if new_view <= current:
            return None
        if self.in_view_change:
            fx.cancel_timer(("vc", self.target_view))
        else:
            self.vc_started_at = now
        self.in_view_change = True
        self.target_view = new_view
        certs = tuple(
            s.certificate for r, s in sorted(self.slots.items())
            if r > self.stable_round and s.certificate is not None
        )
        prepared = tuple(
            s.prepared for r, s in sorted(self.slots.items())
            if r > self.stable_round and s.certificate is None and s.prepared is not None
        )
        vc = signed(
            ViewChange(new_view, self.stable_round, certs, prepared, tuple(self.rvc_evidence()), self.me),
            self.keyring,
        )
        self.viewchanges.setdefault(new_view, {})[self.me] = vc
        fx.broadcast(self.peers(), vc)
        fx.set_timer(("vc", new_view), self.timeout())
        self.vc_backoff += 1
        fx.emit("view_change_start", view=new_view, reason=reason)
        self._maybe_newview(new_view, now, fx)
        return vc

    def on_view_change_timer(self, view: int, now: float, fx: Effects) -> None:
        if self.in_view_change and self.target_view == view:
            self.start_view_change(view + 1, now, fx, reason="newview-timeout")

    def handle_viewchange(self, vc: ViewChange, src: ReplicaId, now: float, fx: Effects) -> None:
        if vc.sender not in self._member_set or vc.new_view <= self.view:
            return
        self.viewchanges.setdefault(vc.new_view, {}).setdefault(vc.sender, vc)
        current = self.target_view if self.in_view_change else self.view
        ahead: dict[ReplicaId, int] = {}
        for v, msgs in self.viewchanges.items():
            if v > current:
                for s in msgs:
                    if s != self.me:
                        ahead[s] = min(ahead.get(s, v), v)
        if len(ahead) >= self.f + 1:
            self.start_view_change(min(ahead.values()), now, fx, reason="join")
        self._maybe_newview(vc.new_view, now, fx)

    def _cert_ok(self, cert: CommitCertificate) -> bool:
        return bool(verify_certificate(self.config, cert, self.keyring))

    def _request_ok(self, request: ClientRequest, rnd: Round) -> bool:
        return verify_request(request, self.keyring, self.cluster, rnd)

    def _maybe_newview(self, view: int, now: float, fx: Effects) -> None:
        if (
            self.primary(view) != self.me
            or view in self.newview_sent
            or not self.in_view_change
            or self.target_view != view
        ):
            return
        vcs = self.viewchanges.get(view, {})
        if len(vcs) < self.quorum:
            return
        chosen = tuple(vcs[s] for s in sorted(vcs)[: self.quorum])
        plan = plan_new_view(view, chosen, self.cluster, self._cert_ok, self._request_ok)
        self.newview_sent.add(view)
        nv = NewView(view, chosen, plan.certificates, plan.preprepares)
        fx.broadcast(self.peers(), nv)
        self._install(plan, now, fx)

    def handle_newview(self, nv: NewView, src: ReplicaId, now: float, fx: Effects) -> bool:
        if src != self.primary(nv.view) or nv.view <= self.view:
            return False
        if self.in_view_change and nv.view < self.target_view:
            return False
        senders = [vc.sender for vc in nv.viewchanges]
        if len(set(senders)) != len(senders) or len(senders) < self.quorum:
            return False
        for vc in nv.viewchanges:
            if vc.new_view != nv.view or vc.sender not in self._member_set:
                return False
            if not vc.verify_signature(self.keyring):
                return False
        plan = plan_new_view(nv.view, nv.viewchanges, self.cluster, self._cert_ok, self._request_ok)
        if plan.certificates != nv.certificates or plan.preprepares != nv.preprepares:
            fx.emit("newview_rejected", view=nv.view)
            return False
        if not self.in_view_change:
            self.vc_started_at = now
        self._install(plan, now, fx)
        return True

    def _install(self, plan: ViewPlan, now: float, fx: Effects) -> None:
        if self.in_view_change:
            fx.cancel_timer(("vc", self.target_view))
        self.view = plan.view
        self.target_view = plan.view
        self.in_view_change = False
        self.vc_completed_at = now
        self.views_installed += 1
        for v in [v for v in self.viewchanges if v <= plan.view]:
            del self.viewchanges[v]
        fx.emit("view_installed", view=plan.view, primary=str(self.primary()))
        for cert in plan.certificates:
            slot = self.slot(cert.round)
            if slot.certificate is None and cert.round > self.stable_round:
                slot.certificate = cert
                fx.certificates.append(cert)
                fx.emit("certified", round=cert.round, view=cert.view, adopted=True)
            self.max_round = max(self.max_round, cert.round)
        for pp in plan.preprepares:
            slot = self.slot(pp.round)
            slot.known[pp.view] = pp
            slot.accepted[pp.view] = pp
            self.max_round = max(self.max_round, pp.round)
            if self.me != self.primary():
                prep = Prepare(pp.view, pp.round, pp.request_digest, self.me)
                slot.prepares.setdefault((pp.view, pp.request_digest), {})[self.me] = prep
                fx.broadcast(self.peers(), prep)
            self._progress(slot, pp.view, pp.request_digest, fx)
        self.max_round = max(self.max_round, plan.high)

    def recently_changed_view(self, now: float) -> bool:
        """A view change is in progress or completed within 2 * base_timeout."""
        if self.in_view_change:
            return True
        if self.vc_completed_at is None:
            return False
        return now - self.vc_completed_at <= 2 * self.config.base_timeout

    def proposed_digests(self) -> set[bytes]:
        out = set()
        for s in self.slots.values():
            if s.certificate is not None:
                out.add(s.certificate.request.digest)
            pp = s.accepted.get(self.view)
            if pp is not None:
                out.add(pp.request_digest)
        return out

    def next_free_round(self) -> Round:
        return max(self.max_round, self.stable_round) + 1
