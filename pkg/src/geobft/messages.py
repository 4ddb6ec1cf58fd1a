"""Protocol messages and commit certificates.

Every message kind declares ``auth``: point-to-point kinds are MAC'd per
link, kinds that get forwarded (client requests, COMMIT, CHECKPOINT,
VIEWCHANGE, RVC) carry a signature by their ``sender``.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar

from .codec import DecodeError, Reader, Writer
from .core import ClientRequest, ReplicaId, Round
from .crypto import Auth, Keyring


class Kind(enum.IntEnum):
    REQUEST = 1
    PREPREPARE = 2
    PREPARE = 3
    COMMIT = 4
    CHECKPOINT = 5
    VIEWCHANGE = 6
    NEWVIEW = 7
    GLOBAL_SHARE = 8
    DRVC = 9
    RVC = 10
    RESPONSE = 11


class Message:
    kind: ClassVar[Kind]
    auth: ClassVar[Auth] = Auth.MAC

    def _encode_body(self, w: Writer) -> None:
        raise NotImplementedError

    @cached_property
    def signed_bytes(self) -> bytes:
        w = Writer().u8(int(self.kind))
        self._encode_body(w)
        return w.getvalue()


class SignedMessage(Message):
    auth = Auth.SIGNATURE
    sender: ReplicaId
    signature: bytes

    def verify_signature(self, keyring: Keyring) -> bool:
        return keyring.verify(self.sender, self.signed_bytes, self.signature)


@dataclass(frozen=True)
class PrePrepare(Message):
    kind: ClassVar[Kind] = Kind.PREPREPARE

    view: int
    round: Round
    origin_cluster: int
    request_digest: bytes
    request: ClientRequest

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.view).u64(self.round).u32(self.origin_cluster - 1)
        w.raw(self.request_digest).blob(self.request.canonical)

    def encode(self, w: Writer) -> None:
        w.raw(self.signed_bytes)

    @classmethod
    def decode(cls, r: Reader) -> "PrePrepare":
        if r.u8() != Kind.PREPREPARE:
            raise DecodeError("not a preprepare")
        view, rnd, origin = r.u64(), r.u64(), r.u32() + 1
        dig = r.raw(32)
        inner = Reader(r.blob())
        request = ClientRequest.decode(inner)
        inner.expect_end()
        return cls(view, rnd, origin, dig, request)


@dataclass(frozen=True)
class Prepare(Message):
    kind: ClassVar[Kind] = Kind.PREPARE

    view: int
    round: Round
    request_digest: bytes
    sender: ReplicaId

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.view).u64(self.round).raw(self.request_digest)
        self.sender.encode(w)


@dataclass(frozen=True)
class Commit(SignedMessage):
    kind: ClassVar[Kind] = Kind.COMMIT

    view: int
    round: Round
    request_digest: bytes
    sender: ReplicaId
    signature: bytes = b""

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.view).u64(self.round).raw(self.request_digest)
        self.sender.encode(w)

    def encode(self, w: Writer) -> None:
        w.raw(self.signed_bytes).blob(self.signature)

    @classmethod
    def decode(cls, r: Reader) -> "Commit":
        if r.u8() != Kind.COMMIT:
            raise DecodeError("not a commit")
        view, rnd = r.u64(), r.u64()
        dig = r.raw(32)
        sender = ReplicaId.decode(r)
        return cls(view, rnd, dig, sender, r.blob())


@dataclass(frozen=True)
class CommitCertificate:
    """A request plus n - f matching signed COMMITs from one cluster."""

    request: ClientRequest
    round: Round
    origin_cluster: int
    preprepare: PrePrepare
    commits: tuple[Commit, ...]

    @property
    def view(self) -> int:
        return self.preprepare.view

    @cached_property
    def canonical(self) -> bytes:
        w = Writer().u8(0x43).blob(self.request.canonical).u64(self.round)
        w.u32(self.origin_cluster - 1)
        self.preprepare.encode(w)
        w.u32(len(self.commits))
        for c in self.commits:
            c.encode(w)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        w.blob(self.canonical)

    @classmethod
    def decode(cls, r: Reader) -> "CommitCertificate":
        body = Reader(r.blob())
        if body.u8() != 0x43:
            raise DecodeError("not a certificate")
        inner = Reader(body.blob())
        request = ClientRequest.decode(inner)
        inner.expect_end()
        rnd = body.u64()
        origin = body.u32() + 1
        pp = PrePrepare.decode(body)
        count = body.u32()
        if count > 4096:
            raise DecodeError("implausible commit count")
        commits = tuple(Commit.decode(body) for _ in range(count))
        body.expect_end()
        return cls(request, rnd, origin, pp, commits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CommitCertificate":
        r = Reader(data)
        cert = cls.decode(r)
        r.expect_end()
        return cert

    def to_bytes(self) -> bytes:
        w = Writer()
        self.encode(w)
        return w.getvalue()


@dataclass(frozen=True)
class Checkpoint(SignedMessage):
    kind: ClassVar[Kind] = Kind.CHECKPOINT

    round: Round
    state_digest: bytes
    sender: ReplicaId
    signature: bytes = b""

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.round).raw(self.state_digest)
        self.sender.encode(w)


@dataclass(frozen=True)
class PreparedProof:
    """Highest-view prepared (but not certified) proposal held by a replica."""

    preprepare: PrePrepare
    prepare_senders: tuple[ReplicaId, ...]

    def encode(self, w: Writer) -> None:
        self.preprepare.encode(w)
        w.u32(len(self.prepare_senders))
        for s in self.prepare_senders:
            s.encode(w)


@dataclass(frozen=True)
class Rvc(SignedMessage):
    """Signed cross-cluster request for a remote view-change of ``target_cluster``."""

    kind: ClassVar[Kind] = Kind.RVC

    target_cluster: int
    round: Round
    v: int
    sender: ReplicaId
    signature: bytes = b""

    def _encode_body(self, w: Writer) -> None:
        w.u32(self.target_cluster - 1).u64(self.round).u64(self.v)
        self.sender.encode(w)


@dataclass(frozen=True)
class ViewChange(SignedMessage):
    kind: ClassVar[Kind] = Kind.VIEWCHANGE

    new_view: int
    stable_round: Round
    certificates: tuple[CommitCertificate, ...]
    prepared: tuple[PreparedProof, ...]
    rvc_evidence: tuple[Rvc, ...]
    sender: ReplicaId
    signature: bytes = b""

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.new_view).u64(self.stable_round)
        w.u32(len(self.certificates))
        for c in self.certificates:
            c.encode(w)
        w.u32(len(self.prepared))
        for p in self.prepared:
            p.encode(w)
        w.u32(len(self.rvc_evidence))
        for e in self.rvc_evidence:
            w.raw(e.signed_bytes).blob(e.signature)
        self.sender.encode(w)


@dataclass(frozen=True)
class NewView(Message):
    kind: ClassVar[Kind] = Kind.NEWVIEW

    view: int
    viewchanges: tuple[ViewChange, ...]
    certificates: tuple[CommitCertificate, ...]
    preprepares: tuple[PrePrepare, ...]

    def _encode_body(self, w: Writer) -> None:
        w.u64(self.view).u32(len(self.viewchanges))
        for vc in self.viewchanges:
            w.raw(vc.signed_bytes).blob(vc.signature)
        w.u32(len(self.certificates))
        for c in self.certificates:
            c.encode(w)
        w.u32(len(self.preprepares))
        for p in self.preprepares:
            p.encode(w)


@dataclass(frozen=True)
class GlobalShare(Message):
    """A certified request shipped from its origin cluster to another cluster."""

    kind: ClassVar[Kind] = Kind.GLOBAL_SHARE

    request: ClientRequest
    certificate: CommitCertificate
    origin_cluster: int
    round: Round

    @classmethod
    def of(cls, cert: CommitCertificate) -> "GlobalShare":
        return cls(cert.request, cert, cert.origin_cluster, cert.round)

    def _encode_body(self, w: Writer) -> None:
        w.blob(self.request.canonical)
        self.certificate.encode(w)
        w.u32(self.origin_cluster - 1).u64(self.round)


@dataclass(frozen=True)
class Drvc(Message):
    """Local announcement that ``target_cluster`` failed to share ``round``."""

    kind: ClassVar[Kind] = Kind.DRVC

    target_cluster: int
    round: Round
    v: int
    sender: ReplicaId

    def _encode_body(self, w: Writer) -> None:
        w.u32(self.target_cluster - 1).u64(self.round).u64(self.v)
        self.sender.encode(w)


@dataclass(frozen=True)
class ClientResponse(Message):
    kind: ClassVar[Kind] = Kind.RESPONSE

    client_id: bytes
    nonce: int
    round: Round
    result_digest: bytes
    responder: ReplicaId
    view: int = 0

    def _encode_body(self, w: Writer) -> None:
        w.raw(self.client_id).u64(self.nonce).u64(self.round).raw(self.result_digest)
        self.responder.encode(w)
        w.u64(self.view)


def signed(msg: SignedMessage, keyring: Keyring) -> SignedMessage:
    """Return ``msg`` with its signature filled in by ``msg.sender``."""
    return dataclasses.replace(msg, signature=keyring.sign(msg.sender, msg.signed_bytes))


def auth_class(kind_or_msg) -> Auth:
    if isinstance(kind_or_msg, ClientRequest):
        return Auth.SIGNATURE
    return kind_or_msg.auth


def kind_of(msg) -> Kind:
    if isinstance(msg, ClientRequest):
        return Kind.REQUEST
    return msg.kind
