"""Round assembly, deterministic execution and the certificate-anchored ledger.

A round executes once it holds one certified request from every cluster.
Each executed request becomes one block at height ``(round - 1) * z +
cluster``. The hashed block header covers height, round, cluster, the
request and the parent digest; the commit certificate travels with the
block as evidence but is not hashed into the chain, because two correct
replicas may assemble different (equally valid) commit subsets for the
same request.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .codec import DecodeError, Reader, Writer
from .core import ClientRequest, Round, SystemConfig, execution_order
from .crypto import DIGEST_SIZE, Keyring, digest
from .messages import ClientResponse, CommitCertificate
from .pbft import verify_certificate

GENESIS = bytes(DIGEST_SIZE)


class ConflictError(RuntimeError):
    """Two different requests were offered for one (round, cluster) slot."""


def block_height(rnd: Round, cluster: int, z: int) -> int:
    return (rnd - 1) * z + cluster


@dataclass(frozen=True)
class Block:
    height: int
    round: Round
    cluster: int
    request: ClientRequest
    certificate: CommitCertificate
    parent_digest: bytes

    def header_bytes(self) -> bytes:
        w = Writer().u8(0x42).u64(self.height).u64(self.round).u32(self.cluster - 1)
        return w.blob(self.request.canonical).raw(self.parent_digest).getvalue()

    @property
    def digest(self) -> bytes:
        return digest(self.header_bytes())

    def canonical(self) -> bytes:
        """Header plus certificate evidence; the export record format."""
        return Writer().blob(self.header_bytes()).blob(self.certificate.canonical).getvalue()

    @classmethod
    def from_canonical(cls, data: bytes) -> "Block":
        r = Reader(data)
        header = Reader(r.blob())
        cert = CommitCertificate.decode(r)
        r.expect_end()
        if header.u8() != 0x42:
            raise DecodeError("not a block header")
        height, rnd, cluster = header.u64(), header.u64(), header.u32() + 1
        inner = Reader(header.blob())
        request = ClientRequest.decode(inner)
        inner.expect_end()
        parent = header.raw(DIGEST_SIZE)
        header.expect_end()
        return cls(height, rnd, cluster, request, cert, parent)


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=list)

    @property
    def head(self) -> bytes:
        return self.blocks[-1].digest if self.blocks else GENESIS

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    def append(self, rnd: Round, cluster: int, cert: CommitCertificate, z: int) -> Block:
        b = Block(block_height(rnd, cluster, z), rnd, cluster, cert.request, cert, self.head)
        self.blocks.append(b)
        return b

    def export(self) -> str:
        return "".join(b.canonical().hex() + "\n" for b in self.blocks)

    @classmethod
    def load(cls, text: str) -> "Ledger":
        blocks = []
        for i, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                blocks.append(Block.from_canonical(bytes.fromhex(line)))
            except (ValueError, DecodeError) as exc:
                raise DecodeError(f"record {i}: {exc}") from exc
        return cls(blocks)


class LedgerFault(enum.Enum):
    HEIGHT = "height"
    ORDER = "order"
    PARENT = "parent digest"
    CERTIFICATE = "certificate"
    REQUEST = "request mismatch"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class LedgerVerdict:
    accepted: bool
    height: int | None = None
    reason: LedgerFault | None = None

    def __bool__(self) -> bool:
        return self.accepted


def verify_ledger(ledger: Ledger | Iterable[Block], config: SystemConfig, keyring: Keyring) -> LedgerVerdict:
    """Check heights, per-round cluster order, the digest chain and every certificate."""
    parent = GENESIS
    for i, b in enumerate(ledger, 1):
        if b.height != i:
            return LedgerVerdict(False, i, LedgerFault.HEIGHT)
        if not 1 <= b.cluster <= config.z or block_height(b.round, b.cluster, config.z) != b.height:
            return LedgerVerdict(False, i, LedgerFault.ORDER)
        if b.parent_digest != parent:
            return LedgerVerdict(False, i, LedgerFault.PARENT)
        cert = b.certificate
        if cert.round != b.round or cert.origin_cluster != b.cluster or cert.request != b.request:
            return LedgerVerdict(False, i, LedgerFault.REQUEST)
        if not verify_certificate(config, cert, keyring):
            return LedgerVerdict(False, i, LedgerFault.CERTIFICATE)
        parent = b.digest
    return LedgerVerdict(True)


@dataclass
class ExecutionState:
    """Keyed store plus a running digest of every applied write."""

    store: dict[str, bytes] = field(default_factory=dict)
    executed_txns: int = 0
    executed_by_cluster: dict[int, int] = field(default_factory=dict)
    applied: set[tuple[bytes, int]] = field(default_factory=set)
    log_digest: bytes = GENESIS

    def apply(self, request: ClientRequest) -> bytes:
        """Apply ``request`` and return its result digest."""
        if request.is_noop:
            return digest(b"noop" + request.digest)
        key = (request.client_id, request.nonce)
        if key in self.applied:
            # The same client request certified twice; execute it once.
            return digest(b"dup" + request.digest)
        self.applied.add(key)
        h = hashlib.sha256(self.log_digest)
        for op in request.payload:
            self.store[op.key] = op.value
            h.update(op.key.encode())
            h.update(len(op.value).to_bytes(4, "little"))
            h.update(op.value)
        self.log_digest = h.digest()
        self.executed_txns += request.transactions
        self.executed_by_cluster[request.cluster] = (
            self.executed_by_cluster.get(request.cluster, 0) + request.transactions
        )
        return digest(b"result" + request.digest + self.log_digest)

    def store_digest(self) -> bytes:
        h = hashlib.sha256()
        for k in sorted(self.store):
            v = self.store[k]
            kb = k.encode()
            h.update(len(kb).to_bytes(4, "little") + kb + len(v).to_bytes(4, "little") + v)
        return h.digest()


def replay(ledger: Ledger) -> ExecutionState:
    state = ExecutionState()
    for b in ledger:
        state.apply(b.request)
    return state


@dataclass
class ExecutedRound:
    round: Round
    blocks: list[Block]
    results: list[tuple[ClientRequest, bytes]]
    head: bytes = GENESIS  # ledger head right after this round
    txns_before: dict[int, int] = field(default_factory=dict)
    txns_after: dict[int, int] = field(default_factory=dict)


class Executor:
    """Per-replica round buffers and the in-order execution loop."""

    def __init__(self, config: SystemConfig, z: int | None = None) -> None:
        self.config = config
        self.z = config.z if z is None else z
        self.buffers: dict[Round, dict[int, CommitCertificate]] = {}
        self.next_round: Round = 1
        self.state = ExecutionState()
        self.ledger = Ledger()
        self.max_seen: Round = 0

    @property
    def last_executed(self) -> Round:
        return self.next_round - 1

    def offer(self, cert: CommitCertificate) -> bool:
        """Fill the (round, cluster) slot; True if newly filled."""
        if cert.round < self.next_round:
            return False
        slot = self.buffers.setdefault(cert.round, {})
        held = slot.get(cert.origin_cluster)
        if held is not None:
            if held.request.digest != cert.request.digest:
                raise ConflictError(f"round {cert.round} cluster {cert.origin_cluster}")
            return False
        slot[cert.origin_cluster] = cert
        self.max_seen = max(self.max_seen, cert.round)
        return True

    def has(self, rnd: Round, cluster: int) -> bool:
        return rnd < self.next_round or cluster in self.buffers.get(rnd, {})

    def complete(self, rnd: Round) -> bool:
        return len(self.buffers.get(rnd, ())) == self.z

    def try_execute(self, on_round: Callable[[ExecutedRound], None] | None = None) -> list[ExecutedRound]:
        done = []
        while self.complete(self.next_round):
            rnd = self.next_round
            certs = self.buffers.pop(rnd)
            ordered = execution_order(rnd, ((c, certs[c].request) for c in certs), self.z)
            blocks, results = [], []
            before = dict(self.state.executed_by_cluster)
            for request in ordered:
                cert = certs[request.cluster]
                blocks.append(self.ledger.append(rnd, request.cluster, cert, self.z))
                results.append((request, self.state.apply(request)))
            self.next_round += 1
            er = ExecutedRound(rnd, blocks, results, self.ledger.head,
                               before, dict(self.state.executed_by_cluster))
            done.append(er)
            if on_round is not None:
                on_round(er)
        return done


def noop_rounds(next_free: Round, target: Round, queue_empty: bool) -> list[Round]:
    """Rounds an idle primary fills with no-ops after a remote share for ``target``."""
    if not queue_empty or target < next_free:
        return []
    return list(range(next_free, target + 1))


class ClientStatus(enum.Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    VIOLATION = "violation"


@dataclass(frozen=True)
class ClientVerdict:
    status: ClientStatus
    result: bytes | None = None


def client_accept(responses: Iterable[ClientResponse], config: SystemConfig) -> ClientVerdict:
    """Accept once f + 1 distinct replicas agree on a result digest."""
    first: dict = {}
    for r in responses:
        first.setdefault(r.responder, r.result_digest)
    tally: dict[bytes, int] = {}
    for d in first.values():
        tally[d] = tally.get(d, 0) + 1
    winners = sorted(d for d, c in tally.items() if c >= config.f + 1)
    if len(winners) > 1:
        return ClientVerdict(ClientStatus.VIOLATION)
    if winners:
        return ClientVerdict(ClientStatus.ACCEPTED, winners[0])
    return ClientVerdict(ClientStatus.PENDING)
