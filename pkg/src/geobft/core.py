"""Identities, configuration, quorum arithmetic and client requests."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

from .codec import DecodeError, Reader, Writer
from .crypto import digest

Round = int

NOOP_CLIENT = bytes(32)


class ConfigError(ValueError):
    pass


class IncompleteRoundError(ValueError):
    """A round's request set does not hold exactly one entry per cluster."""


@dataclass(frozen=True)
class SystemConfig:
    z: int
    n: int
    f: int
    batch_size: int = 100
    base_timeout: float = 500.0
    checkpoint_period: int = 600
    seed: int = 0

    def __post_init__(self) -> None:
        if self.z < 1:
            raise ConfigError(f"need at least one cluster, got z={self.z}")
        if self.f < 0 or self.n <= 3 * self.f:
            raise ConfigError(f"clusters need n > 3f, got n={self.n}, f={self.f}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.base_timeout > 0:
            raise ConfigError("base_timeout must be positive")
        if self.checkpoint_period < 1:
            raise ConfigError("checkpoint_period must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    def replicas(self, cluster: int | None = None) -> list["ReplicaId"]:
        clusters = range(1, self.z + 1) if cluster is None else [cluster]
        return [ReplicaId(c, i) for c in clusters for i in range(1, self.n + 1)]

    def clusters(self) -> range:
        return range(1, self.z + 1)


def commit_quorum(config: SystemConfig) -> int:
    return config.n - config.f


def weak_quorum(config: SystemConfig) -> int:
    return config.f + 1


def total_tolerated_failures(config: SystemConfig) -> int:
    return config.f * config.z


@dataclass(frozen=True, order=True)
class ReplicaId:
    """Replica ``local`` (1-based) of cluster ``cluster`` (1-based).

    Ordering is cluster-major. The wire form is 0-based.
    """

    cluster: int
    local: int

    def __str__(self) -> str:
        return f"R{self.cluster}.{self.local}"

    @cached_property
    def _wire(self) -> bytes:
        return Writer().u8(0x52).u32(self.cluster - 1).u32(self.local - 1).getvalue()

    def wire_bytes(self) -> bytes:
        return self._wire

    def encode(self, w: Writer) -> None:
        w.u32(self.cluster - 1).u32(self.local - 1)

    @classmethod
    def decode(cls, r: Reader) -> "ReplicaId":
        return cls(r.u32() + 1, r.u32() + 1)


@dataclass(frozen=True)
class ClientId:
    """Opaque 32-byte client identity."""

    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != 32:
            raise ValueError("client ids are 32 bytes")

    @classmethod
    def derive(cls, cluster: int, index: int) -> "ClientId":
        return cls(digest(b"client" + cluster.to_bytes(4, "little") + index.to_bytes(4, "little")))

    def wire_bytes(self) -> bytes:
        return b"C" + self.raw

    def __str__(self) -> str:
        return "C" + self.raw[:4].hex()


@dataclass(frozen=True)
class Write:
    key: str
    value: bytes


@dataclass(frozen=True)
class ClientRequest:
    """A batch of keyed writes signed by a client, or a structural no-op.

    A no-op carries its proposing cluster and round instead of a client
    signature; its payload is empty.
    """

    client_id: bytes
    cluster: int
    payload: tuple[Write, ...]
    signature: bytes = b""
    is_noop: bool = False
    nonce: int = 0  # client-side sequence number, or the round for a no-op

    @classmethod
    def noop(cls, cluster: int, round: Round) -> "ClientRequest":
        return cls(NOOP_CLIENT, cluster, (), b"", True, round)

    def _encode_body(self, w: Writer) -> None:
        w.u8(0x01).raw(self.client_id).u32(self.cluster - 1).bool(self.is_noop)
        w.u64(self.nonce).u32(len(self.payload))
        for op in self.payload:
            w.text(op.key).blob(op.value)

    @cached_property
    def signed_bytes(self) -> bytes:
        w = Writer()
        self._encode_body(w)
        return w.getvalue()

    @cached_property
    def canonical(self) -> bytes:
        return Writer().raw(self.signed_bytes).blob(self.signature).getvalue()

    @cached_property
    def digest(self) -> bytes:
        return digest(self.canonical)

    @property
    def transactions(self) -> int:
        return len(self.payload)

    def encode(self, w: Writer) -> None:
        w.raw(self.canonical)

    @classmethod
    def decode(cls, r: Reader) -> "ClientRequest":
        if r.u8() != 0x01:
            raise DecodeError("not a client request")
        client_id = r.raw(32)
        cluster = r.u32() + 1
        is_noop = r.bool()
        nonce = r.u64()
        count = r.u32()
        payload = tuple(Write(r.text(), r.blob()) for _ in range(count))
        signature = r.blob()
        return cls(client_id, cluster, payload, signature, is_noop, nonce)

    def structurally_valid(self, cluster: int | None = None, round: Round | None = None) -> bool:
        if cluster is not None and self.cluster != cluster:
            return False
        if self.is_noop:
            return (
                not self.payload
                and not self.signature
                and self.client_id == NOOP_CLIENT
                and (round is None or self.nonce == round)
            )
        return len(self.client_id) == 32 and self.client_id != NOOP_CLIENT


def execution_order(
    round: Round, certified: Iterable[tuple[int, ClientRequest]], z: int
) -> list[ClientRequest]:
    """Order one round's requests by ascending cluster index.

    ``certified`` must hold exactly one entry for each cluster ``1..z``.
    """
    slots: dict[int, ClientRequest] = {}
    for cluster, request in certified:
        if cluster in slots:
            raise IncompleteRoundError(f"round {round}: duplicate entry for cluster {cluster}")
        if not 1 <= cluster <= z:
            raise IncompleteRoundError(f"round {round}: cluster {cluster} out of range")
        slots[cluster] = request
    missing = [c for c in range(1, z + 1) if c not in slots]
    if missing:
        raise IncompleteRoundError(f"round {round}: missing clusters {missing}")
    return [slots[c] for c in range(1, z + 1)]


@dataclass
class RequestSigner:
    """Builds signed client requests for one client."""

    client_id: bytes
    cluster: int
    sign: object = field(repr=False)  # callable(bytes) -> bytes
    next_nonce: int = 1

    def request(self, writes: Iterable[Write]) -> ClientRequest:
        unsigned = ClientRequest(self.client_id, self.cluster, tuple(writes), b"", False, self.next_nonce)
        self.next_nonce += 1
        return ClientRequest(
            unsigned.client_id,
            unsigned.cluster,
            unsigned.payload,
            self.sign(unsigned.signed_bytes),
            False,
            unsigned.nonce,
        )
