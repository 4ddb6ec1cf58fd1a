"""GeoBFT: topology-aware hierarchical Byzantine fault-tolerant consensus."""

from .core import (
    ClientId,
    ClientRequest,
    ConfigError,
    IncompleteRoundError,
    ReplicaId,
    SystemConfig,
    Write,
    commit_quorum,
    execution_order,
    total_tolerated_failures,
    weak_quorum,
)
from .crypto import Ed25519Suite, HashSuite, Keyring, digest, make_suite
from .execution import Block, Ledger, client_accept, verify_ledger
from .pbft import LocalReplication, verify_certificate
from .replica import Replica

__version__ = "0.1.0"

__all__ = [
    "Block",
    "ClientId",
    "ClientRequest",
    "ConfigError",
    "Ed25519Suite",
    "HashSuite",
    "IncompleteRoundError",
    "Keyring",
    "Ledger",
    "LocalReplication",
    "Replica",
    "ReplicaId",
    "SystemConfig",
    "Write",
    "client_accept",
    "commit_quorum",
    "digest",
    "execution_order",
    "make_suite",
    "total_tolerated_failures",
    "verify_certificate",
    "verify_ledger",
    "weak_quorum",
]
