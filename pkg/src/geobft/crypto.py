"""Signing, message authentication and digests.

Two interchangeable suites share one interface:

* :class:`Ed25519Suite` uses Ed25519 signatures, AES-CMAC tags and SHA-256.
* :class:`HashSuite` replaces signatures and MACs with keyed SHA-256 so that
  simulation traces are byte-reproducible and cheap. Its "public" key is a
  hash of the secret, and verification looks the secret up in the suite's
  key registry.

Message kinds declare which class of authentication they need; see
:class:`Auth`.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass
from typing import Hashable, Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import cmac
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import algorithms

DIGEST_SIZE = 32
MAC_KEY_SIZE = 16


class CryptoKeyError(KeyError):
    """Malformed or missing key material."""


class Auth(enum.Enum):
    """Authentication class of a message kind."""

    MAC = "mac"  # point-to-point; tag over the canonical bytes per link
    SIGNATURE = "signature"  # forwarded; carries a digital signature


def digest(message: bytes) -> bytes:
    """SHA-256 of ``message``."""
    return hashlib.sha256(message).digest()


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes
    owner: Hashable


class CryptoSuite:
    """Interface shared by the concrete suites."""

    name = "abstract"
    signature_size = 0

    def keypair(self, seed: bytes, owner: Hashable) -> KeyPair:
        raise NotImplementedError

    def sign(self, secret: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError

    def mac(self, shared_key: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify_mac(self, shared_key: bytes, message: bytes, tag: bytes) -> bool:
        if len(shared_key) != MAC_KEY_SIZE:
            return False
        return hmac.compare_digest(self.mac(shared_key, message), tag)

    digest = staticmethod(digest)


class HashSuite(CryptoSuite):
    """Deterministic keyed-hash stand-in for signatures and MACs."""

    name = "hash"
    signature_size = 32

    def __init__(self) -> None:
        self._secrets: dict[bytes, bytes] = {}

    def keypair(self, seed: bytes, owner: Hashable) -> KeyPair:
        secret = hashlib.sha256(b"hash-suite/secret" + seed).digest()
        public = hashlib.sha256(b"hash-suite/public" + secret).digest()
        self._secrets[public] = secret
        return KeyPair(public, secret, owner)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        if len(secret) != 32:
            raise CryptoKeyError("hash-suite secrets are 32 bytes")
        return hmac.new(secret, message, hashlib.sha256).digest()

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        secret = self._secrets.get(bytes(public))
        if secret is None or len(signature) != 32:
            return False
        expected = hmac.new(secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)

    def mac(self, shared_key: bytes, message: bytes) -> bytes:
        if len(shared_key) != MAC_KEY_SIZE:
            raise CryptoKeyError("MAC keys are 16 bytes")
        return hmac.new(shared_key, message, hashlib.sha256).digest()[:16]


class Ed25519Suite(CryptoSuite):
    """Ed25519 signatures, AES-128-CMAC tags, SHA-256 digests."""

    name = "ed25519"
    signature_size = 64

    def keypair(self, seed: bytes, owner: Hashable) -> KeyPair:
        secret = hashlib.sha256(b"ed25519/secret" + seed).digest()
        key = Ed25519PrivateKey.from_private_bytes(secret)
        public = key.public_key().public_bytes_raw()
        return KeyPair(public, secret, owner)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        try:
            key = Ed25519PrivateKey.from_private_bytes(bytes(secret))
        except ValueError as exc:
            raise CryptoKeyError(str(exc)) from exc
        return key.sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(bytes(public)).verify(
                bytes(signature), message
            )
        except (InvalidSignature, ValueError):
            return False
        return True

    def mac(self, shared_key: bytes, message: bytes) -> bytes:
        if len(shared_key) != MAC_KEY_SIZE:
            raise CryptoKeyError("MAC keys are 16 bytes")
        c = cmac.CMAC(algorithms.AES(bytes(shared_key)))
        c.update(message)
        return c.finalize()


SUITES = {"hash": HashSuite, "ed25519": Ed25519Suite}


def make_suite(name: str) -> CryptoSuite:
    try:
        return SUITES[name]()
    except KeyError:
        raise ValueError(f"unknown crypto suite {name!r}") from None


def _owner_bytes(owner: Hashable) -> bytes:
    wire = getattr(owner, "wire_bytes", None)
    if wire is not None:
        return wire()
    if isinstance(owner, (bytes, bytearray)):
        return bytes(owner)
    raise CryptoKeyError(f"cannot derive key material for {owner!r}")


class Keyring:
    """All key material of one scenario, derived deterministically from a seed.

    Pairwise MAC keys are derived per unordered pair of owners; asking for a
    pair that involves an unregistered owner raises :class:`CryptoKeyError`.
    """

    def __init__(self, suite: CryptoSuite, seed: int, owners: Iterable[Hashable]):
        self.suite = suite
        self._seed = seed.to_bytes(8, "little", signed=False)
        self._pairs: dict[Hashable, KeyPair] = {}
        self._by_bytes: dict[bytes, Hashable] = {}
        self._mac_cache: dict[tuple, bytes] = {}
        for owner in owners:
            self.register(owner)

    def register(self, owner: Hashable) -> KeyPair:
        if owner in self._pairs:
            return self._pairs[owner]
        ob = _owner_bytes(owner)
        pair = self.suite.keypair(self._seed + b"/key/" + ob, owner)
        self._pairs[owner] = pair
        self._by_bytes[ob] = owner
        return pair

    def __contains__(self, owner: Hashable) -> bool:
        return owner in self._pairs

    def keypair(self, owner: Hashable) -> KeyPair:
        try:
            return self._pairs[owner]
        except KeyError:
            raise CryptoKeyError(f"no key registered for {owner!r}") from None

    def public(self, owner: Hashable) -> bytes:
        return self.keypair(owner).public

    def sign(self, owner: Hashable, message: bytes) -> bytes:
        return self.suite.sign(self.keypair(owner).secret, message)

    def verify(self, owner: Hashable, message: bytes, signature: bytes) -> bool:
        pair = self._pairs.get(owner)
        if pair is None:
            return False
        return self.suite.verify(pair.public, message, signature)

    def mac_key(self, a: Hashable, b: Hashable) -> bytes:
        key = self._mac_cache.get((a, b))
        if key is not None:
            return key
        if a not in self._pairs or b not in self._pairs:
            raise CryptoKeyError(f"no pairwise key for {a!r} and {b!r}")
        ka, kb = sorted((_owner_bytes(a), _owner_bytes(b)))
        key = self._mac_cache.get((ka, kb))
        if key is None:
            key = hashlib.sha256(
                self._seed + b"/mac/" + len(ka).to_bytes(4, "little") + ka + kb
            ).digest()[:MAC_KEY_SIZE]
            self._mac_cache[(ka, kb)] = key
        self._mac_cache[(a, b)] = key
        return key

    def mac(self, sender: Hashable, receiver: Hashable, message: bytes) -> bytes:
        return self.suite.mac(self.mac_key(sender, receiver), message)

    def verify_mac(
        self, sender: Hashable, receiver: Hashable, message: bytes, tag: bytes
    ) -> bool:
        try:
            key = self.mac_key(sender, receiver)
        except CryptoKeyError:
            return False
        return self.suite.verify_mac(key, message, tag)
