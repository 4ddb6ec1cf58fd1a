"""Builders shared by the unit tests."""

from __future__ import annotations

from collections import deque

from geobft import crypto
from geobft.core import ClientId, ReplicaId, RequestSigner, SystemConfig, Write
from geobft.crypto import Keyring
from geobft.harness import Metrics
from geobft.messages import Commit, CommitCertificate, PrePrepare, signed
from geobft.pbft import LocalReplication


def make_keyring(config: SystemConfig, clients=2, suite="hash") -> Keyring:
    owners = list(config.replicas())
    owners += [ClientId.derive(c, i) for c in config.clusters() for i in range(clients)]
    return Keyring(crypto.make_suite(suite), config.seed, owners)


def make_request(keyring, cluster=1, index=0, writes=(("a", b"1"),), nonce=None):
    cid = ClientId.derive(cluster, index)
    signer = RequestSigner(cid.raw, cluster, lambda m: keyring.sign(cid, m))
    if nonce is not None:
        signer.next_nonce = nonce
    return signer.request(Write(k, v) for k, v in writes)


def make_cert(config, keyring, request, rnd=1, view=0, signers=None) -> CommitCertificate:
    cluster = request.cluster
    pp = PrePrepare(view, rnd, cluster, request.digest, request)
    q = config.n - config.f
    signers = signers or [ReplicaId(cluster, i) for i in range(1, q + 1)]
    commits = tuple(signed(Commit(view, rnd, request.digest, s), keyring) for s in signers)
    return CommitCertificate(request, rnd, cluster, pp, commits)


class ClusterNet:
    """Synchronous FIFO delivery between the LocalReplication instances of one cluster."""

    def __init__(self, config, keyring, cluster=1, silent=()):
        self.config = config
        members = config.replicas(cluster)
        self.nodes = {m: LocalReplication(m, members, config, keyring) for m in members}
        self.queue = deque()
        self.silent = set(silent)
        self.sent = []
        self.certs = {m: [] for m in members}
        self.events = []
        self.now = 0.0

    def absorb(self, src, fx):
        for dst, msg in fx.sends:
            if src in self.silent:
                continue
            self.sent.append((src, dst, msg))
            self.queue.append((src, dst, msg))
        self.certs[src].extend(fx.certificates)
        self.events.extend((src, k, f) for k, f in fx.events)
        fx.sends.clear()
        fx.certificates.clear()
        fx.events.clear()

    def run(self):
        from geobft.effects import Effects
        from geobft.messages import Checkpoint, NewView, Prepare, ViewChange

        while self.queue:
            src, dst, msg = self.queue.popleft()
            node = self.nodes[dst]
            fx = Effects()
            if isinstance(msg, PrePrepare):
                node.handle_preprepare(msg, src, fx)
            elif isinstance(msg, Prepare):
                node.handle_prepare(msg, src, fx)
            elif isinstance(msg, Commit):
                node.handle_commit(msg, src, fx)
            elif isinstance(msg, Checkpoint):
                node.handle_checkpoint(msg, src, fx)
            elif isinstance(msg, ViewChange):
                node.handle_viewchange(msg, src, self.now, fx)
            elif isinstance(msg, NewView):
                node.handle_newview(msg, src, self.now, fx)
            self.absorb(dst, fx)


def fake(throughput, **kw):
    base = dict(
        scenario="s", mode="geobft", seed=1, completed=True, throughput=throughput,
        latency_mean_ms=10.0, latency_p50_ms=9.0, latency_p90_ms=12.0, latency_p99_ms=13.0,
        local_messages=100, global_messages=8, client_messages=4, rejected_messages=0,
        local_view_changes=0, remote_view_changes=0, rounds_executed=4, accepted_txns=40,
        duration_ms=100.0, trace_digest="x",
    )
    base.update(kw)
    return Metrics(**base)
