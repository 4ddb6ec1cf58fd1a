"""Single-threaded discrete-event simulator.

Events are ordered by ``(time, sequence)``. Every replica owns a FIFO CPU:
deliveries and timers queue in its inbox and are handled one at a time, each
occupying the CPU for a cost derived from the work done (signature checks,
MACs, signing, executed transactions). Messages leave a sender through one
serialising link per destination region (bandwidth from the latency
matrix) and then incur the propagation delay.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any

from ..core import ClientId, ClientRequest, ReplicaId, RequestSigner, SystemConfig, Write
from ..crypto import Auth, Keyring, make_suite
from ..effects import Effects
from ..execution import ClientStatus, client_accept
from ..messages import (
    ClientResponse,
    CommitCertificate,
    GlobalShare,
    NewView,
    PrePrepare,
    SignedMessage,
    ViewChange,
    kind_of,
)
from ..replica import Replica
from .faults import Crash, FaultPlan
from .latency import deliver_delay
from .scenario import Scenario

log = logging.getLogger(__name__)

# Sizes in bytes at a batch of 100 transactions.
PREPREPARE_BYTES_100 = 5400
CERTIFICATE_EXTRA_BYTES = 1000
RESPONSE_BYTES_100 = 1500
SMALL_BYTES = 250


def request_bytes(request: ClientRequest) -> int:
    if request.is_noop or not request.payload:
        return SMALL_BYTES
    return max(SMALL_BYTES, PREPREPARE_BYTES_100 * request.transactions // 100)


def message_bytes(msg) -> int:
    if isinstance(msg, ClientRequest):
        return request_bytes(msg)
    if isinstance(msg, PrePrepare):
        return request_bytes(msg.request)
    if isinstance(msg, GlobalShare):
        return certificate_bytes(msg.certificate)
    if isinstance(msg, ClientResponse):
        return SMALL_BYTES
    if isinstance(msg, ViewChange):
        return (
            SMALL_BYTES
            + sum(certificate_bytes(c) for c in msg.certificates)
            + sum(request_bytes(p.preprepare.request) for p in msg.prepared)
        )
    if isinstance(msg, NewView):
        return (
            SMALL_BYTES
            + sum(message_bytes(v) for v in msg.viewchanges)
            + sum(request_bytes(p.request) for p in msg.preprepares)
        )
    return SMALL_BYTES


def certificate_bytes(cert: CommitCertificate) -> int:
    return request_bytes(cert.request) + CERTIFICATE_EXTRA_BYTES


def response_bytes(batch: int) -> int:
    return max(SMALL_BYTES, RESPONSE_BYTES_100 * batch // 100)


@dataclass
class Outstanding:
    request: ClientRequest
    sent_at: float
    responses: dict = field(default_factory=dict)
    broadcast: bool = False


class ClientPool:
    """Closed-loop clients of one home region.

    Keeps at most ``depth`` batches outstanding until ``batches`` batches
    have been accepted.
    """

    def __init__(self, home: int, cluster: int, ids: list[ClientId], keyring: Keyring,
                 batches: int, depth: int, batch_size: int, keyspace: int, rng: random.Random) -> None:
        self.home = home
        self.cluster = cluster
        self.ids = ids
        self.signers = [RequestSigner(c.raw, cluster, partial(keyring.sign, c)) for c in ids]
        self.batches = batches
        self.depth = depth
        self.batch_size = batch_size
        self.keyspace = keyspace
        self.rng = rng
        self.issued = 0
        self.accepted = 0
        self.outstanding: dict[tuple[bytes, int], Outstanding] = {}
        self.view = 0

    @property
    def done(self) -> bool:
        return self.accepted >= self.batches

    def next_request(self) -> ClientRequest | None:
        if self.issued >= self.batches or len(self.outstanding) >= self.depth:
            return None
        signer = self.signers[self.issued % len(self.signers)]
        self.issued += 1
        tag = f"{self.home}-"
        writes = [
            Write(f"k{tag}{self.rng.randrange(self.keyspace)}", self.rng.randbytes(8))
            for _ in range(self.batch_size)
        ]
        return signer.request(writes)


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    completed: bool
    duration_ms: float
    end_time: float
    replicas: dict[ReplicaId, Replica]
    faulty: frozenset
    latencies_ms: list[float]
    accepted_txns: int
    counts: Counter
    kind_counts: Counter
    local_messages: int
    global_messages: int
    client_messages: int
    dropped_messages: int
    events: int
    trace_digest: str
    trace: list[str] | None
    alarms: list[str]
    violations: list[str]
    placement: dict

    @property
    def correct(self) -> dict[ReplicaId, Replica]:
        return {r: rep for r, rep in self.replicas.items() if r not in self.faulty}

    @property
    def rounds_executed(self) -> int:
        c = self.correct
        return min((rep.executor.last_executed for rep in c.values()), default=0)

    @property
    def throughput(self) -> float:
        return self.accepted_txns / (self.duration_ms / 1000.0) if self.duration_ms > 0 else 0.0

    def cluster_of(self, r: ReplicaId) -> int:
        return r.cluster

    @property
    def rejected(self) -> int:
        return sum(rep.rejected for rep in self.replicas.values())

    @property
    def local_view_changes(self) -> int:
        clusters: dict[int, int] = {}
        for r, rep in self.correct.items():
            clusters[r.cluster] = max(clusters.get(r.cluster, 0), rep.pbft.views_installed)
        return sum(clusters.values())

    @property
    def remote_view_changes(self) -> int:
        clusters: dict[int, int] = {}
        for r, rep in self.correct.items():
            clusters[r.cluster] = max(clusters.get(r.cluster, 0), sum(rep.remote.triggered.values()))
        return sum(clusters.values())


class Simulator:
    def __init__(self, scenario: Scenario, seed: int | None = None, trace: bool = False,
                 max_time: float | None = None) -> None:
        if seed is not None:
            scenario = scenario.with_seed(seed)
        self.scenario = scenario
        geo = scenario.config
        self.seed = geo.seed
        self.flat = scenario.mode == "flat-pbft"
        if self.flat:
            total = geo.z * geo.n
            self.config = replace(geo, z=1, n=total, f=(total - 1) // 3)
        else:
            self.config = geo
        self.latency = scenario.latency
        self.rng = random.Random(self.seed)
        self.workload_rng = random.Random(self.seed ^ 0x3C3C_5A5A)
        self.max_time = max_time if max_time is not None else scenario.max_time
        self.cpu = scenario.cpu
        self.keep_trace = trace
        self.trace: list[str] | None = [] if trace else None
        self._hash = hashlib.sha256()

        self.region: dict[Any, int] = {}
        replica_ids = self.config.replicas()
        for r in replica_ids:
            self.region[r] = (r.local - 1) // geo.n + 1 if self.flat else r.cluster

        client_ids: dict[int, list[ClientId]] = {
            h: [ClientId.derive(h, i) for i in range(scenario.workload.clients)] for h in range(1, geo.z + 1)
        }
        for h, ids in client_ids.items():
            for c in ids:
                self.region[c] = h

        suite = make_suite(scenario.suite)
        self.keyring = Keyring(suite, self.seed, [*replica_ids, *(c for ids in client_ids.values() for c in ids)])
        self.replicas = {r: Replica(r, self.config, self.keyring, scenario.window) for r in replica_ids}

        behaviors = scenario.faults
        if self.flat:
            behaviors = tuple(
                Crash(ReplicaId(1, (b.replica.cluster - 1) * geo.n + b.replica.local), b.at_time)
                if isinstance(b, Crash) else b
                for b in behaviors
            )
        self.faults = FaultPlan(behaviors, self.config, self.seed)

        wl = scenario.workload
        self.client_timeout = wl.client_timeout if wl.client_timeout is not None else 4 * geo.base_timeout
        self.pools: dict[int, ClientPool] = {}
        self.pool_of: dict[ClientId, ClientPool] = {}
        for h, ids in client_ids.items():
            pool = ClientPool(h, 1 if self.flat else h, ids, self.keyring, wl.batches, wl.depth,
                              geo.batch_size, wl.keyspace, self.workload_rng)
            self.pools[h] = pool
            for c in ids:
                self.pool_of[c] = pool

        self._heap: list = []
        self._seq = 0
        self.now = 0.0
        self._timer_gen: dict[tuple, int] = {}
        self._inbox: dict[ReplicaId, deque] = {r: deque() for r in replica_ids}
        self._busy: set[ReplicaId] = set()
        self._link_free: dict[tuple, float] = {}

        self.counts: Counter = Counter()
        self.kind_counts: Counter = Counter()
        self.latencies: list[float] = []
        self.accepted_txns = 0
        self.events = 0
        self.alarms: list[str] = []
        self.violations: list[str] = []
        self.finished_at: float | None = None
        self._last_accept = 0.0

    # -- event queue ------------------------------------------------------

    def _push(self, t: float, kind: str, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _record(self, line: str) -> None:
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.trace is not None:
            self.trace.append(line)

    # -- network ----------------------------------------------------------

    def _transmit(self, src, dst, msg, depart: float) -> None:
        if isinstance(src, ReplicaId) and not self.faults.allow_send(src, dst, msg, depart):
            return
        a, b = self.region[src], self.region[dst]
        size = response_bytes(self.config.batch_size) if isinstance(msg, ClientResponse) else message_bytes(msg)
        client_side = not isinstance(src, ReplicaId) or not isinstance(dst, ReplicaId)
        if client_side:
            self.counts["client"] += 1
        elif a == b:
            self.counts["local"] += 1
            self.kind_counts[kind_of(msg).name] += 1
        else:
            self.counts["global"] += 1
            self.kind_counts[kind_of(msg).name] += 1
        self.counts["bytes"] += size
        link = (src, b)
        start = max(depart, self._link_free.get(link, 0.0))
        done = start + self.latency.serialization_ms(a, b, size)
        self._link_free[link] = done
        if self.faults.drop(a, b):
            self.counts["dropped"] += 1
            return
        arrival = done + deliver_delay(src, dst, self.latency, self.rng, self.region.__getitem__)
        tag = None
        if not isinstance(msg, ClientRequest) and msg.auth is Auth.MAC:
            tag = self.keyring.mac(src, dst, msg.signed_bytes)
        self._push(arrival, "deliver", dst, src, msg, tag)

    # -- replica processing -----------------------------------------------

    def _enqueue(self, node: ReplicaId, item) -> None:
        self._inbox[node].append(item)
        if node not in self._busy:
            self._busy.add(node)
            self._push(self.now, "cpu", node)

    def _process(self, node: ReplicaId) -> None:
        inbox = self._inbox[node]
        item = inbox.popleft()
        rep = self.replicas[node]
        meter = rep.meter
        v0, m0, t0 = meter["verify"], meter["mac"], meter["txn"]
        if item[0] == "msg":
            _, src, msg, tag = item
            if self.keep_trace:
                # Delivery lines are kept out of the digest so it does not depend on tracing.
                self.trace.append(f"{self.now:.4f} deliver {src} {node} {kind_of(msg).name} r={getattr(msg, 'round', '-')}")
            fx = rep.handle(msg, src, self.now, tag)
        else:
            _, key, gen = item
            if self._timer_gen.get((node, key)) != gen:
                self._next(node, self.now)
                return
            fx = rep.on_timer(key, self.now)
        signs = 0
        seen = set()
        for _, m in fx.sends:
            if isinstance(m, SignedMessage) and m.sender == node and id(m) not in seen:
                seen.add(id(m))
                signs += 1
        cost = self.cpu.cost_ms(meter["verify"] - v0, meter["mac"] - m0 + len(fx.sends), signs, meter["txn"] - t0)
        done = self.now + cost
        self._apply(node, fx, done)
        self._next(node, done)

    def _next(self, node: ReplicaId, at: float) -> None:
        if self._inbox[node]:
            self._push(at, "cpu", node)
        else:
            self._busy.discard(node)

    def _apply(self, node: ReplicaId, fx: Effects, at: float) -> None:
        for kind, fields in fx.events:
            detail = " ".join(f"{k}={v}" for k, v in fields.items())
            self._record(f"{at:.4f} {node} {kind} {detail}".rstrip())
            if kind == "alarm":
                self.alarms.append(f"{node}: {fields.get('reason')}")
        for key, delay in fx.timers:
            gk = (node, key)
            gen = self._timer_gen.get(gk, 0) + 1
            self._timer_gen[gk] = gen
            if delay is not None:
                self._push(at + delay, "timer", node, key, gen)
        if self.faults.crashed(node, at):
            return
        for dst, msg in fx.sends:
            self._transmit(node, dst, msg, at)
        if any(k == "executed" for k, _ in fx.events):
            self._check_done(at)

    # -- clients ----------------------------------------------------------

    def _client_send(self, pool: ClientPool, req: ClientRequest, broadcast: bool) -> None:
        cid = ClientId(req.client_id)
        if broadcast:
            for r in self.config.replicas(pool.cluster):
                self._transmit(cid, r, req, self.now)
        else:
            view = pool.view
            self._transmit(cid, self.config.replicas(pool.cluster)[view % self.config.n], req, self.now)

    def _client_fill(self, pool: ClientPool) -> None:
        while True:
            req = pool.next_request()
            if req is None:
                return
            pool.outstanding[(req.client_id, req.nonce)] = Outstanding(req, self.now)
            self._client_send(pool, req, False)
            self._push(self.now + self.client_timeout, "client_timer", pool.home, (req.client_id, req.nonce))

    def _client_response(self, cid: ClientId, src, msg: ClientResponse, tag) -> None:
        pool = self.pool_of[cid]
        if tag is None or not self.keyring.verify_mac(src, cid, msg.signed_bytes, tag):
            return
        out = pool.outstanding.get((msg.client_id, msg.nonce))
        if out is None:
            return
        out.responses.setdefault(src, msg)
        verdict = client_accept(out.responses.values(), self.config)
        if verdict.status is ClientStatus.VIOLATION:
            self.violations.append(f"client {cid}: conflicting responses for nonce {msg.nonce}")
            return
        if verdict.status is ClientStatus.ACCEPTED:
            del pool.outstanding[(msg.client_id, msg.nonce)]
            pool.accepted += 1
            pool.view = max(pool.view, max(r.view for r in out.responses.values()))
            self.latencies.append(self.now - out.sent_at)
            self.accepted_txns += out.request.transactions
            self._last_accept = self.now
            self._client_fill(pool)
            self._check_done(self.now)

    def _client_timer(self, home: int, key) -> None:
        pool = self.pools[home]
        out = pool.outstanding.get(key)
        if out is None:
            return
        out.broadcast = True
        self._client_send(pool, out.request, True)
        self._push(self.now + self.client_timeout, "client_timer", home, key)

    # -- termination ------------------------------------------------------

    def _check_done(self, at: float) -> None:
        if self.finished_at is not None:
            return
        if not all(p.done for p in self.pools.values()):
            return
        correct = [rep for r, rep in self.replicas.items() if r not in self.faults.faulty and not rep.halted]
        frontier = max((rep.executor.max_seen for rep in correct), default=0)
        if all(rep.executor.last_executed >= frontier for rep in correct):
            self.finished_at = max(at, self._last_accept)

    # -- main loop --------------------------------------------------------

    def run(self) -> SimResult:
        for h in sorted(self.pools):
            self._client_fill(self.pools[h])
        if all(p.batches == 0 for p in self.pools.values()):
            self.finished_at = 0.0
        while self._heap and self.finished_at is None:
            t, _, kind, payload = heapq.heappop(self._heap)
            if self.max_time is not None and t > self.max_time:
                self.now = self.max_time
                break
            self.now = t
            self.events += 1
            if kind == "cpu":
                self._process(payload[0])
            elif kind == "deliver":
                dst, src, msg, tag = payload
                if isinstance(dst, ClientId):
                    self._client_response(dst, src, msg, tag)
                elif not self.faults.crashed(dst, t):
                    self._enqueue(dst, ("msg", src, msg, tag))
            elif kind == "timer":
                node, key, gen = payload
                if self._timer_gen.get((node, key)) == gen and not self.faults.crashed(node, t):
                    self._enqueue(node, ("timer", key, gen))
            elif kind == "client_timer":
                self._client_timer(*payload)
        completed = self.finished_at is not None
        end = self.finished_at if completed else self.now
        duration = self._last_accept if self._last_accept > 0 else end
        return SimResult(
            scenario=self.scenario,
            seed=self.seed,
            completed=completed,
            duration_ms=duration,
            end_time=end,
            replicas=self.replicas,
            faulty=self.faults.faulty,
            latencies_ms=self.latencies,
            accepted_txns=self.accepted_txns,
            counts=self.counts,
            kind_counts=self.kind_counts,
            local_messages=self.counts["local"],
            global_messages=self.counts["global"],
            client_messages=self.counts["client"],
            dropped_messages=self.counts["dropped"],
            events=self.events,
            trace_digest=self._hash.hexdigest(),
            trace=self.trace,
            alarms=self.alarms,
            violations=self.violations,
            placement=dict(self.region),
        )


def run(scenario: Scenario, seed: int | None = None, trace: bool = False, max_time: float | None = None) -> SimResult:
    return Simulator(scenario, seed, trace, max_time).run()
