import itertools
import random

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from geobft.codec import Reader, Writer
from geobft.core import ClientRequest, ReplicaId, SystemConfig, Write, commit_quorum, execution_order
from geobft.execution import ClientStatus, client_accept
from geobft.harness import average
from geobft.messages import ClientResponse
from geobft.sim import Simulator, parse_scenario
from helpers import fake

shapes = st.integers(min_value=0, max_value=5).flatmap(
    lambda f: st.tuples(st.just(f), st.integers(min_value=3 * f + 1, max_value=3 * f + 4))
)


@given(st.lists(st.one_of(
    st.tuples(st.just("u8"), st.integers(0, 255)),
    st.tuples(st.just("u32"), st.integers(0, 2**32 - 1)),
    st.tuples(st.just("u64"), st.integers(0, 2**64 - 1)),
    st.tuples(st.just("bool"), st.booleans()),
    st.tuples(st.just("blob"), st.binary(max_size=64)),
    st.tuples(st.just("text"), st.text(max_size=20)),
)))
def test_codec_round_trip(items):
    w = Writer()
    for kind, value in items:
        getattr(w, kind)(value)
    r = Reader(w.getvalue())
    assert [getattr(r, kind)() for kind, _ in items] == [v for _, v in items]
    r.expect_end()


requests = st.builds(
    ClientRequest,
    client_id=st.binary(min_size=32, max_size=32),
    cluster=st.integers(1, 8),
    payload=st.lists(st.builds(Write, st.text(min_size=1, max_size=8), st.binary(max_size=8)),
                     min_size=1, max_size=5).map(tuple),
    signature=st.binary(max_size=64),
    is_noop=st.just(False),
    nonce=st.integers(0, 2**64 - 1),
)


@given(requests)
def test_request_round_trip(req):
    r = Reader(req.canonical)
    assert ClientRequest.decode(r) == req
    r.expect_end()


@given(st.integers(1, 50), st.integers(1, 50))
def test_replica_wire_round_trip(c, i):
    rid = ReplicaId(c, i)
    w = Writer()
    rid.encode(w)
    assert ReplicaId.decode(Reader(w.getvalue())) == rid


@given(st.integers(1, 8), st.randoms(use_true_random=False))
def test_execution_order_ignores_arrival(z, rnd):
    reqs = [(c, ClientRequest.noop(c, 5)) for c in range(1, z + 1)]
    shuffled = list(reqs)
    rnd.shuffle(shuffled)
    assert execution_order(5, shuffled, z) == [r for _, r in reqs]


@given(shapes)
def test_commit_quorums_share_an_honest_replica(shape):
    f, n = shape
    q = commit_quorum(SystemConfig(z=1, n=n, f=f))
    # Worst case overlap of two quorums exceeds the f possibly faulty members.
    assert 2 * q - n >= f + 1
    if n <= 7:
        members = range(n)
        for a in itertools.combinations(members, q):
            for b in itertools.combinations(members, q):
                assert len(set(a) & set(b)) >= f + 1


@given(shapes, st.data())
def test_client_accepts_only_honest_results(shape, data):
    f, n = shape
    config = SystemConfig(z=1, n=n, f=f)
    honest_digest = b"\x01" * 32
    faulty = data.draw(st.sets(st.integers(1, n), max_size=f))
    responders = data.draw(st.permutations(list(range(1, n + 1))))
    responses = []
    for i in responders:
        d = data.draw(st.sampled_from([b"\x02" * 32, b"\x03" * 32, honest_digest])) if i in faulty else honest_digest
        responses.append(ClientResponse(b"c" * 32, 1, 1, d, ReplicaId(1, i)))
    verdict = client_accept(responses, config)
    assert verdict.status is ClientStatus.ACCEPTED and verdict.result == honest_digest
    # Any prefix either waits or accepts the honest result.
    k = data.draw(st.integers(0, len(responses)))
    early = client_accept(responses[:k], config)
    assert early.status is not ClientStatus.VIOLATION
    if early.status is ClientStatus.ACCEPTED:
        assert early.result == honest_digest


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=10), st.randoms(use_true_random=False))
def test_average_permutation_invariant(values, rnd):
    runs = [fake(v, latency_mean_ms=v / 7) for v in values]
    shuffled = list(runs)
    rnd.shuffle(shuffled)
    assert average(runs) == average(shuffled)


SCENARIO = """
[system]
z = {z}
n = 4
f = 1
batch_size = 5
base_timeout = 400
seed = {seed}

[latency]
preset = table1
jitter_pct = {jitter}

[workload]
batches = 3
clients = 2
depth = 2
"""


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(1, 3), st.integers(0, 2**64 - 1), st.sampled_from([0, 10, 50]))
def test_runs_are_reproducible(z, seed, jitter):
    sc = parse_scenario(SCENARIO.format(z=z, seed=seed, jitter=jitter))
    a = Simulator(sc, trace=True).run()
    b = Simulator(sc, trace=True).run()
    assert a.completed and a.trace == b.trace and a.latencies_ms == b.latencies_ms
    heads = {r.executor.ledger.head for r in a.correct.values()}
    assert len(heads) == 1
