import dataclasses

import pytest

from geobft.core import ReplicaId, SystemConfig
from geobft.effects import Effects
from geobft.messages import GlobalShare
from geobft.pbft import verify_certificate
from geobft.sharing import ShareBuffer, select_targets, send_global
from helpers import make_cert, make_keyring, make_request

R = ReplicaId


def test_targets_are_lowest_ids():
    c = SystemConfig(z=2, n=4, f=1)
    assert select_targets(1, 2, c) == [R(2, 1), R(2, 2)]


@pytest.mark.parametrize("n,f", [(7, 2), (13, 4)])
def test_target_count_is_f_plus_one(n, f):
    assert len(select_targets(1, 2, SystemConfig(z=2, n=n, f=f))) == f + 1


def test_no_self_sharing():
    with pytest.raises(ValueError):
        select_targets(1, 1, SystemConfig(z=2, n=4, f=1))


@pytest.mark.parametrize("z,f,sends", [(4, 1, 6), (2, 1, 2), (7, 4, 30)])
def test_send_global_count(z, f, sends):
    config = SystemConfig(z=z, n=3 * f + 1, f=f)
    kr = make_keyring(config, clients=1)
    cert = make_cert(config, kr, make_request(kr))
    fx = Effects()
    assert send_global(cert, config, fx) == sends
    assert len(fx.sends) == sends
    assert {d.cluster for d, _ in fx.sends} == set(range(2, z + 1))


def test_send_global_refuses_invalid(config4, keyring4):
    cert = make_cert(config4, keyring4, make_request(keyring4))
    fx = Effects()
    assert send_global(cert, config4, fx, valid=lambda c: False) == 0
    assert not fx.sends


@pytest.fixture
def setup(config4, keyring4):
    me = R(2, 1)
    buf = ShareBuffer(me, [R(2, i) for i in (2, 3, 4)])
    cert = make_cert(config4, keyring4, make_request(keyring4), rnd=1)
    valid = lambda c: bool(verify_certificate(config4, c, keyring4))
    return buf, cert, valid


def test_first_receipt_forwards_locally(setup):
    buf, cert, valid = setup
    fx = Effects()
    assert buf.handle_global(GlobalShare.of(cert), R(1, 1), fx, valid)
    assert len(fx.sends) == 3
    assert buf.has(1, 1)


def test_second_receipt_not_forwarded(setup):
    buf, cert, valid = setup
    buf.handle_global(GlobalShare.of(cert), R(1, 1), Effects(), valid)
    fx = Effects()
    assert not buf.handle_global(GlobalShare.of(cert), R(1, 1), fx, valid)
    assert not fx.sends


def test_local_copy_is_not_forwarded(setup):
    buf, cert, valid = setup
    fx = Effects()
    assert buf.handle_global(GlobalShare.of(cert), R(2, 2), fx, valid)
    assert not fx.sends


def test_tampered_certificate_dropped(setup):
    buf, cert, valid = setup
    c0 = cert.commits[0]
    bad_sig = bytes([c0.signature[0] ^ 1]) + c0.signature[1:]
    tampered = dataclasses.replace(cert, commits=(dataclasses.replace(c0, signature=bad_sig),) + cert.commits[1:])
    fx = Effects()
    assert not buf.handle_global(GlobalShare.of(tampered), R(1, 1), fx, valid)
    assert not fx.sends and not buf.shares and buf.rejected == 1


def test_conflicting_share_flagged(setup, config4, keyring4):
    buf, cert, valid = setup
    buf.handle_global(GlobalShare.of(cert), R(1, 1), Effects(), valid)
    other = make_cert(config4, keyring4, make_request(keyring4, index=1), rnd=1)
    fx = Effects()
    assert not buf.handle_global(GlobalShare.of(other), R(1, 2), fx, valid)
    assert [k for k, _ in fx.events] == ["share_conflict"]
    assert buf.get(1, 1).request == cert.request


def test_share_from_own_cluster_rejected(config4, keyring4):
    buf = ShareBuffer(R(1, 2), [R(1, 1)])
    cert = make_cert(config4, keyring4, make_request(keyring4))
    assert not buf.handle_global(GlobalShare.of(cert), R(1, 1), Effects(), lambda c: True)


def test_prune(setup):
    buf, cert, valid = setup
    buf.handle_global(GlobalShare.of(cert), R(1, 1), Effects(), valid)
    buf.prune(2)
    assert not buf.has(1, 1) and not buf.forwarded
