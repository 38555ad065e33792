import dataclasses
import hashlib
import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from apt_shield import crypto, kgd, ledger
from apt_shield.dht import StoreCluster
from apt_shield.ledger import (
    Action,
    BatchConfig,
    Block,
    EndorsementError,
    ForkError,
    Transaction,
)
from apt_shield.network import Network


@pytest.fixture(scope="module")
def params():
    return crypto.setup(160, random.Random(42), pbits=512)


def make_network(params, n_peers=4, seed=0, **kw):
    rng = random.Random(seed)
    state = kgd.kgd_setup(params, n_peers, rng)
    return Network(state, rng=rng, **kw)


@pytest.fixture
def net(params):
    return make_network(params)


def store_tx(device, key="reading", payload=b"temp=21.5", t=1, **kw):
    return device.propose(Action.STORE, key, timestamp=t, payload=payload, **kw)


# --- propose / endorse ------------------------------------------------------

def test_propose_signs_store(net):
    dev, = net.register([b"sensor"], 1)
    tx = store_tx(dev)
    assert ledger.verify_tx_signature(net.params, tx, dev.keys.pk)
    flipped = dataclasses.replace(tx, action=Action.ACCESS)
    assert not ledger.verify_tx_signature(net.params, flipped, dev.keys.pk)


def test_propose_requires_payload_for_store(net):
    dev, = net.register([b"sensor"], 1)
    with pytest.raises(ledger.LedgerError):
        dev.propose(Action.STORE, "k", timestamp=1)
    tx = dev.propose(Action.ACCESS, "k", timestamp=1, read_version=1)
    assert tx.payload_digest is None and tx.address is None


def test_propose_unregistered(net):
    with pytest.raises(ledger.UnregisteredDevice):
        ledger.propose(net.params, b"ghost", 5, Action.ACCESS, "k", timestamp=1,
                       registry=net.registry)


def test_endorse_honest(net):
    dev, = net.register([b"sensor"], 1)
    e = net.peers[0].endorse(store_tx(dev))
    assert (e.verdict, e.v1, e.v2) == (True, True, True)


def test_endorse_forged_pk(net):
    dev, = net.register([b"sensor"], 1)
    # attacker republishes the binding element as the public key (drops ps)
    net.registry.add(dev.id, dev.keys.binding, dev.keys.binding)
    forged_sk = dev.keys.x
    tx = ledger.propose(net.params, dev.id, forged_sk, Action.STORE, "k", timestamp=1,
                        payload_digest=bytes(32))
    e = net.peers[0].endorse(tx)
    assert e.v1 is False and e.verdict is False
    assert e.v2 is True  # signature is fine, the identity binding is not


def test_endorse_corrupted_signature(net):
    dev, = net.register([b"sensor"], 1)
    tx = store_tx(dev)
    bad = dataclasses.replace(tx, signature=crypto.MultiSignature(
        tx.signature.R, (tx.signature.S + 1) % net.params.q))
    e = net.peers[1].endorse(bad)
    assert (e.v1, e.v2, e.verdict) == (True, False, False)


def test_endorse_unknown_device(net):
    other = make_network(net.params, seed=9)
    stranger, = other.register([b"x"], 1)
    e = net.peers[0].endorse(store_tx(stranger))
    assert (e.verdict, e.v1, e.v2) == (False, False, False)


# --- aggregation ------------------------------------------------------------

def endorsements_with(tx, verdicts):
    return [ledger.Endorsement(f"p{i}", tx.digest, bool(v), bool(v), bool(v))
            for i, v in enumerate(verdicts)]


def test_aggregate_threshold(net):
    dev, = net.register([b"s"], 1)
    tx = store_tx(dev)
    ledger.aggregate(tx, endorsements_with(tx, [1, 1, 0]), 2)
    with pytest.raises(EndorsementError):
        ledger.aggregate(tx, endorsements_with(tx, [1, 0, 0]), 2)


def test_aggregate_mixed_digests(net):
    dev, = net.register([b"s"], 1)
    a, b = store_tx(dev, t=1), store_tx(dev, t=2)
    mixed = endorsements_with(a, [1]) + endorsements_with(b, [1])
    with pytest.raises(EndorsementError):
        ledger.aggregate(a, mixed, 1)


@settings(max_examples=50, deadline=None)
@given(verdicts=st.lists(st.booleans(), min_size=1, max_size=8), k=st.integers(1, 8))
def test_endorsement_monotonicity(params, verdicts, k):
    tx = Transaction(b"d", 1, Action.ACCESS, "k", read_version=1)
    ends = endorsements_with(tx, verdicts)
    try:
        ledger.aggregate(tx, ends, k)
    except EndorsementError:
        return
    for smaller in range(1, k + 1):
        ledger.aggregate(tx, ends, smaller)


def test_default_threshold():
    assert [ledger.default_threshold(n) for n in (1, 2, 3, 4, 5)] == [1, 2, 2, 3, 3]


# --- ordering ---------------------------------------------------------------

def dummy_envelopes(n):
    return [ledger.Envelope(Transaction(b"d", i, Action.ACCESS, "k", read_version=1), ())
            for i in range(n)]


def test_order_batch_sizes():
    blocks = ledger.order(dummy_envelopes(5), BatchConfig(max_count=2, max_wait=100))
    assert [len(b.envelopes) for b in blocks] == [2, 2, 1]
    assert blocks[0].prev_hash == ledger.ZERO_HASH
    assert blocks[1].prev_hash == blocks[0].block_hash
    assert [b.height for b in blocks] == [0, 1, 2]


def test_order_max_wait_cut():
    envs = dummy_envelopes(3)
    blocks = ledger.order([(0.0, envs[0]), (1.0, envs[1]), (10.0, envs[2])],
                          BatchConfig(max_count=10, max_wait=5))
    assert [len(b.envelopes) for b in blocks] == [2, 1]


def test_no_empty_blocks_on_timeout():
    osn = ledger.OrderingService(BatchConfig(max_count=5, max_wait=1))
    assert osn.tick(10) == []
    assert osn.flush() == []
    with_empty = ledger.OrderingService(BatchConfig(max_count=5, max_wait=1, emit_empty=True))
    assert len(with_empty.tick(3)) == 3


def test_order_deterministic_with_seed():
    envs = dummy_envelopes(7)
    arrivals = [(float(i // 3), e) for i, e in enumerate(envs)]
    a = ledger.order(arrivals, BatchConfig(3, 10), seed=5)
    b = ledger.order(arrivals, BatchConfig(3, 10), seed=5)
    assert [x.block_hash for x in a] == [x.block_hash for x in b]


# --- commit and CCV ---------------------------------------------------------

def test_full_flow_store_query_read(net):
    dev, = net.register([b"sensor"], 1)
    tx = store_tx(dev, payload=b"hello")
    reports = net.submit(tx, b"hello") + net.flush()
    assert len(reports) == 1
    r = reports[0]
    assert r.valid and r.successful and r.flags == {"v1": True, "v2": True, "s": True}
    address, version = net.query(dev.id, dev.id, "reading")
    assert address.digest == hashlib.sha256(b"hello").digest() and version == 1
    assert net.read(dev.id, dev.id, "reading") == b"hello"


def test_ccv_same_read_version_in_block(net):
    dev, = net.register([b"sensor"], 1)
    net.submit(store_tx(dev, payload=b"v1"), b"v1")
    net.flush()
    u1 = dev.propose(Action.UPDATE, "reading", timestamp=2, payload=b"v2a", read_version=1)
    u2 = dev.propose(Action.UPDATE, "reading", timestamp=3, payload=b"v2b", read_version=1)
    net.submit(u1, b"v2a")
    net.submit(u2, b"v2b")
    first, second = net.flush()
    assert first.valid and not second.valid
    assert "stale" in second.reason
    assert second.v1 and second.v2 and not second.s  # flag blames CCV only
    assert net.query(dev.id, dev.id, "reading")[1] == 2
    # the invalid tx is still recorded inside the block
    assert net.ledger.blocks[-1].validity == (True, False)


def test_ccv_current_version_bumps(net):
    dev, = net.register([b"sensor"], 1)
    net.submit(store_tx(dev, payload=b"a"), b"a")
    net.flush()
    for v in range(1, 4):
        tx = dev.propose(Action.UPDATE, "reading", timestamp=10 + v, payload=b"%d" % v,
                         read_version=v)
        net.submit(tx, b"%d" % v)
        (r,) = net.flush()
        assert r.valid
        assert net.query(dev.id, dev.id, "reading")[1] == v + 1


def test_store_existing_key_is_stale(net):
    dev, = net.register([b"sensor"], 1)
    net.submit(store_tx(dev, payload=b"a"), b"a")
    net.submit(store_tx(dev, payload=b"b", t=2), b"b")
    a, b = net.flush()
    assert a.valid and not b.valid


def test_duplicate_transaction_invalid(net):
    dev, = net.register([b"sensor"], 1)
    tx = store_tx(dev)
    net.submit(tx, b"temp=21.5")
    net.flush()
    net.submit(tx)
    (r,) = net.flush()
    assert not r.valid and r.reason == "duplicate transaction"


def test_wrong_prev_hash_rejected(net):
    dev, = net.register([b"s"], 1)
    tx = store_tx(dev)
    env = ledger.aggregate(tx, net.endorse(tx), net.threshold)
    block = Block.build(0, b"\x01" * 32, [env])
    with pytest.raises(ForkError):
        net.ledger.validate_and_commit(block)
    assert net.ledger.height == 0
    net.ledger.validate_and_commit(Block.build(0, ledger.ZERO_HASH, [env]))
    with pytest.raises(ForkError):
        net.ledger.validate_and_commit(Block.build(0, ledger.ZERO_HASH, [env]))


def test_forged_endorsements_do_not_count(net):
    dev, = net.register([b"s"], 1)
    tx = store_tx(dev)
    fake = [ledger.Endorsement(p.peer_id, tx.digest, True, True, True) for p in net.peers]
    block = Block.build(0, ledger.ZERO_HASH, [ledger.Envelope(tx, tuple(fake))])
    (r,) = net.ledger.validate_and_commit(block)
    assert not r.valid and not r.v1 and not r.v2


def test_store_failure_sets_s_false(params):
    dht = StoreCluster(["a", "b"], replication=1)
    net = make_network(params, dht=dht)
    dev, = net.register([b"s"], 1)
    for n in dht.node_ids:
        dht.set_up(n, False)
    tx = store_tx(dev, payload=b"p")
    net.submit(tx, b"p")
    (r,) = net.flush()
    assert r.valid and not r.s and not r.successful
    for n in dht.node_ids:
        dht.set_up(n, True)
    pointer = net.ledger.store_and_point(tx, b"p", dht)
    assert pointer.address.digest == hashlib.sha256(b"p").digest()
    assert net.ledger.reports[r.tx_digest].s
    assert dht.get(pointer.address) == b"p"


def test_query_acl(net):
    owner, friend, stranger = net.register([b"owner", b"friend", b"stranger"], 1)
    net.submit(store_tx(owner, acl=(friend.id,)), b"temp=21.5")
    net.flush()
    assert net.query(owner.id, owner.id, "reading")[1] == 1
    assert net.query(friend.id, owner.id, "reading")[1] == 1
    with pytest.raises(ledger.AccessDenied):
        net.query(stranger.id, owner.id, "reading")
    with pytest.raises(ledger.NotFound):
        net.query(owner.id, owner.id, "never-written")


def test_access_action_recorded_and_acl_checked(net):
    owner, friend, stranger = net.register([b"owner", b"friend", b"stranger"], 1)
    net.submit(store_tx(owner, acl=(friend.id,)), b"temp=21.5")
    net.flush()
    ok = friend.propose(Action.ACCESS, "reading", timestamp=2, read_version=1, owner=owner.id)
    denied = stranger.propose(Action.ACCESS, "reading", timestamp=2, read_version=1,
                              owner=owner.id)
    net.submit(ok)
    net.submit(denied)
    r_ok, r_denied = net.flush()
    assert r_ok.successful
    assert not r_denied.valid and "ACL" in r_denied.reason


def test_commit_report_dict(net):
    dev, = net.register([b"s"], 1)
    net.submit(store_tx(dev), b"temp=21.5")
    (r,) = net.flush()
    d = r.to_dict()
    assert set(d) == {"block_height", "tx_digest", "valid", "flags", "reason"}
    assert set(d["flags"]) == {"v1", "v2", "s"}


def test_flag_contract(net):
    dev, = net.register([b"s"], 1)
    net.submit(store_tx(dev), b"temp=21.5")
    (r,) = net.flush()
    assert r.successful == (r.v1 and r.v2 and r.s)


# --- integrity ---------------------------------------------------------------

def build_ledger(params, n_blocks=4, seed=0):
    net = make_network(params, seed=seed, batch=BatchConfig(max_count=2, max_wait=100))
    devs = net.register([b"a", b"b"], 1)
    t = 1
    for i in range(n_blocks * 2):
        d = devs[i % 2]
        p = b"payload %d" % i
        net.submit(d.propose(Action.STORE, f"k{i}", timestamp=t, payload=p), p, now=t)
        t += 1
    net.flush()
    return net


def test_chain_audit_clean(params):
    net = build_ledger(params)
    assert net.ledger.audit() == ledger.AuditResult(True, 4)


def test_in_memory_tamper_detected(params):
    net = build_ledger(params)
    blocks = list(net.ledger.blocks)
    env = blocks[1].envelopes[0]
    evil_tx = dataclasses.replace(env.tx, timestamp=env.tx.timestamp + 1)
    blocks[1] = dataclasses.replace(blocks[1], envelopes=(ledger.Envelope(evil_tx, env.endorsements),)
                                    + blocks[1].envelopes[1:])
    res = ledger.audit_chain(blocks)
    assert not res.ok and res.bad_height == 1


def test_jsonl_roundtrip_and_byte_flip_fuzz(params, tmp_path):
    net = build_ledger(params)
    path = tmp_path / "ledger.jsonl"
    net.ledger.export_jsonl(path)
    blocks, res = ledger.load_jsonl(path)
    assert res.ok and res.n_blocks == 4
    assert blocks == net.ledger.blocks
    pristine = path.read_bytes()
    rng = random.Random(0)
    for _ in range(1000):
        data = bytearray(pristine)
        i = rng.randrange(len(data))
        data[i] ^= rng.randrange(1, 256)
        path.write_bytes(bytes(data))
        _, res = ledger.load_jsonl(path)
        assert not res.ok


def test_replay_rebuilds_world_state(params, tmp_path):
    net = build_ledger(params)
    path = tmp_path / "l.jsonl"
    net.ledger.export_jsonl(path)
    blocks, _ = ledger.load_jsonl(path)
    fresh = ledger.Ledger(params, net.ledger.endorser_keys, net.threshold)
    fresh.replay(blocks)
    assert {k: v.version for k, v in fresh.world.items()} == \
        {k: v.version for k, v in net.ledger.world.items()}


def test_deterministic_ledger_bytes(params, tmp_path):
    a, b = build_ledger(params, seed=3), build_ledger(params, seed=3)
    a.ledger.export_jsonl(tmp_path / "a")
    b.ledger.export_jsonl(tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


# --- concurrency --------------------------------------------------------------

def run_concurrent_updates(params, n_clients, max_count, seed):
    net = make_network(params, seed=seed, batch=BatchConfig(max_count=max_count, max_wait=1e9))
    dev, = net.register([b"owner"], 1)
    net.submit(store_tx(dev, payload=b"init"), b"init")
    net.flush()
    valid_by_version = {}
    lock = threading.Lock()
    barrier = threading.Barrier(n_clients)
    crashed = []

    def client(i):
        try:
            attempt_updates(i)
        except Exception as exc:  # surfaced in the main thread below
            crashed.append(exc)

    def attempt_updates(i):
        rng = random.Random(seed * 100 + i)
        barrier.wait()
        for attempt in range(n_clients * 3):
            _, version = net.query(dev.id, dev.id, "reading")
            payload = b"client %d attempt %d" % (i, attempt)
            tx = dev.propose(Action.UPDATE, "reading", timestamp=1000 * i + attempt,
                             payload=payload, read_version=version, rng=rng)
            net.submit(tx, payload)
            net.flush()
            mine = net.ledger.reports.get(tx.digest.hex())
            if mine is not None and mine.valid:
                with lock:
                    valid_by_version.setdefault(version, []).append(i)
                return

    threads = [threading.Thread(target=client, args=(i,)) for i in range(n_clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not crashed, crashed
    return net, valid_by_version


@settings(max_examples=8, deadline=None)
@given(n_clients=st.integers(2, 16), max_count=st.integers(1, 4), seed=st.integers(0, 100))
def test_concurrent_updates_one_valid_per_version(params, n_clients, max_count, seed):
    net, valid = run_concurrent_updates(params, n_clients, max_count, seed)
    # every committed-valid update consumed a distinct read version
    assert all(len(v) == 1 for v in valid.values())
    assert sorted(valid) == list(range(1, len(valid) + 1))
    # and the ledger agrees: one valid Update per read_version
    seen = {}
    for block in net.ledger.blocks:
        for env, ok in block.tx_list:
            if ok and env.tx.action is Action.UPDATE:
                assert env.tx.read_version not in seen
                seen[env.tx.read_version] = True
    assert net.query(b"owner", b"owner", "reading")[1] == 1 + len(seen)
