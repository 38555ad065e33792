import dataclasses
import json
import random

import pytest

from apt_shield import crypto, kgd
from apt_shield.crypto import TOY_PARAMS, CiphertextEnvelope, MultiSignature
from apt_shield.kgd import (
    DeviceIdentity,
    PeerUnavailable,
    RegistrationError,
    RegistrationRequest,
)


def register_one(state, dev_id=b"sensor-1", t=100, rng=None):
    rng = rng or random.Random(0)
    ident = kgd.identities_for_batch([dev_id], t)[0]
    x, B = kgd.new_device_secret(state.params, rng)
    out = kgd.issue(state, [RegistrationRequest(ident, B)], rng)
    return ident, x, B, out


def test_setup_worked_values():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    assert state.Y == 16
    assert state.ms == 15 % 11 == 4


def test_setup_single_peer():
    state = kgd.kgd_setup(TOY_PARAMS, 1, random.Random(0))
    assert state.Y == state.peers[0].y
    assert 1 <= state.ms < 11


def test_setup_rejects_zero_peers():
    with pytest.raises(ValueError):
        kgd.kgd_setup(TOY_PARAMS, 0)


def test_setup_rejects_zero_master_secret():
    with pytest.raises(ValueError):
        kgd.kgd_setup(TOY_PARAMS, 2, xs=[1, 2], ms_contributions=[5, 6])


def test_public_export_has_no_secrets():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    exported = json.dumps(state.public_dict())
    assert "ms" not in state.public_dict()
    assert '"Y": "10"' in exported
    assert " ms=" not in repr(state) and "x=" not in repr(state.peers[0])


def test_partial_secret_deterministic_and_in_range():
    state = kgd.kgd_setup(TOY_PARAMS, 3, random.Random(1))
    ident = DeviceIdentity(b"dev", "E", 7)
    a = kgd.gen_partial_secret(state, ident)
    assert a == kgd.gen_partial_secret(state, ident)
    assert 0 <= a.ps < 11
    assert kgd.gen_partial_secret(state, ident, issued_at=8).issued_at == 8


def test_partial_secret_collision_statistics():
    # distinct ids collide at rate ~1/q; q = 11, 10^4 pairs
    state = kgd.kgd_setup(TOY_PARAMS, 2, random.Random(2))
    collisions = 0
    for i in range(10_000):
        a = kgd.gen_partial_secret(state, DeviceIdentity(b"a%d" % i, "E", 1)).ps
        b = kgd.gen_partial_secret(state, DeviceIdentity(b"b%d" % i, "E", 1)).ps
        collisions += a == b
    # binomial(10^4, 1/11): mean 909, sd ~28.7; allow 5 sd
    assert abs(collisions - 10_000 / 11) < 5 * 28.7


def test_edge_id_order_independent():
    assert kgd.edge_id_for([b"a", b"b"]) == kgd.edge_id_for([b"b", b"a"])
    assert kgd.edge_id_for([b"a"]) != kgd.edge_id_for([b"a", b"b"])
    with pytest.raises(ValueError):
        DeviceIdentity(b"", "E", 0)


def test_compose_keys_worked_example():
    keys = kgd.compose_keys(TOY_PARAMS, 3, 4)
    assert (keys.sk, keys.pk, keys.binding) == (7, 13, 8)
    assert 8 * 16 % 23 == 13  # B * g^ps


def test_issue_and_register_toy_params():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident, x, B, out = register_one(state)
    assert crypto.verify(TOY_PARAMS, 16, out.T, out.PS, out.signature)
    keys = kgd.device_register(TOY_PARAMS, state.Y, ident, x, out)
    assert keys is not None
    assert keys.sk == (x + keys.ps) % 11
    assert keys.pk == keys.binding * pow(2, keys.ps, 23) % 23
    assert kgd.verify_identity_binding(state, ident.id, keys.pk, keys.binding)


def test_issue_with_stub_hash():
    state = kgd.kgd_setup(TOY_PARAMS, 1, xs=[3], ms_contributions=[4], hash_fn=lambda d: 5)
    ident, x, B, out = register_one(state)
    assert crypto.verify(TOY_PARAMS, state.Y, out.T, out.PS, out.signature, hash_fn=lambda d: 5)
    assert kgd.device_register(TOY_PARAMS, state.Y, ident, x, out, hash_fn=lambda d: 5)


def test_issue_empty_batch():
    state = kgd.kgd_setup(TOY_PARAMS, 3, random.Random(0))
    with pytest.raises(RegistrationError):
        kgd.issue(state, [])


def test_issue_requires_every_peer():
    state = kgd.kgd_setup(TOY_PARAMS, 3, random.Random(0))
    ident = DeviceIdentity(b"d", "E", 1)
    with pytest.raises(PeerUnavailable):
        kgd.issue(state, [RegistrationRequest(ident, 8)], available_peers=[0, 2])
    kgd.issue(state, [RegistrationRequest(ident, 8)], available_peers=[0, 1, 2])


def test_wrong_device_cannot_open_envelope():
    params = crypto.setup(16, random.Random(3), insecure=True)
    state = kgd.kgd_setup(params, 3, random.Random(4))
    rng = random.Random(5)
    idents = kgd.identities_for_batch([b"a", b"b"], 9)
    secrets_ = [kgd.new_device_secret(params, rng) for _ in idents]
    out = kgd.issue(state, [RegistrationRequest(i, B) for i, (x, B) in zip(idents, secrets_)], rng)
    with pytest.raises(crypto.DecryptionError):
        crypto.decrypt(params, secrets_[1][0], out.envelopes[b"a"])
    # both devices register from the same batch output
    for ident, (x, _) in zip(idents, secrets_):
        assert kgd.device_register(params, state.Y, ident, x, out) is not None
    # device b using a's envelope through its own identity fails
    swapped = dataclasses.replace(out, envelopes={b"b": out.envelopes[b"a"]})
    assert kgd.device_register(params, state.Y, idents[1], secrets_[1][0], swapped) is None


def test_tampered_signature_yields_bottom():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident, x, B, out = register_one(state)
    bad = dataclasses.replace(out, signature=MultiSignature(out.signature.R,
                                                            (out.signature.S + 1) % 11))
    assert kgd.device_register(TOY_PARAMS, state.Y, ident, x, bad) is None


def test_binding_check_rejects_pk_without_ps():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident, x, B, out = register_one(state)
    keys = kgd.device_register(TOY_PARAMS, state.Y, ident, x, out)
    if keys.ps != 0:
        assert not kgd.verify_identity_binding(state, ident.id, keys.binding, keys.binding)
    assert not kgd.verify_identity_binding(state, b"unknown", keys.pk, keys.binding)


def test_binding_identity_example():
    # ps = 4, x = 3: an honest pk (13) binds, g^x (8) alone does not
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident = DeviceIdentity(b"probe", "E", 0)
    # search for an issuance time whose partial secret is 4
    t = next(t for t in range(1000)
             if kgd.gen_partial_secret(state, DeviceIdentity(b"probe", "E", t)).ps == 4)
    ident = DeviceIdentity(b"probe", "E", t)
    kgd.issue(state, [RegistrationRequest(ident, 8)])
    assert kgd.verify_identity_binding(state, b"probe", 13, 8)
    assert not kgd.verify_identity_binding(state, b"probe", 8, 8)


def test_escrow_separation():
    """Knowing ps and pk, exactly one candidate x matches the public binding."""
    params = TOY_PARAMS
    state = kgd.kgd_setup(params, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident, x, B, out = register_one(state, rng=random.Random(9))
    keys = kgd.device_register(params, state.Y, ident, x, out)
    ps = kgd.gen_partial_secret(state, ident).ps
    matches = [cand for cand in range(params.q)
               if pow(params.g, (cand + ps) % params.q, params.p) == keys.pk]
    assert matches == [x % params.q]


def tamper_variants(out, ident, params):
    sig = out.signature
    yield "R", dataclasses.replace(out, signature=MultiSignature(sig.R * params.g % params.p, sig.S))
    yield "S", dataclasses.replace(out, signature=MultiSignature(sig.R, (sig.S + 1) % params.q))
    env = out.envelopes[ident.id]
    body = bytearray(env.body) or bytearray(b"\x00")
    body[0] ^= 1
    yield "body", dataclasses.replace(
        out, envelopes={ident.id: CiphertextEnvelope(env.ephemeral, bytes(body), env.tag)})
    ps = bytearray(out.PS)
    ps[len(ps) // 2] ^= 0x10
    yield "PS", dataclasses.replace(out, PS=bytes(ps))


def test_randomized_registration_roundtrip():
    rng = random.Random(1234)
    for trial in range(200):
        params = crypto.setup(16, rng, insecure=True)
        state = kgd.kgd_setup(params, rng.randint(1, 5), rng)
        ident, x, B, out = register_one(state, b"dev-%d" % trial, trial, rng)
        keys = kgd.device_register(params, state.Y, ident, x, out)
        assert keys.sk == (x + keys.ps) % params.q
        assert keys.pk == pow(params.g, keys.sk, params.p)
        assert keys.pk == keys.binding * pow(params.g, keys.ps, params.p) % params.p
        for name, bad in tamper_variants(out, ident, params):
            assert kgd.device_register(params, state.Y, ident, x, bad) is None, name


def test_transcript_export():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    ident, x, B, out = register_one(state)
    keys = kgd.device_register(TOY_PARAMS, state.Y, ident, x, out)
    doc = kgd.registration_transcript(ident, out, keys)
    assert set(doc) == {"id", "edge_id", "issued_at", "R", "S", "envelope", "pk", "binding"}
    assert doc["pk"] == format(keys.pk, "x") and doc["id"] == ident.id.hex()
    json.dumps(doc)
    assert "sk" not in doc and "ms" not in doc and "x" not in doc


def test_consortium_joint_decryption():
    state = kgd.kgd_setup(TOY_PARAMS, 3, xs=[3, 5, 7], ms_contributions=[4, 5, 6])
    env = crypto.encrypt(TOY_PARAMS, state.Y, b"status", random.Random(0))
    assert state.decrypt(env) == b"status"
    assert crypto.decrypt(TOY_PARAMS, 3 + 5 + 7, env) == b"status"
