"""Key generation and distribution (KGD) consortium.

The consortium peers jointly hold a master secret, derive a partial secret
for every registering device, cosign the batch with an aggregate Schnorr
signature and send each partial secret encrypted to its device.  A device
only accepts its partial secret after the multisignature verifies, then
combines it with its own secret scalar::

    sk = (x + ps) mod q,   pk = g^sk,   binding B = g^x

so that ``pk == B * g^ps`` can later be checked by any peer.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from . import crypto
from .crypto import (
    CiphertextEnvelope,
    DecryptionError,
    GroupParams,
    HashFn,
    MultiSignature,
    SignerKeypair,
    encode_fields,
    int_to_bytes,
)


class RegistrationError(Exception):
    pass


class PeerUnavailable(RegistrationError):
    pass


def _id_bytes(value: Union[str, bytes]) -> bytes:
    return value.encode("utf-8") if isinstance(value, str) else bytes(value)


def edge_id_for(member_ids: Sequence[Union[str, bytes]]) -> str:
    """Composite edge identity, independent of the order members are listed in."""
    ids = sorted(_id_bytes(i) for i in member_ids)
    return "E" + hashlib.sha256(encode_fields(*ids)).hexdigest()[:16]


@dataclass(frozen=True)
class DeviceIdentity:
    id: bytes
    edge_id: str
    registered_at: int

    def __post_init__(self):
        if not self.id:
            raise ValueError("device id must be non-empty")


def identities_for_batch(ids: Sequence[Union[str, bytes]], t: int) -> list[DeviceIdentity]:
    edge = edge_id_for(ids)
    return [DeviceIdentity(_id_bytes(i), edge, t) for i in ids]


@dataclass(frozen=True)
class PartialSecret:
    identity: DeviceIdentity
    ps: int
    issued_at: int


@dataclass(frozen=True)
class RegistrationRequest:
    """A join request: the device identity plus its binding element ``g^x``."""
    identity: DeviceIdentity
    binding: int


@dataclass(frozen=True)
class IssueOutput:
    T: bytes
    PS: bytes
    signature: MultiSignature
    envelopes: Mapping[bytes, CiphertextEnvelope]


@dataclass(frozen=True)
class DeviceKeypair:
    x: int
    ps: int
    sk: int
    pk: int
    binding: int

    def __repr__(self) -> str:
        return f"DeviceKeypair(pk={self.pk}, binding={self.binding})"


@dataclass
class KgdState:
    params: GroupParams
    peers: list[SignerKeypair]
    Y: int
    ms: int = field(repr=False)
    hash_fn: HashFn = crypto.sha256
    # device id -> (issued_at, binding); the issuance log
    issued: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def public_dict(self) -> dict:
        """Exportable view; never contains the master secret or peer secrets."""
        return {
            "params": self.params.to_dict(),
            "Y": format(self.Y, "x"),
            "peers": [format(p.y, "x") for p in self.peers],
        }

    def partial_decrypt_shares(self, ephemeral: int) -> list[int]:
        """Each peer's ``ephemeral^x_i``; their product decrypts for ``Y``."""
        return [pow(ephemeral, peer.x, self.params.p) for peer in self.peers]

    def decrypt(self, env: CiphertextEnvelope) -> bytes:
        """Jointly decrypt an envelope addressed to the consortium key ``Y``."""
        if not self.params.in_subgroup(env.ephemeral):
            raise DecryptionError("ephemeral value is not a subgroup element")
        shared = 1
        for share in self.partial_decrypt_shares(env.ephemeral):
            shared = shared * share % self.params.p
        return crypto.decrypt_with_shared(env, shared)


def kgd_setup(params: GroupParams, n: int, rng=None, *, xs: Optional[Sequence[int]] = None,
              ms_contributions: Optional[Sequence[int]] = None,
              hash_fn: HashFn = crypto.sha256) -> KgdState:
    """Create ``n`` consortium peers and their jointly held master secret."""
    if n < 1:
        raise ValueError("the consortium needs at least one peer")
    rng = rng or secrets.SystemRandom()
    if xs is not None and len(xs) != n:
        raise ValueError("need one secret per peer")
    peers = [crypto.keygen(params, rng, x=None if xs is None else xs[i]) for i in range(n)]
    Y = crypto.aggregate_pubkey(params, [p.y for p in peers])
    if ms_contributions is not None:
        if len(ms_contributions) != n:
            raise ValueError("need one master-secret contribution per peer")
        ms = sum(ms_contributions) % params.q
        if ms == 0:
            raise ValueError("master secret contributions sum to zero mod q")
    else:
        ms = 0
        while ms == 0:
            ms = sum(rng.randrange(1, params.q) for _ in range(n)) % params.q
    return KgdState(params, peers, Y, ms, hash_fn)


def gen_partial_secret(state: KgdState, identity: DeviceIdentity,
                       issued_at: Optional[int] = None) -> PartialSecret:
    t = identity.registered_at if issued_at is None else issued_at
    data = encode_fields(int_to_bytes(state.ms), identity.id, struct.pack(">q", t))
    ps = int.from_bytes(hashlib.sha256(data).digest(), "big") % state.params.q
    return PartialSecret(identity, ps, t)


def batch_label(identities: Sequence[DeviceIdentity]) -> bytes:
    """The timestamp-and-identity string ``T`` the batch is signed under."""
    t = max(i.registered_at for i in identities)
    return encode_fields(b"kgd-issue", identities[0].edge_id.encode(), struct.pack(">q", t))


def _ps_entry(params: GroupParams, secret: PartialSecret) -> bytes:
    return encode_fields(secret.identity.id, struct.pack(">q", secret.issued_at),
                         int_to_bytes(pow(params.g, secret.ps, params.p)))


def parse_batch(PS: bytes) -> dict[bytes, tuple[int, int]]:
    """Map device id -> (issued_at, g^ps) from a serialized batch."""
    out = {}
    for entry in crypto.decode_fields(PS):
        dev_id, t, commitment = crypto.decode_fields(entry)
        (issued_at,) = struct.unpack(">q", t)
        out[dev_id] = (issued_at, int.from_bytes(commitment, "big"))
    return out


def issue(state: KgdState, requests: Sequence[RegistrationRequest], rng=None, *,
          available_peers: Optional[Sequence[int]] = None) -> IssueOutput:
    """Derive, cosign and encrypt partial secrets for a batch of devices.

    Every peer must take part; there is no threshold.
    """
    if not requests:
        raise RegistrationError("empty registration batch")
    if available_peers is not None and set(available_peers) != set(range(len(state.peers))):
        missing = sorted(set(range(len(state.peers))) - set(available_peers))
        raise PeerUnavailable(f"peers {missing} are offline; all cosigners are required")
    params = state.params
    for req in requests:
        if not params.in_subgroup(req.binding):
            raise RegistrationError(f"binding for {req.identity.id!r} is not a group element")
    rng = rng or secrets.SystemRandom()
    identities = [r.identity for r in requests]
    with state._lock:
        secrets_ = [gen_partial_secret(state, i) for i in identities]
        PS = encode_fields(*(_ps_entry(params, s) for s in secrets_))
        T = batch_label(identities)
        sig = crypto.multisign(params, state.peers, T, PS, rng, state.hash_fn)
        envelopes = {
            s.identity.id: crypto.encrypt(params, req.binding, int_to_bytes(s.ps), rng)
            for s, req in zip(secrets_, requests)
        }
        for s, req in zip(secrets_, requests):
            state.issued[s.identity.id] = (s.issued_at, req.binding)
    return IssueOutput(T, PS, sig, envelopes)


def new_device_secret(params: GroupParams, rng=None) -> tuple[int, int]:
    """Device-local secret ``x`` and its public binding ``g^x``."""
    kp = crypto.keygen(params, rng)
    return kp.x, kp.y


def device_register(params: GroupParams, Y: int, identity: DeviceIdentity, x: int,
                    out: IssueOutput, hash_fn: HashFn = crypto.sha256) -> Optional[DeviceKeypair]:
    """Device side of registration.  Returns ``None`` when anything fails to check."""
    if not crypto.verify(params, Y, out.T, out.PS, out.signature, hash_fn):
        return None
    env = out.envelopes.get(identity.id)
    if env is None:
        return None
    try:
        ps = int.from_bytes(crypto.decrypt(params, x, env), "big")
        batch = parse_batch(out.PS)
    except (DecryptionError, ValueError, struct.error):
        return None
    if not 0 <= ps < params.q:
        return None
    # the decrypted value must be the one the consortium signed
    if batch.get(identity.id) != (identity.registered_at, pow(params.g, ps, params.p)):
        return None
    return compose_keys(params, x, ps)


def compose_keys(params: GroupParams, x: int, ps: int) -> DeviceKeypair:
    sk = (x + ps) % params.q
    return DeviceKeypair(x, ps, sk, pow(params.g, sk, params.p), pow(params.g, x, params.p))


def verify_identity_binding(state: KgdState, device_id: Union[str, bytes], pk: int,
                            binding: int) -> bool:
    """True iff ``pk == binding * g^ps`` for the partial secret issued to ``device_id``."""
    dev = _id_bytes(device_id)
    entry = state.issued.get(dev)
    if entry is None:
        return False
    issued_at, _ = entry
    params = state.params
    if not (params.in_subgroup(pk) and params.in_subgroup(binding)):
        return False
    ps = gen_partial_secret(state, DeviceIdentity(dev, "", issued_at)).ps
    return pk == binding * pow(params.g, ps, params.p) % params.p


def registration_transcript(identity: DeviceIdentity, out: IssueOutput,
                            keys: DeviceKeypair) -> dict:
    """JSON-ready record of one registration.  Secrets are left out."""
    return {
        "id": identity.id.hex(),
        "edge_id": identity.edge_id,
        "issued_at": identity.registered_at,
        "R": format(out.signature.R, "x"),
        "S": format(out.signature.S, "x"),
        "envelope": out.envelopes[identity.id].to_dict(),
        "pk": format(keys.pk, "x"),
        "binding": format(keys.binding, "x"),
    }
