"""Consortium ledger: propose, endorse, aggregate, order, commit, store.

Transactions are signed by registered devices with single-signer Schnorr
signatures.  Endorsing peers check the identity binding (V1) and the device
signature (V2); an envelope with enough positive endorsements goes to a
single sequencer that cuts hash-chained blocks.  Committing peers run a
version check per transaction (CCV): a stale ``read_version`` marks the
transaction invalid inside the block, the block is still appended.  Payloads
live in the content store and the world state keeps the pointer.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from . import crypto, kgd
from .crypto import GroupParams, MultiSignature, encode_fields, int_to_bytes
from .dht import ContentAddress, StoreCluster, StoreError

ZERO_HASH = bytes(32)
TX_CONTEXT = b"apt-shield/tx"
ENDORSE_CONTEXT = b"apt-shield/endorse"


class LedgerError(Exception):
    pass


class UnregisteredDevice(LedgerError):
    pass


class EndorsementError(LedgerError):
    pass


class ForkError(LedgerError):
    pass


class AccessDenied(LedgerError, PermissionError):
    pass


class NotFound(LedgerError, KeyError):
    pass


class Action(str, enum.Enum):
    STORE = "store"
    UPDATE = "update"
    ACCESS = "access"


def _u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def _opt_u64(n: Optional[int]) -> bytes:
    return b"" if n is None else _u64(n)


def _hex(b: Optional[bytes]) -> Optional[str]:
    return None if b is None else b.hex()


def _unhex(s: Optional[str]) -> Optional[bytes]:
    return None if s is None else bytes.fromhex(s)


def default_threshold(n_peers: int) -> int:
    return math.ceil((n_peers + 1) / 2)


# ---------------------------------------------------------------------------
# transactions, endorsements, envelopes, blocks


@dataclass(frozen=True)
class Transaction:
    device_id: bytes
    timestamp: int
    action: Action
    data_key: str
    acl: tuple[bytes, ...] = ()
    detection_status: bytes = b""
    payload_digest: Optional[bytes] = None
    read_version: Optional[int] = None
    address: Optional[ContentAddress] = None
    # namespace the key lives in; None means the proposer's own
    owner: Optional[bytes] = None
    signature: Optional[MultiSignature] = None

    @property
    def state_key(self) -> tuple[bytes, str]:
        return (self.owner or self.device_id, self.data_key)

    def signing_bytes(self) -> bytes:
        return encode_fields(
            self.device_id,
            _u64(self.timestamp),
            self.action.value.encode(),
            self.data_key.encode("utf-8"),
            encode_fields(*self.acl),
            self.detection_status,
            self.payload_digest or b"",
            _opt_u64(self.read_version),
            self.address.digest if self.address else b"",
            self.owner or b"",
        )

    def canonical(self) -> bytes:
        sig = self.signature
        sig_bytes = b"" if sig is None else encode_fields(int_to_bytes(sig.R), int_to_bytes(sig.S))
        return encode_fields(self.signing_bytes(), sig_bytes)

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical()).digest()

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id.hex(),
            "timestamp": self.timestamp,
            "action": self.action.value,
            "data_key": self.data_key,
            "acl": [a.hex() for a in self.acl],
            "detection_status": self.detection_status.hex(),
            "payload_digest": _hex(self.payload_digest),
            "read_version": self.read_version,
            "address": None if self.address is None else self.address.hex,
            "owner": _hex(self.owner),
            "signature": None if self.signature is None else self.signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(
            device_id=bytes.fromhex(d["device_id"]),
            timestamp=int(d["timestamp"]),
            action=Action(d["action"]),
            data_key=d["data_key"],
            acl=tuple(bytes.fromhex(a) for a in d["acl"]),
            detection_status=bytes.fromhex(d["detection_status"]),
            payload_digest=_unhex(d["payload_digest"]),
            read_version=d["read_version"],
            address=None if d["address"] is None else ContentAddress.from_hex(d["address"]),
            owner=_unhex(d["owner"]),
            signature=None if d["signature"] is None else MultiSignature.from_dict(d["signature"]),
        )


@dataclass(frozen=True)
class Endorsement:
    peer_id: str
    tx_digest: bytes
    verdict: bool
    v1: bool
    v2: bool
    signature: Optional[MultiSignature] = None

    def signing_bytes(self) -> bytes:
        return encode_fields(self.peer_id.encode(), self.tx_digest,
                             bytes([self.verdict, self.v1, self.v2]))

    def canonical(self) -> bytes:
        sig = self.signature
        sig_bytes = b"" if sig is None else encode_fields(int_to_bytes(sig.R), int_to_bytes(sig.S))
        return encode_fields(self.signing_bytes(), sig_bytes)

    def to_dict(self) -> dict:
        return {"peer_id": self.peer_id, "tx_digest": self.tx_digest.hex(),
                "verdict": self.verdict, "v1": self.v1, "v2": self.v2,
                "signature": None if self.signature is None else self.signature.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Endorsement":
        return cls(d["peer_id"], bytes.fromhex(d["tx_digest"]), bool(d["verdict"]),
                   bool(d["v1"]), bool(d["v2"]),
                   None if d["signature"] is None else MultiSignature.from_dict(d["signature"]))


@dataclass(frozen=True)
class Envelope:
    tx: Transaction
    endorsements: tuple[Endorsement, ...]

    def canonical(self) -> bytes:
        return encode_fields(self.tx.canonical(), *(e.canonical() for e in self.endorsements))

    def to_dict(self) -> dict:
        return {"tx": self.tx.to_dict(), "endorsements": [e.to_dict() for e in self.endorsements]}

    @classmethod
    def from_dict(cls, d: dict) -> "Envelope":
        return cls(Transaction.from_dict(d["tx"]),
                   tuple(Endorsement.from_dict(e) for e in d["endorsements"]))


def compute_block_hash(height: int, prev_hash: bytes, envelopes: Sequence[Envelope]) -> bytes:
    return hashlib.sha256(
        encode_fields(_u64(height), prev_hash, *(e.canonical() for e in envelopes))).digest()


def compute_commit_digest(block_hash: bytes, validity: Sequence[bool]) -> bytes:
    return hashlib.sha256(encode_fields(block_hash, bytes(bool(v) for v in validity))).digest()


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    envelopes: tuple[Envelope, ...]
    block_hash: bytes
    # set when a committing peer appends the block
    validity: Optional[tuple[bool, ...]] = None
    commit_digest: Optional[bytes] = None

    @classmethod
    def build(cls, height: int, prev_hash: bytes, envelopes: Sequence[Envelope]) -> "Block":
        envelopes = tuple(envelopes)
        return cls(height, prev_hash, envelopes, compute_block_hash(height, prev_hash, envelopes))

    @property
    def tx_list(self) -> list[tuple[Envelope, Optional[bool]]]:
        flags = self.validity or (None,) * len(self.envelopes)
        return list(zip(self.envelopes, flags))

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "block_hash": self.block_hash.hex(),
            "commit_digest": _hex(self.commit_digest),
            "txs": [{"envelope": env.to_dict(), "valid": flag} for env, flag in self.tx_list],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        flags = [t["valid"] for t in d["txs"]]
        validity = None if any(f is None for f in flags) else tuple(bool(f) for f in flags)
        return cls(int(d["height"]), bytes.fromhex(d["prev_hash"]),
                   tuple(Envelope.from_dict(t["envelope"]) for t in d["txs"]),
                   bytes.fromhex(d["block_hash"]), validity, _unhex(d["commit_digest"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)


# ---------------------------------------------------------------------------
# devices and proposal


@dataclass
class DeviceRegistry:
    """Public registration records peers consult: device id -> (pk, binding)."""
    entries: dict[bytes, tuple[int, int]] = field(default_factory=dict)

    def add(self, device_id: bytes, pk: int, binding: int) -> None:
        self.entries[device_id] = (pk, binding)

    def get(self, device_id: bytes) -> Optional[tuple[int, int]]:
        return self.entries.get(device_id)

    def __contains__(self, device_id: bytes) -> bool:
        return device_id in self.entries


def propose(params: GroupParams, device_id: Union[str, bytes], sk: int, action: Action,
            data_key: str, *, timestamp: int, payload_digest: Optional[bytes] = None,
            acl: Iterable[bytes] = (), detection_status: bytes = b"",
            read_version: Optional[int] = None, owner: Optional[bytes] = None,
            registry: Optional[DeviceRegistry] = None, rng=None,
            pk: Optional[int] = None) -> Transaction:
    """Build and sign a transaction with the device's full private key."""
    dev = device_id.encode() if isinstance(device_id, str) else bytes(device_id)
    action = Action(action)
    if registry is not None and dev not in registry:
        raise UnregisteredDevice(dev.hex())
    if action in (Action.STORE, Action.UPDATE):
        if payload_digest is None or len(payload_digest) != 32:
            raise LedgerError(f"{action.value} requires a 32-byte payload digest")
        address = ContentAddress(payload_digest)
    else:
        address = None
    tx = Transaction(dev, timestamp, action, data_key, tuple(acl), detection_status,
                     payload_digest, read_version, address, owner)
    sig = crypto.sign(params, sk, tx.signing_bytes(), rng, context=TX_CONTEXT, y=pk)
    return replace(tx, signature=sig)


def verify_tx_signature(params: GroupParams, tx: Transaction, pk: int) -> bool:
    if tx.signature is None:
        return False
    return crypto.verify_single(params, pk, tx.signing_bytes(), tx.signature, context=TX_CONTEXT)


# ---------------------------------------------------------------------------
# endorsement and aggregation


class EndorsingPeer:
    def __init__(self, peer_id: str, state: kgd.KgdState, registry: DeviceRegistry,
                 keypair: crypto.SignerKeypair, rng=None):
        self.peer_id = peer_id
        self.state = state
        self.registry = registry
        self.keypair = keypair
        self.rng = rng
        # binding checks keyed by the full issued record, so re-issue invalidates
        self._binding_ok: dict[tuple, bool] = {}

    @property
    def params(self) -> GroupParams:
        return self.state.params

    def endorse(self, tx: Transaction) -> Endorsement:
        """Verdict is V1 and V2; failures are verdicts, never exceptions."""
        record = self.registry.get(tx.device_id)
        if record is None:
            v1 = v2 = False
        else:
            pk, binding = record
            key = (tx.device_id, pk, binding, self.state.issued.get(tx.device_id))
            v1 = self._binding_ok.get(key)
            if v1 is None:
                v1 = kgd.verify_identity_binding(self.state, tx.device_id, pk, binding)
                self._binding_ok[key] = v1
            v2 = verify_tx_signature(self.params, tx, pk)
        e = Endorsement(self.peer_id, tx.digest, v1 and v2, v1, v2)
        sig = crypto.sign(self.params, self.keypair.x, e.signing_bytes(), self.rng,
                          context=ENDORSE_CONTEXT, y=self.keypair.y)
        return replace(e, signature=sig)


def aggregate(tx: Transaction, endorsements: Sequence[Endorsement], threshold: int) -> Envelope:
    """Admit the transaction once ``threshold`` distinct peers endorsed it."""
    digest = tx.digest
    if any(e.tx_digest != digest for e in endorsements):
        raise EndorsementError("endorsements reference different transactions")
    positive = {e.peer_id for e in endorsements if e.verdict}
    if len(positive) < threshold:
        raise EndorsementError(
            f"only {len(positive)} positive endorsements, policy needs {threshold}")
    return Envelope(tx, tuple(endorsements))


# ---------------------------------------------------------------------------
# ordering


@dataclass(frozen=True)
class BatchConfig:
    max_count: int = 10
    max_wait: float = 1.0
    emit_empty: bool = False

    def __post_init__(self):
        if self.max_count < 1 or self.max_wait <= 0:
            raise ValueError("max_count must be >= 1 and max_wait > 0")


class OrderingService:
    """Single logical sequencer: batches envelopes by count or by wait time."""

    def __init__(self, config: BatchConfig = BatchConfig(), *, prev_hash: bytes = ZERO_HASH,
                 height: int = 0):
        self.config = config
        self._prev_hash = prev_hash
        self._height = height
        self._pending: list[Envelope] = []
        self._first_arrival: Optional[float] = None
        self._last_cut: float = 0.0
        self._lock = threading.Lock()

    @property
    def queue_depth(self) -> int:
        return len(self._pending)

    def _cut(self) -> Block:
        block = Block.build(self._height, self._prev_hash, self._pending)
        self._prev_hash = block.block_hash
        self._height += 1
        self._pending = []
        self._first_arrival = None
        return block

    def submit(self, envelope: Envelope, now: float) -> list[Block]:
        with self._lock:
            blocks = self._due(now)
            if self._first_arrival is None:
                self._first_arrival = now
            self._pending.append(envelope)
            if len(self._pending) >= self.config.max_count:
                blocks.append(self._cut())
                self._last_cut = now
            return blocks

    def tick(self, now: float) -> list[Block]:
        with self._lock:
            return self._due(now)

    def _due(self, now: float) -> list[Block]:
        blocks = []
        if self._pending and now - self._first_arrival >= self.config.max_wait:
            blocks.append(self._cut())
            self._last_cut = now
        elif not self._pending and self.config.emit_empty:
            while now - self._last_cut >= self.config.max_wait:
                self._last_cut += self.config.max_wait
                blocks.append(self._cut())
        return blocks

    def flush(self) -> list[Block]:
        with self._lock:
            return [self._cut()] if self._pending else []

    def next_deadline(self) -> Optional[float]:
        if self._first_arrival is None:
            return None
        return self._first_arrival + self.config.max_wait


def order(envelopes: Sequence[Union[Envelope, tuple[float, Envelope]]],
          config: BatchConfig = BatchConfig(), *, seed: int = 0,
          prev_hash: bytes = ZERO_HASH, height: int = 0) -> list[Block]:
    """Deterministically batch a whole arrival sequence into chained blocks.

    Items are envelopes (arriving one tick apart) or ``(arrival_tick, envelope)``
    pairs.  Envelopes arriving on the same tick are ordered by a seeded
    shuffle.
    """
    arrivals = [item if isinstance(item, tuple) else (float(i), item)
                for i, item in enumerate(envelopes)]
    rng = random.Random(seed)
    keyed = [(t, rng.random(), i, env) for i, (t, env) in enumerate(arrivals)]
    keyed.sort(key=lambda k: (k[0], k[1], k[2]))
    osn = OrderingService(config, prev_hash=prev_hash, height=height)
    blocks: list[Block] = []
    for t, _, _, env in keyed:
        blocks.extend(osn.submit(env, t))
    blocks.extend(osn.flush())
    return blocks


# ---------------------------------------------------------------------------
# commit, store, query


@dataclass
class CommitReport:
    block_height: int
    tx_digest: str
    valid: bool
    v1: bool
    v2: bool
    s: bool
    reason: str = ""

    @property
    def flags(self) -> dict:
        return {"v1": self.v1, "v2": self.v2, "s": self.s}

    @property
    def successful(self) -> bool:
        return self.valid and self.v1 and self.v2 and self.s

    def to_dict(self) -> dict:
        return {"block_height": self.block_height, "tx_digest": self.tx_digest,
                "valid": self.valid, "flags": self.flags, "reason": self.reason}


@dataclass
class StateEntry:
    owner: bytes
    key: str
    version: int
    address: Optional[ContentAddress]
    acl: tuple[bytes, ...]
    stored: bool = False


@dataclass(frozen=True)
class TxPointer:
    tx_digest: str
    address: ContentAddress
    block_height: int


@dataclass(frozen=True)
class AuditResult:
    ok: bool
    n_blocks: int
    bad_height: Optional[int] = None
    reason: str = ""


class Ledger:
    """Hash-chained block log plus the versioned world state it implies."""

    def __init__(self, params: GroupParams, endorser_keys: Mapping[str, int], threshold: int):
        self.params = params
        self.endorser_keys = dict(endorser_keys)
        self.threshold = threshold
        self.blocks: list[Block] = []
        self.world: dict[tuple[bytes, str], StateEntry] = {}
        self.reports: dict[str, CommitReport] = {}
        self._committed: dict[str, Transaction] = {}
        self._lock = threading.RLock()

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    @property
    def height(self) -> int:
        return len(self.blocks)

    # -- validation -----------------------------------------------------------

    def _endorsement_flags(self, env: Envelope) -> tuple[bool, bool, bool]:
        """(policy met, V1, V2) from endorsements with valid peer signatures."""
        digest = env.tx.digest
        good: dict[str, Endorsement] = {}
        for e in env.endorsements:
            y = self.endorser_keys.get(e.peer_id)
            if y is None or e.tx_digest != digest or e.signature is None:
                continue
            if crypto.verify_single(self.params, y, e.signing_bytes(), e.signature,
                                    context=ENDORSE_CONTEXT):
                good[e.peer_id] = e
        k = self.threshold
        v1 = sum(e.v1 for e in good.values()) >= k
        v2 = sum(e.v2 for e in good.values()) >= k
        policy = sum(e.verdict for e in good.values()) >= k
        return policy, v1, v2

    def _ccv(self, tx: Transaction, world: dict) -> str:
        """Empty string when the version check passes, else the reason."""
        entry = world.get(tx.state_key)
        current = entry.version if entry else 0
        if tx.action is Action.STORE:
            expected = 0 if tx.read_version is None else tx.read_version
        else:
            if tx.read_version is None:
                return "missing read version"
            if entry is None:
                return "unknown key"
            expected = tx.read_version
        if expected != current:
            return f"stale read version {expected} (current {current})"
        if tx.action is not Action.ACCESS and tx.state_key[0] != tx.device_id:
            return "only the owner may write"
        if tx.action is Action.ACCESS and entry is not None:
            if tx.device_id != entry.owner and tx.device_id not in entry.acl:
                return "access denied by ACL"
        return ""

    def _apply(self, tx: Transaction, world: dict) -> None:
        if tx.action is Action.ACCESS:
            return
        entry = world.get(tx.state_key)
        version = (entry.version if entry else 0) + 1
        world[tx.state_key] = StateEntry(tx.state_key[0], tx.data_key, version, tx.address,
                                         tx.acl, stored=False)

    def validate_and_commit(self, block: Block) -> list[CommitReport]:
        with self._lock:
            if block.height != self.height or block.prev_hash != self.tip_hash:
                raise ForkError(f"block {block.height} does not extend tip {self.height}")
            if block.block_hash != compute_block_hash(block.height, block.prev_hash,
                                                      block.envelopes):
                raise ForkError(f"block {block.height} hash does not match its contents")
            world = dict(self.world)
            reports, validity = [], []
            seen = set()
            for env in block.envelopes:
                tx = env.tx
                digest = tx.digest.hex()
                policy, v1, v2 = self._endorsement_flags(env)
                if digest in self._committed or digest in seen:
                    reason = "duplicate transaction"
                elif not v1:
                    reason = "identity binding failed"
                elif not v2:
                    reason = "device signature failed"
                elif not policy:
                    reason = "endorsement policy not met"
                else:
                    reason = self._ccv(tx, world)
                valid = not reason
                if valid:
                    self._apply(tx, world)
                seen.add(digest)
                # Access has nothing to store off-chain
                s = valid and tx.action is Action.ACCESS
                reports.append(CommitReport(block.height, digest, valid, v1, v2, s, reason))
                validity.append(valid)
            committed = replace(block, validity=tuple(validity),
                                commit_digest=compute_commit_digest(block.block_hash, validity))
            self.blocks.append(committed)
            self.world = world
            for env, r in zip(block.envelopes, reports):
                self.reports.setdefault(r.tx_digest, r)
                self._committed.setdefault(r.tx_digest, env.tx)
            return reports

    def store_and_point(self, tx: Transaction, payload: bytes,
                        dht: StoreCluster) -> Optional[TxPointer]:
        """Write the payload to the content store and mark the pointer live.

        Returns ``None`` (and leaves ``s`` false) when the store write fails.
        """
        digest = tx.digest.hex()
        with self._lock:
            report = self.reports.get(digest)
            if report is None or not report.valid:
                raise LedgerError("only committed valid transactions can be stored")
            if tx.payload_digest is None:
                raise LedgerError("transaction carries no payload")
            if hashlib.sha256(payload).digest() != tx.payload_digest:
                raise LedgerError("payload does not match the signed digest")
        try:
            address = dht.put(payload)
        except StoreError:
            report.s = False
            return None
        with self._lock:
            entry = self.world.get(tx.state_key)
            if entry is not None and entry.address == address:
                entry.stored = True
            report.s = True
            return TxPointer(digest, address, report.block_height)

    def query(self, requester: Union[str, bytes], owner: Union[str, bytes],
              key: str) -> tuple[ContentAddress, int]:
        """Read-only lookup honoring the record's ACL."""
        req = requester.encode() if isinstance(requester, str) else bytes(requester)
        own = owner.encode() if isinstance(owner, str) else bytes(owner)
        with self._lock:
            entry = self.world.get((own, key))
            if entry is None:
                raise NotFound(f"{own!r}/{key}")
            if req != entry.owner and req not in entry.acl:
                raise AccessDenied(f"{req!r} may not read {own!r}/{key}")
            return entry.address, entry.version

    # -- audit and persistence --------------------------------------------------

    def audit(self) -> AuditResult:
        return audit_chain(self.blocks)

    def export_jsonl(self, path: Union[str, Path]) -> None:
        with self._lock:
            text = "".join(b.to_json() + "\n" for b in self.blocks)
        Path(path).write_text(text, encoding="ascii")

    def append_jsonl(self, path: Union[str, Path], blocks: Iterable[Block]) -> None:
        with open(path, "a", encoding="ascii") as fh:
            for b in blocks:
                fh.write(b.to_json() + "\n")

    def replay(self, blocks: Iterable[Block]) -> None:
        """Rebuild chain and world state from already-committed blocks."""
        for block in blocks:
            if block.validity is None:
                raise LedgerError(f"block {block.height} was never committed")
            if block.prev_hash != self.tip_hash or block.height != self.height:
                raise ForkError(f"block {block.height} does not extend the replayed chain")
            for env, valid in zip(block.envelopes, block.validity):
                if valid:
                    self._apply(env.tx, self.world)
                    entry = self.world.get(env.tx.state_key)
                    if entry is not None and env.tx.action is not Action.ACCESS:
                        entry.stored = True
                self._committed.setdefault(env.tx.digest.hex(), env.tx)
            self.blocks.append(block)


def audit_chain(blocks: Sequence[Block]) -> AuditResult:
    prev = ZERO_HASH
    for i, b in enumerate(blocks):
        if b.height != i:
            return AuditResult(False, len(blocks), i, "height out of sequence")
        if b.prev_hash != prev:
            return AuditResult(False, len(blocks), i, "broken hash link")
        if b.block_hash != compute_block_hash(b.height, b.prev_hash, b.envelopes):
            return AuditResult(False, len(blocks), i, "block hash mismatch")
        if b.validity is None or b.commit_digest != compute_commit_digest(b.block_hash,
                                                                          b.validity):
            return AuditResult(False, len(blocks), i, "validity flags do not match commit digest")
        prev = b.block_hash
    return AuditResult(True, len(blocks))


def load_jsonl(path: Union[str, Path]) -> tuple[list[Block], AuditResult]:
    """Parse a ledger export and audit it.

    A line must be the exact canonical rendering of the block it decodes to,
    so every byte of the file is covered by the audit.
    """
    blocks: list[Block] = []
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for i, line in enumerate(lines):
        try:
            block = Block.from_dict(json.loads(line.decode("ascii")))
        except (UnicodeDecodeError, ValueError, KeyError, TypeError, AttributeError) as exc:
            return blocks, AuditResult(False, len(lines), i, f"unparseable block: {exc}")
        if block.to_json().encode("ascii") != line:
            return blocks, AuditResult(False, len(lines), i, "non-canonical block encoding")
        blocks.append(block)
    return blocks, audit_chain(blocks)
