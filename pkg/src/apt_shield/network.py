"""In-process consortium: KGD peers acting as endorsers, one sequencer, one
committing ledger and a content store, wired into the six-step flow."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence, Union

from . import kgd, ledger
from .crypto import GroupParams
from .dht import StoreCluster
from .ledger import Action, BatchConfig, Block, CommitReport, Endorsement, Transaction


@dataclass
class Device:
    identity: kgd.DeviceIdentity
    keys: kgd.DeviceKeypair
    params: GroupParams
    rng: Any = None

    @property
    def id(self) -> bytes:
        return self.identity.id

    def propose(self, action: Union[Action, str], data_key: str, *, timestamp: int,
                payload: Optional[bytes] = None, acl: Iterable[bytes] = (),
                detection_status: bytes = b"", read_version: Optional[int] = None,
                owner: Optional[bytes] = None, rng=None) -> Transaction:
        digest = None if payload is None else hashlib.sha256(payload).digest()
        return ledger.propose(self.params, self.id, self.keys.sk, Action(action), data_key,
                              timestamp=timestamp, payload_digest=digest, acl=acl,
                              detection_status=detection_status, read_version=read_version,
                              owner=owner, rng=rng or self.rng, pk=self.keys.pk)


class Network:
    def __init__(self, state: kgd.KgdState, *, threshold: Optional[int] = None,
                 batch: BatchConfig = BatchConfig(), dht: Optional[StoreCluster] = None,
                 rng=None):
        self.state = state
        self.params = state.params
        self.rng = rng
        self.registry = ledger.DeviceRegistry()
        self.peers = [ledger.EndorsingPeer(f"peer-{i}", state, self.registry, kp, rng)
                      for i, kp in enumerate(state.peers)]
        self.threshold = threshold or ledger.default_threshold(len(self.peers))
        if not 1 <= self.threshold <= len(self.peers):
            raise ValueError("endorsement threshold must lie in [1, number of peers]")
        self.ledger = ledger.Ledger(self.params, {p.peer_id: p.keypair.y for p in self.peers},
                                    self.threshold)
        self.orderer = ledger.OrderingService(batch)
        self.dht = dht if dht is not None else StoreCluster(["dht-0", "dht-1", "dht-2"], 2)
        self._payloads: dict[str, bytes] = {}
        self._delivery_lock = threading.RLock()

    # -- registration --------------------------------------------------------

    def register(self, dev_ids: Sequence[Union[str, bytes]], t: int) -> list[Device]:
        """Run one registration batch end to end and publish the bindings."""
        idents = kgd.identities_for_batch(dev_ids, t)
        device_secrets = [kgd.new_device_secret(self.params, self.rng) for _ in idents]
        out = kgd.issue(self.state, [kgd.RegistrationRequest(i, b)
                                     for i, (_, b) in zip(idents, device_secrets)], self.rng)
        devices = []
        for ident, (x, _) in zip(idents, device_secrets):
            keys = kgd.device_register(self.params, self.state.Y, ident, x, out,
                                       self.state.hash_fn)
            if keys is None:
                raise kgd.RegistrationError(f"device {ident.id!r} rejected its registration")
            self.registry.add(ident.id, keys.pk, keys.binding)
            devices.append(Device(ident, keys, self.params, self.rng))
        return devices

    # -- transaction flow ------------------------------------------------------

    def endorse(self, tx: Transaction) -> list[Endorsement]:
        return [p.endorse(tx) for p in self.peers]

    def submit(self, tx: Transaction, payload: Optional[bytes] = None,
               now: float = 0.0) -> list[CommitReport]:
        """Endorse, aggregate and hand to the sequencer.

        Raises :class:`ledger.EndorsementError` when the policy is not met.
        Returns reports for any blocks the submission caused to be cut.
        """
        envelope = ledger.aggregate(tx, self.endorse(tx), self.threshold)
        if payload is not None:
            self._payloads[tx.digest.hex()] = payload
        # cutting and committing happen under one lock so blocks reach the
        # ledger in the order the sequencer produced them
        with self._delivery_lock:
            return self.commit_blocks(self.orderer.submit(envelope, now))

    def tick(self, now: float) -> list[CommitReport]:
        with self._delivery_lock:
            return self.commit_blocks(self.orderer.tick(now))

    def flush(self) -> list[CommitReport]:
        with self._delivery_lock:
            return self.commit_blocks(self.orderer.flush())

    def commit_blocks(self, blocks: Sequence[Block]) -> list[CommitReport]:
        reports = []
        with self._delivery_lock:
            for block in blocks:
                block_reports = self.ledger.validate_and_commit(block)
                for env, report in zip(block.envelopes, block_reports):
                    payload = self._payloads.pop(report.tx_digest, None)
                    if report.valid and payload is not None:
                        self.ledger.store_and_point(env.tx, payload, self.dht)
                reports.extend(block_reports)
        return reports

    def query(self, requester: Union[str, bytes], owner: Union[str, bytes], key: str):
        return self.ledger.query(requester, owner, key)

    def read(self, requester: Union[str, bytes], owner: Union[str, bytes], key: str) -> bytes:
        address, _ = self.query(requester, owner, key)
        return self.dht.get(address)
