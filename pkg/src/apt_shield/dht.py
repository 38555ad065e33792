"""Content-addressed payload store over simulated nodes.

Placement uses consistent hashing: an address lives on the ``replication``
nodes that follow its digest clockwise on a SHA-256 ring, skipping nodes
that are down.  Reads verify the digest before returning anything.
"""

from __future__ import annotations

import bisect
import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union


class StoreError(Exception):
    pass


class NotFound(StoreError, KeyError):
    pass


class Unavailable(StoreError):
    """Every node that could serve the request is down."""


class IntegrityError(StoreError):
    pass


@dataclass(frozen=True, order=True)
class ContentAddress:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("content addresses are 32-byte SHA-256 digests")

    @classmethod
    def of(cls, payload: bytes) -> "ContentAddress":
        return cls(hashlib.sha256(payload).digest())

    @classmethod
    def from_hex(cls, text: str) -> "ContentAddress":
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self) -> str:
        return self.hex


@dataclass
class _Node:
    node_id: str
    up: bool = True
    blobs: dict[ContentAddress, bytes] = field(default_factory=dict)


@dataclass
class MigrationReport:
    added: list[tuple[str, str]] = field(default_factory=list)     # (address hex, node)
    removed: list[tuple[str, str]] = field(default_factory=list)
    lost: list[str] = field(default_factory=list)

    @property
    def moved_keys(self) -> set[str]:
        return {a for a, _ in self.added} | {a for a, _ in self.removed}

    def __bool__(self) -> bool:
        return bool(self.added or self.removed or self.lost)


def _ring_position(value: bytes) -> int:
    return int.from_bytes(hashlib.sha256(value).digest(), "big")


class StoreCluster:
    """A replicated content store with ``replication`` copies per payload."""

    def __init__(self, node_ids: Iterable[str], replication: int = 1,
                 persist_dir: Optional[Union[str, Path]] = None):
        if replication < 1:
            raise ValueError("replication must be at least 1")
        self.replication = replication
        self._nodes: dict[str, _Node] = {}
        self._ring: list[tuple[int, str]] = []
        self._lock = threading.RLock()
        self.persist_dir = Path(persist_dir) if persist_dir is not None else None
        for nid in node_ids:
            self._add(nid)
        if not self._nodes:
            raise ValueError("a cluster needs at least one node")
        if self.persist_dir is not None:
            self._load_persisted()

    # -- membership ---------------------------------------------------------

    def _add(self, nid: str) -> None:
        if nid in self._nodes:
            raise ValueError(f"duplicate node id {nid!r}")
        self._nodes[nid] = _Node(nid)
        bisect.insort(self._ring, (_ring_position(nid.encode()), nid))

    @property
    def node_ids(self) -> list[str]:
        return [nid for _, nid in self._ring]

    def set_up(self, nid: str, up: bool) -> None:
        with self._lock:
            self._nodes[nid].up = up

    def is_up(self, nid: str) -> bool:
        return self._nodes[nid].up

    def successors(self, address: ContentAddress, only_up: bool = True) -> list[str]:
        """Ring order starting at the first node at or after the address."""
        pos = int.from_bytes(address.digest, "big")
        start = bisect.bisect_left(self._ring, (pos, ""))
        ordered = [self._ring[(start + i) % len(self._ring)][1] for i in range(len(self._ring))]
        if only_up:
            ordered = [n for n in ordered if self._nodes[n].up]
        return ordered

    def placement(self, address: ContentAddress) -> list[str]:
        return self.successors(address)[: self.replication]

    def holders(self, address: ContentAddress) -> list[str]:
        return [n for n in self.node_ids if address in self._nodes[n].blobs]

    def addresses(self) -> set[ContentAddress]:
        with self._lock:
            return {a for node in self._nodes.values() for a in node.blobs}

    # -- data path ----------------------------------------------------------

    def put(self, payload: bytes) -> ContentAddress:
        payload = bytes(payload)
        address = ContentAddress.of(payload)
        with self._lock:
            targets = self.placement(address)
            if not targets:
                raise Unavailable("all replica targets are down")
            for nid in targets:
                self._write(nid, address, payload)
        return address

    def get(self, address: ContentAddress) -> bytes:
        with self._lock:
            holders = [n for n in self.successors(address, only_up=False)
                       if address in self._nodes[n].blobs]
            if not holders:
                raise NotFound(address.hex)
            live = [n for n in holders if self._nodes[n].up]
            if not live:
                raise Unavailable(f"all replicas of {address.hex} are down")
            for nid in live:
                data = self._nodes[nid].blobs[address]
                if hashlib.sha256(data).digest() == address.digest:
                    return data
        raise IntegrityError(f"every live replica of {address.hex} fails its digest check")

    def corrupt(self, address: ContentAddress, nid: str, data: bytes) -> None:
        """Overwrite a stored replica without re-addressing it (fault injection)."""
        with self._lock:
            self._nodes[nid].blobs[address] = bytes(data)

    def _write(self, nid: str, address: ContentAddress, payload: bytes) -> None:
        node = self._nodes[nid]
        node.blobs[address] = payload
        if self.persist_dir is not None:
            d = self.persist_dir / nid
            d.mkdir(parents=True, exist_ok=True)
            (d / address.hex).write_bytes(payload)

    def _drop(self, nid: str, address: ContentAddress) -> None:
        self._nodes[nid].blobs.pop(address, None)
        if self.persist_dir is not None:
            (self.persist_dir / nid / address.hex).unlink(missing_ok=True)

    def _load_persisted(self) -> None:
        for nid, node in self._nodes.items():
            d = self.persist_dir / nid
            if d.is_dir():
                for f in d.iterdir():
                    node.blobs[ContentAddress.from_hex(f.name)] = f.read_bytes()

    # -- rebalancing ----------------------------------------------------------

    def rebalance(self, add: Optional[str] = None, remove: Optional[str] = None) -> MigrationReport:
        """Apply a membership change and restore the placement invariant."""
        with self._lock:
            salvage: dict[ContentAddress, bytes] = {}
            if remove is not None:
                if remove not in self._nodes:
                    raise KeyError(remove)
                if len(self._nodes) == 1 and add is None:
                    raise ValueError("cannot remove the last node")
            if add is not None:
                self._add(add)
            report = MigrationReport()
            if remove is not None:
                gone = self._nodes.pop(remove)
                self._ring.remove((_ring_position(remove.encode()), remove))
                if gone.up:
                    salvage.update(gone.blobs)
                for a in gone.blobs:
                    report.removed.append((a.hex, remove))
            for address in sorted(self.addresses() | set(salvage)):
                data = self._readable_copy(address, salvage)
                if data is None:
                    report.lost.append(address.hex)
                    continue
                targets = set(self.placement(address))
                for nid in self.successors(address):
                    if nid in targets and address not in self._nodes[nid].blobs:
                        self._write(nid, address, data)
                        report.added.append((address.hex, nid))
                for nid in self.holders(address):
                    if nid not in targets and self._nodes[nid].up:
                        self._drop(nid, address)
                        report.removed.append((address.hex, nid))
            return report

    def _readable_copy(self, address: ContentAddress, extra: dict) -> Optional[bytes]:
        candidates = [self._nodes[n].blobs[address] for n in self.holders(address)
                      if self._nodes[n].up]
        if address in extra:
            candidates.append(extra[address])
        for data in candidates:
            if hashlib.sha256(data).digest() == address.digest:
                return data
        return None
