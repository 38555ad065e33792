"""Benchmark harness: open-loop workload against the in-process pipeline.

Two clocks are supported.  ``wall`` runs a generator thread that releases
operations at their scheduled times, client worker threads that carry them
through propose, endorse, order and commit, and a ticker that lets the
sequencer cut blocks on timeout.  Latency is measured from the *scheduled*
submit time, so a backed-up client cannot hide queueing delay.

``logical`` executes the same pipeline operations in a deterministic order
and charges each stage a fixed service time from :class:`LogicalCosts`.
Reports in this mode depend only on the configuration and seed.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import os
import queue
import random
import threading
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from . import crypto, kgd, ledger
from .dht import StoreCluster
from .ledger import Action, BatchConfig, CommitReport, EndorsementError
from .network import Network

log = logging.getLogger(__name__)

SEED_ENV = "APT_SHIELD_SEED"
READ, WRITE = "read", "write"


class ConfigError(ValueError):
    pass


class BenchTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class BatchSpec:
    max_count: int = 50
    max_wait: float = 0.02


@dataclass(frozen=True)
class DhtSpec:
    nodes: int = 3
    replication: int = 2


@dataclass(frozen=True)
class LogicalCosts:
    """Service times in milliseconds for the logical clock."""

    propose_ms: float = 0.4
    endorse_ms: float = 0.6
    commit_block_ms: float = 0.5
    commit_tx_ms: float = 0.5
    verify_endorsement_ms: float = 0.2  # per endorsement checked at commit
    read_ms: float = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    peers: int = 2
    threshold: Optional[int] = None
    batch: BatchSpec = BatchSpec()
    rate: float = 100.0
    duration: float = 2.0
    read_ratio: float = 0.0
    update_ratio: float = 0.0
    seed: int = 0
    dht: DhtSpec = DhtSpec()
    detector: bool = False
    clock: str = "wall"
    window: float = 1.0
    lam: int = 160
    pbits: Optional[int] = 384
    workers: int = 4
    devices: int = 4
    keys_per_device: int = 16
    costs: LogicalCosts = LogicalCosts()

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(2 <= self.peers <= 35, "peers must lie in [2, 35]")
        need(self.threshold is None or 1 <= self.threshold <= self.peers,
             "threshold must lie in [1, peers]")
        need(self.batch.max_count >= 1 and self.batch.max_wait > 0,
             "batch needs max_count >= 1 and max_wait > 0")
        need(0 <= self.rate <= 1500, "rate must lie in [0, 1500] tx/s")
        need(self.duration > 0, "duration must be positive")
        need(0 <= self.read_ratio <= 1 and 0 <= self.update_ratio <= 1,
             "read_ratio and update_ratio must lie in [0, 1]")
        need(self.dht.nodes >= 1 and 1 <= self.dht.replication <= self.dht.nodes,
             "dht needs nodes >= 1 and 1 <= replication <= nodes")
        need(self.clock in ("wall", "logical"), "clock must be 'wall' or 'logical'")
        need(self.window > 0, "window must be positive")
        need(self.lam in crypto.SECURITY_LEVELS,
             f"lambda must be one of {sorted(crypto.SECURITY_LEVELS)}")
        need(1 <= self.workers <= 64, "workers must lie in [1, 64]")
        need(self.devices >= 1 and self.keys_per_device >= 1,
             "devices and keys_per_device must be positive")

    @property
    def n_ops(self) -> int:
        return int(round(self.rate * self.duration))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict, *, env: Optional[dict] = None) -> "ScenarioConfig":
        """Build from scenario JSON; ``APT_SHIELD_SEED`` in ``env`` overrides the seed."""
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        nested = {"batch": BatchSpec, "dht": DhtSpec, "costs": LogicalCosts}
        try:
            for name, typ in nested.items():
                if name in d and isinstance(d[name], dict):
                    d[name] = typ(**d[name])
            env = os.environ if env is None else env
            if env.get(SEED_ENV):
                d["seed"] = int(env[SEED_ENV])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class LatencyStats:
    """Milliseconds; fields other than ``count`` are None when empty."""

    count: int = 0
    min: Optional[float] = None
    avg: Optional[float] = None
    p50: Optional[float] = None
    p95: Optional[float] = None
    max: Optional[float] = None

    @classmethod
    def of(cls, seconds) -> "LatencyStats":
        a = np.asarray(seconds, dtype=np.float64) * 1e3
        if a.size == 0:
            return cls()
        p50, p95 = np.percentile(a, [50, 95])
        return cls(int(a.size), float(a.min()), float(a.mean()), float(p50), float(p95),
                   float(a.max()))


@dataclass(frozen=True)
class OpStats:
    submitted: int
    completed: int
    throughput: float
    latency: LatencyStats


@dataclass(frozen=True)
class WindowRow:
    window_start: float
    tx_submitted: int
    tx_committed: int
    tx_invalid: int
    p: float
    rho: Optional[float]
    lat_avg_ms: Optional[float]
    lat_p95_ms: Optional[float]


@dataclass(frozen=True)
class RegistrationComparison:
    ca_delay_ms: float
    certificateless: LatencyStats
    ca: LatencyStats


@dataclass(frozen=True)
class BenchReport:
    config: dict
    clock: str
    submitted: int
    committed: int  # completed and valid
    invalid: int
    failed: int
    elapsed_s: float  # first scheduled submit to last completion
    throughput: float
    rho: Optional[float]
    latency: LatencyStats
    per_op: dict[str, OpStats]
    peak_queue_depth: int  # stand-in for resource consumption
    windows: list[WindowRow]
    registration: Optional[RegistrationComparison] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        d = dict(d)
        d["latency"] = LatencyStats(**d["latency"])
        d["per_op"] = {k: OpStats(v["submitted"], v["completed"], v["throughput"],
                                  LatencyStats(**v["latency"])) for k, v in d["per_op"].items()}
        d["windows"] = [WindowRow(**w) for w in d["windows"]]
        if d.get("registration") is not None:
            r = d["registration"]
            d["registration"] = RegistrationComparison(
                r["ca_delay_ms"], LatencyStats(**r["certificateless"]), LatencyStats(**r["ca"]))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def summary(self) -> str:
        def ms(v):
            return "-" if v is None else f"{v:.2f}"

        lat = self.latency
        rho = "undefined" if self.rho is None else f"{self.rho:.4f}"
        lines = [
            f"clock={self.clock} submitted={self.submitted} committed={self.committed} "
            f"invalid={self.invalid} failed={self.failed}",
            f"throughput P={self.throughput:.1f} tx/s  success rate rho={rho}  "
            f"elapsed={self.elapsed_s:.3f}s",
            f"latency ms: min={ms(lat.min)} avg={ms(lat.avg)} p50={ms(lat.p50)} "
            f"p95={ms(lat.p95)} max={ms(lat.max)}",
        ]
        for op, s in sorted(self.per_op.items()):
            lines.append(f"  {op:5s} submitted={s.submitted} completed={s.completed} "
                         f"throughput={s.throughput:.1f} tx/s avg={ms(s.latency.avg)} ms")
        lines.append(f"peak queue depth (resource proxy) = {self.peak_queue_depth}")
        if self.registration is not None:
            r = self.registration
            lines.append(f"registration avg ms: certificateless={ms(r.certificateless.avg)} "
                         f"simulated CA ({r.ca_delay_ms:g} ms delay)={ms(r.ca.avg)}")
        return "\n".join(lines)


WINDOW_COLUMNS = [f.name for f in fields(WindowRow)]


def emit_report(report: BenchReport, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """Write the full report as JSON or the per-window rows as CSV."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "json":
        path.write_text(report.to_json() + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(WINDOW_COLUMNS)
            for row in report.windows:
                w.writerow(["" if v is None else v for v in asdict(row).values()])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


# ---------------------------------------------------------------------------
# shared setup


@dataclass
class _Record:
    op: str
    scheduled: float
    done: Optional[float] = None
    valid: Optional[bool] = None
    failed: bool = False


class _Collector:
    """Single sink for measurements from every worker thread."""

    def __init__(self, n: int):
        self._lock = threading.Lock()
        self.records: list[Optional[_Record]] = [None] * n
        self._by_digest: dict[str, int] = {}
        self.peak_queue = 0

    def schedule(self, seq: int, op: str, t: float) -> None:
        self.records[seq] = _Record(op, t)

    def bind(self, digest: str, seq: int) -> None:
        with self._lock:
            self._by_digest[digest] = seq

    def complete(self, seq: int, t: float, valid: bool) -> None:
        with self._lock:
            r = self.records[seq]
            r.done, r.valid = t, valid

    def fail(self, seq: int, t: float) -> None:
        with self._lock:
            r = self.records[seq]
            r.done, r.failed = t, True

    def reports(self, reports: list[CommitReport], t: float) -> None:
        with self._lock:
            for rep in reports:
                seq = self._by_digest.pop(rep.tx_digest, None)
                if seq is not None:
                    r = self.records[seq]
                    r.done, r.valid = t, rep.valid

    def queue_depth(self, depth: int) -> None:
        if depth > self.peak_queue:
            self.peak_queue = depth


@functools.lru_cache(maxsize=8)
def _group(lam: int, pbits: Optional[int], seed: int) -> crypto.GroupParams:
    return crypto.setup(lam, random.Random(seed), insecure=lam in crypto.TEST_LAMBDAS,
                        pbits=pbits)


@dataclass
class _Fixture:
    net: Network
    devices: list
    keys: list[list[str]]
    ops: list[str]
    updates: list[bool]
    rng: random.Random
    classifier: Any = None
    sample_rows: Any = None


def _build(cfg: ScenarioConfig) -> _Fixture:
    rng = random.Random(cfg.seed)
    params = _group(cfg.lam, cfg.pbits, cfg.seed)
    state = kgd.kgd_setup(params, cfg.peers, rng)
    dht = StoreCluster([f"dht-{i}" for i in range(cfg.dht.nodes)], cfg.dht.replication)
    net = Network(state, threshold=cfg.threshold,
                  batch=BatchConfig(cfg.batch.max_count, cfg.batch.max_wait), dht=dht, rng=rng)
    devices = net.register([f"bench-dev-{i}".encode() for i in range(cfg.devices)], 0)
    # records that reads and updates target, committed before measurement starts
    keys = []
    for d, dev in enumerate(devices):
        mine = [f"seed-{d}-{k}" for k in range(cfg.keys_per_device)]
        for k, key in enumerate(mine):
            payload = f"{key}:{cfg.seed}".encode()
            net.submit(dev.propose(Action.STORE, key, timestamp=0, payload=payload), payload)
        keys.append(mine)
    net.flush()
    op_rng = random.Random(cfg.seed * 7919 + 1)
    ops = [READ if op_rng.random() < cfg.read_ratio else WRITE for _ in range(cfg.n_ops)]
    updates = [op_rng.random() < cfg.update_ratio for _ in range(cfg.n_ops)]
    fx = _Fixture(net, devices, keys, ops, updates, rng)
    if cfg.detector:
        from .detector import DTLResNetClassifier
        from .detector.synthetic import make_separable

        X, y = make_separable(200, 6, seed=cfg.seed)
        fx.classifier = DTLResNetClassifier(epochs=2, random_state=cfg.seed).fit(X, y)
        fx.sample_rows = X
    return fx


def _write_tx(fx: _Fixture, seq: int, rng: random.Random):
    dev_idx = seq % len(fx.devices)
    dev = fx.devices[dev_idx]
    payload = f"op-{seq}".encode()
    status = b""
    if fx.classifier is not None:
        from .detector import detect_and_seal

        row = fx.sample_rows[seq % len(fx.sample_rows)]
        status = detect_and_seal(fx.classifier, row, fx.net.params, fx.net.state.Y, rng)
    if fx.updates[seq]:
        key = fx.keys[dev_idx][seq // len(fx.devices) % len(fx.keys[dev_idx])]
        _, version = fx.net.query(dev.id, dev.id, key)
        tx = dev.propose(Action.UPDATE, key, timestamp=seq + 1, payload=payload,
                         read_version=version, detection_status=status, rng=rng)
    else:
        tx = dev.propose(Action.STORE, f"w-{seq}", timestamp=seq + 1, payload=payload,
                         detection_status=status, rng=rng)
    return tx, payload


def _read(fx: _Fixture, seq: int) -> None:
    d = seq % len(fx.devices)
    dev = fx.devices[d]
    key = fx.keys[d][seq // len(fx.devices) % len(fx.keys[d])]
    fx.net.read(dev.id, dev.id, key)


# ---------------------------------------------------------------------------
# wall clock


def _run_wall(cfg: ScenarioConfig, fx: _Fixture) -> _Collector:
    n = cfg.n_ops
    col = _Collector(n)
    work: queue.Queue = queue.Queue()
    stop = threading.Event()
    t0 = time.perf_counter()
    clock = lambda: time.perf_counter() - t0
    deadline = 10 * cfg.duration

    def worker(wid: int):
        rng = random.Random(cfg.seed * 1_000_003 + wid)
        while not stop.is_set():
            item = work.get()
            if item is None:
                return
            seq, op = item
            try:
                if op == READ:
                    _read(fx, seq)
                    col.complete(seq, clock(), True)
                    continue
                tx, payload = _write_tx(fx, seq, rng)
                col.bind(tx.digest.hex(), seq)
                col.reports(fx.net.submit(tx, payload, now=clock()), clock())
            except EndorsementError:
                col.fail(seq, clock())
            except Exception:  # a failed op is a measurement, not a harness crash
                log.exception("operation %d failed", seq)
                col.fail(seq, clock())

    def ticker():
        step = min(cfg.batch.max_wait / 4, 0.01)
        while not stop.is_set():
            time.sleep(step)
            col.reports(fx.net.tick(clock()), clock())
            col.queue_depth(work.qsize() + fx.net.orderer.queue_depth)

    threads = [threading.Thread(target=worker, args=(i,), daemon=True)
               for i in range(cfg.workers)]
    tick_thread = threading.Thread(target=ticker, daemon=True)
    for th in threads:
        th.start()
    tick_thread.start()
    for seq in range(n):
        due = seq / cfg.rate
        col.schedule(seq, fx.ops[seq], due)
        wait = due - clock()
        if wait > 0:
            time.sleep(wait)
        work.put((seq, fx.ops[seq]))
        col.queue_depth(work.qsize() + fx.net.orderer.queue_depth)
    for _ in threads:
        work.put(None)
    try:
        for th in threads:
            th.join(timeout=max(deadline - clock(), 0))
            if th.is_alive():
                raise BenchTimeout(f"scenario exceeded {deadline:.1f}s (10x its duration)")
        col.reports(fx.net.flush(), clock())
    finally:
        stop.set()
        tick_thread.join()
    return col


# ---------------------------------------------------------------------------
# logical clock


def _run_logical(cfg: ScenarioConfig, fx: _Fixture) -> _Collector:
    n = cfg.n_ops
    c = cfg.costs
    col = _Collector(n)
    rng = random.Random(cfg.seed * 1_000_003)
    dev_free = [0.0] * len(fx.devices)
    peer_free = [0.0] * cfg.peers
    read_free = 0.0
    writes = []
    for seq in range(n):
        t = seq / cfg.rate
        col.schedule(seq, fx.ops[seq], t)
        if fx.ops[seq] == READ:
            read_free = max(t, read_free) + c.read_ms / 1e3
            _read(fx, seq)
            col.complete(seq, read_free, True)
            continue
        d = seq % len(fx.devices)
        proposed = max(t, dev_free[d]) + c.propose_ms / 1e3
        dev_free[d] = proposed
        for p in range(cfg.peers):
            peer_free[p] = max(proposed, peer_free[p]) + c.endorse_ms / 1e3
        writes.append((max(peer_free), seq))
    writes.sort()

    orderer = fx.net.orderer
    commit_free = 0.0
    depth = 0

    def commit(blocks, t_cut):
        nonlocal commit_free
        for block in blocks:
            per_tx = sum(c.commit_tx_ms + c.verify_endorsement_ms * len(e.endorsements)
                         for e in block.envelopes)
            commit_free = max(t_cut, commit_free) + (c.commit_block_ms + per_tx) / 1e3
            col.reports(fx.net.commit_blocks([block]), commit_free)

    def timeout_cut(dl):
        # first_arrival + max_wait - first_arrival can round below max_wait
        commit(orderer.tick(dl) or orderer.flush(), dl)

    for endorsed_at, seq in writes:
        while (dl := orderer.next_deadline()) is not None and dl <= endorsed_at:
            timeout_cut(dl)
        tx, payload = _write_tx(fx, seq, rng)
        col.bind(tx.digest.hex(), seq)
        try:
            env = ledger.aggregate(tx, fx.net.endorse(tx), fx.net.threshold)
        except EndorsementError:
            col.fail(seq, endorsed_at)
            continue
        fx.net._payloads[tx.digest.hex()] = payload
        commit(orderer.submit(env, endorsed_at), endorsed_at)
        # pending envelopes plus transactions endorsed but not yet ordered
        depth = max(depth, orderer.queue_depth)
    while (dl := orderer.next_deadline()) is not None:
        timeout_cut(dl)
    col.queue_depth(depth)
    return col


# ---------------------------------------------------------------------------
# aggregation


def _summarize(cfg: ScenarioConfig, col: _Collector,
               registration: Optional[RegistrationComparison]) -> BenchReport:
    recs = [r for r in col.records if r is not None]
    done = [r for r in recs if r.done is not None and not r.failed]
    ok = [r for r in done if r.valid]
    last = max((r.done for r in recs if r.done is not None), default=0.0)

    def per(op):
        sub = [r for r in recs if r.op == op]
        good = [r for r in sub if r.valid]
        end = max((r.done for r in good), default=0.0)
        tput = len(good) / end if end > 0 else 0.0
        return OpStats(len(sub), len(good), tput, LatencyStats.of([r.done - r.scheduled
                                                                    for r in good]))

    windows = []
    n_windows = max(int(math.ceil(cfg.duration / cfg.window - 1e-9)), 1)
    for w in range(n_windows):
        lo, hi = w * cfg.window, (w + 1) * cfg.window
        cohort = [r for r in recs if lo <= r.scheduled < hi]
        valid = [r for r in cohort if r.valid]
        invalid = [r for r in cohort if r.valid is False and not r.failed]
        finishing = sum(1 for r in ok if lo <= r.done < hi)
        lat = LatencyStats.of([r.done - r.scheduled for r in valid])
        windows.append(WindowRow(lo, len(cohort), len(valid), len(invalid),
                                 finishing / cfg.window,
                                 len(valid) / len(cohort) if cohort else None,
                                 lat.avg, lat.p95))

    return BenchReport(
        config=cfg.to_dict(), clock=cfg.clock, submitted=len(recs), committed=len(ok),
        invalid=sum(1 for r in done if r.valid is False), failed=sum(r.failed for r in recs),
        elapsed_s=last, throughput=len(ok) / last if last > 0 else 0.0,
        rho=len(ok) / len(recs) if recs else None,
        latency=LatencyStats.of([r.done - r.scheduled for r in ok]),
        per_op={READ: per(READ), WRITE: per(WRITE)}, peak_queue_depth=col.peak_queue,
        windows=windows, registration=registration)


def run_bench(cfg: ScenarioConfig, *, registration_samples: int = 0,
              ca_delay_ms: float = 40.0) -> BenchReport:
    fx = _build(cfg)
    if cfg.n_ops == 0:
        col = _Collector(0)
    elif cfg.clock == "wall":
        col = _run_wall(cfg, fx)
    else:
        col = _run_logical(cfg, fx)
    reg = None
    if registration_samples:
        reg = compare_registration(cfg, registration_samples, ca_delay_ms)
    return _summarize(cfg, col, reg)


# ---------------------------------------------------------------------------
# registration: certificateless multisignature flow vs a simulated CA


def _ca_register(params: crypto.GroupParams, ca_x: int, ca_y: int, device_id: bytes,
                 rng, delay_s: float) -> None:
    """Device key, certificate request, CA round trip, certificate check."""
    x = rng.randrange(1, params.q)
    pk = pow(params.g, x, params.p)
    body = crypto.encode_fields(device_id, crypto.int_to_bytes(pk))
    time.sleep(delay_s)  # network and CA queueing
    cert = crypto.sign(params, ca_x, body, rng, context=b"ca-cert", y=ca_y)
    if not crypto.verify_single(params, ca_y, body, cert, context=b"ca-cert"):
        raise RuntimeError("CA certificate failed to verify")


def compare_registration(cfg: ScenarioConfig, samples: int = 20,
                         ca_delay_ms: float = 40.0) -> RegistrationComparison:
    if samples < 1 or ca_delay_ms < 0:
        raise ConfigError("samples must be positive and ca_delay_ms non-negative")
    rng = random.Random(cfg.seed + 17)
    params = _group(cfg.lam, cfg.pbits, cfg.seed)
    net = Network(kgd.kgd_setup(params, cfg.peers, rng), rng=rng)
    cl = []
    for i in range(samples):
        t = time.perf_counter()
        net.register([f"reg-{i}".encode()], i + 1)
        cl.append(time.perf_counter() - t)
    ca_kp = crypto.keygen(params, rng)
    ca = []
    for i in range(samples):
        t = time.perf_counter()
        _ca_register(params, ca_kp.x, ca_kp.y, f"reg-{i}".encode(), rng, ca_delay_ms / 1e3)
        ca.append(time.perf_counter() - t)
    return RegistrationComparison(ca_delay_ms, LatencyStats.of(cl), LatencyStats.of(ca))
