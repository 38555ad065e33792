"""``apt-shield`` command line.

Exit status: 0 success, 1 usage error, 2 runtime failure.  Results go to
stdout and diagnostics to stderr.

Consortium, registry, ledger and content store live in a home directory
(``--home``, default ``./apt-shield-home``)::

    consortium.json   public group parameters and peer keys
    keystore.json     peer secrets and master-secret shares (mode 0600)
    registry.json     registered devices: issue time, pk, binding
    device-keys.json  device private keys (mode 0600)
    ledger.jsonl      committed blocks, one canonical JSON line each
    dht/              content store replicas
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, crypto, kgd, ledger
from .dht import StoreCluster
from .ledger import Action, BatchConfig
from .network import Device, Network

log = logging.getLogger("apt_shield")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DHT_NODES = ["dht-0", "dht-1", "dht-2"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# home directory


def _write_private(path: Path, data: dict) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise RuntimeError(f"{path} not found; run 'apt-shield keygen' first") from None


class Home:
    def __init__(self, root: Path):
        self.root = root

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def load_network(self, rng=None) -> Network:
        pub = _read_json(self / "consortium.json")
        keys = _read_json(self / "keystore.json")
        params = crypto.GroupParams.from_dict(pub["params"])
        xs = [int(p["x"], 16) for p in keys["peers"]]
        shares = [int(p["ms_share"], 16) for p in keys["peers"]]
        state = kgd.kgd_setup(params, len(xs), rng, xs=xs, ms_contributions=shares)
        if format(state.Y, "x") != pub["Y"]:
            raise RuntimeError("keystore does not match the published consortium key")
        batch = BatchConfig(**pub["batch"])
        dht = StoreCluster(DHT_NODES, 2, persist_dir=self / "dht")
        net = Network(state, threshold=pub["threshold"], batch=batch, dht=dht, rng=rng)
        registry = _read_json(self / "registry.json") if (self / "registry.json").exists() else {}
        for dev_hex, rec in registry.items():
            dev = bytes.fromhex(dev_hex)
            state.issued[dev] = (rec["issued_at"], int(rec["binding"], 16))
            net.registry.add(dev, int(rec["pk"], 16), int(rec["binding"], 16))
        path = self / "ledger.jsonl"
        if path.exists():
            blocks, audit = ledger.load_jsonl(path)
            if not audit.ok:
                raise RuntimeError(f"ledger audit failed at height {audit.bad_height}: "
                                   f"{audit.reason}")
            net.ledger.replay(blocks)
        net.orderer = ledger.OrderingService(batch, prev_hash=net.ledger.tip_hash,
                                             height=net.ledger.height)
        return net

    def device(self, net: Network, device_id: bytes) -> Device:
        registry = _read_json(self / "registry.json")
        secrets_ = _read_json(self / "device-keys.json")
        rec = registry.get(device_id.hex())
        if rec is None or device_id.hex() not in secrets_:
            raise RuntimeError(f"device {device_id.decode(errors='replace')!r} is not registered")
        x = int(secrets_[device_id.hex()]["x"], 16)
        sk = int(secrets_[device_id.hex()]["sk"], 16)
        keys = kgd.DeviceKeypair(x, (sk - x) % net.params.q, sk, int(rec["pk"], 16),
                                 int(rec["binding"], 16))
        ident = kgd.DeviceIdentity(device_id, rec["edge_id"], rec["issued_at"])
        return Device(ident, keys, net.params, net.rng)


# ---------------------------------------------------------------------------
# commands


def cmd_keygen(args) -> int:
    home = Home(Path(args.home))
    if (home / "keystore.json").exists() and not args.force:
        raise RuntimeError(f"{home / 'keystore.json'} exists; pass --force to replace it")
    home.root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed) if args.seed is not None else None
    params = crypto.setup(args.security, rng, insecure=args.security in crypto.TEST_LAMBDAS,
                          pbits=args.pbits)
    draw = rng or random.SystemRandom()
    shares = [draw.randrange(1, params.q) for _ in range(args.peers)]
    while sum(shares) % params.q == 0:
        shares[-1] = draw.randrange(1, params.q)
    state = kgd.kgd_setup(params, args.peers, rng, ms_contributions=shares)
    threshold = args.threshold or ledger.default_threshold(args.peers)
    if not 1 <= threshold <= args.peers:
        raise UsageError("threshold must lie in [1, peers]")
    public = {
        "params": params.to_dict(),
        "Y": format(state.Y, "x"),
        "peers": [{"id": f"peer-{i}", "y": format(p.y, "x")} for i, p in enumerate(state.peers)],
        "threshold": threshold,
        "batch": {"max_count": args.batch_size, "max_wait": args.batch_wait},
    }
    (home / "consortium.json").write_text(json.dumps(public, indent=2, sort_keys=True) + "\n")
    _write_private(home / "keystore.json", {"peers": [
        {"x": format(p.x, "x"), "ms_share": format(s, "x")}
        for p, s in zip(state.peers, shares)]})
    for name in ("registry.json", "device-keys.json", "ledger.jsonl"):
        if (home / name).exists():
            (home / name).unlink()
    print(json.dumps(public, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_register(args) -> int:
    home = Home(Path(args.home))
    net = home.load_network()
    ids = [i.encode() for i in args.ids]
    registry = _read_json(home / "registry.json") if (home / "registry.json").exists() else {}
    secrets_ = (_read_json(home / "device-keys.json")
                if (home / "device-keys.json").exists() else {})
    t = args.time if args.time is not None else int(time.time())
    idents = kgd.identities_for_batch(ids, t)
    device_secrets = [kgd.new_device_secret(net.params) for _ in idents]
    out = kgd.issue(net.state, [kgd.RegistrationRequest(i, b)
                                for i, (_, b) in zip(idents, device_secrets)])
    transcripts = []
    for ident, (x, _) in zip(idents, device_secrets):
        keys = kgd.device_register(net.params, net.state.Y, ident, x, out, net.state.hash_fn)
        if keys is None:
            raise RuntimeError(f"device {ident.id!r} rejected its registration")
        registry[ident.id.hex()] = {"edge_id": ident.edge_id, "issued_at": ident.registered_at,
                                    "pk": format(keys.pk, "x"),
                                    "binding": format(keys.binding, "x")}
        secrets_[ident.id.hex()] = {"x": format(keys.x, "x"), "sk": format(keys.sk, "x")}
        transcripts.append(kgd.registration_transcript(ident, out, keys))
    (home / "registry.json").write_text(json.dumps(registry, indent=2, sort_keys=True) + "\n")
    _write_private(home / "device-keys.json", secrets_)
    print(json.dumps(transcripts, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_submit(args) -> int:
    home = Home(Path(args.home))
    net = home.load_network()
    dev = home.device(net, args.device.encode())
    payload = None
    if args.payload_file:
        payload = Path(args.payload_file).read_bytes()
    elif args.payload is not None:
        payload = args.payload.encode()
    action = Action(args.action)
    read_version = args.read_version
    owner = (args.owner or args.device).encode()
    if read_version is None and action in (Action.UPDATE, Action.ACCESS):
        _, read_version = net.query(dev.id, owner, args.key)
    tx = dev.propose(action, args.key, timestamp=args.timestamp or int(time.time()),
                     payload=payload, acl=[a.encode() for a in args.acl],
                     read_version=read_version, owner=owner)
    start = net.ledger.height
    reports = net.submit(tx, payload) + net.flush()
    net.ledger.append_jsonl(home / "ledger.jsonl", net.ledger.blocks[start:])
    mine = [r for r in reports if r.tx_digest == tx.digest.hex()]
    result = mine[0].to_dict() if mine else {"tx_digest": tx.digest.hex(), "valid": None}
    if mine and mine[0].valid and action is Action.ACCESS:
        result["payload_hex"] = net.read(dev.id, owner, args.key).hex()
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK if mine and mine[0].valid else EXIT_RUNTIME


def cmd_ledger_audit(args) -> int:
    path = Path(args.file) if args.file else Path(args.home) / "ledger.jsonl"
    if not path.exists():
        raise RuntimeError(f"{path} not found")
    blocks, audit = ledger.load_jsonl(path)
    if audit.ok:
        print(f"OK {audit.n_blocks} blocks")
        return EXIT_OK
    print(f"FAIL at height {audit.bad_height}: {audit.reason}")
    return EXIT_RUNTIME


def _detector_extra(dataset) -> dict:
    return {"normalizer": dataset.normalizer.to_dict(), "feature_names": dataset.feature_names}


def cmd_detector_train(args) -> int:
    from .detector import DTLResNetClassifier, DESK_FILTERS, FULL_FILTERS, preprocess

    ds = preprocess(args.data, args.label)
    clf = DTLResNetClassifier(filters=FULL_FILTERS if args.scale == "full" else DESK_FILTERS,
                              residual=not args.plain, window=args.window,
                              window_mode=args.window_mode, epochs=args.epochs,
                              batch_size=args.batch_size, patience=args.patience,
                              random_state=args.seed)
    clf.fit(ds.features, ds.labels)
    clf.save(args.model, _detector_extra(ds))
    if args.history:
        clf.write_history(args.history)
    best = clf.best_val_accuracy_
    print(f"epochs={len(clf.history_)} best_val_accuracy="
          f"{'n/a' if best is None else format(best, '.4f')} model={args.model}")
    return EXIT_OK


def _load_with_data(model_path, data_path, label):
    from .detector import DTLResNetClassifier, MinMaxNormalizer, preprocess

    clf, extra = DTLResNetClassifier.load(model_path)
    if "normalizer" not in extra:
        raise RuntimeError("model file lacks the training normalizer")
    ds = preprocess(data_path, label, normalizer=MinMaxNormalizer.from_dict(extra["normalizer"]))
    if ds.feature_names != extra["feature_names"]:
        raise RuntimeError(f"feature columns {ds.feature_names} differ from the model's "
                           f"{extra['feature_names']}")
    return clf, ds


def cmd_detector_eval(args) -> int:
    from .detector import evaluate

    clf, ds = _load_with_data(args.model, args.data, args.label)
    m = evaluate(clf, ds.features, ds.labels)
    print(json.dumps(m.to_dict(), sort_keys=True) if args.json else m.format())
    return EXIT_OK


def cmd_detector_transfer(args) -> int:
    from .detector import DTLResNetClassifier, preprocess, transfer

    source, extra = DTLResNetClassifier.load(args.model)
    # each domain is scaled with its own ranges, as in training
    ds = preprocess(args.data, args.label, domain_tag="target")
    if ds.feature_names != extra.get("feature_names", ds.feature_names):
        raise RuntimeError("target feature columns differ from the source model's")
    ft = transfer(source, ds.features, ds.labels, trainable_blocks=args.trainable_blocks,
                  epochs=args.epochs, patience=args.patience, random_state=args.seed)
    ft.save(args.out, _detector_extra(ds))
    if args.history:
        ft.write_history(args.history)
    best = ft.best_val_accuracy_
    print(f"epochs={len(ft.history_)} best_val_accuracy="
          f"{'n/a' if best is None else format(best, '.4f')} frozen={ft.model_.frozen_mask} "
          f"model={args.out}")
    return EXIT_OK


def cmd_bench_run(args) -> int:
    from .bench import ScenarioConfig, emit_report, run_bench

    cfg = ScenarioConfig.load(args.scenario)
    report = run_bench(cfg, registration_samples=args.registration,
                       ca_delay_ms=args.ca_delay_ms)
    print(report.summary())
    if args.json:
        emit_report(report, args.json, "json")
    if args.csv:
        emit_report(report, args.csv, "csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="apt-shield", description="Certificateless consortium ledger with an "
                                                "APT detector and benchmark harness.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def with_home(sp):
        sp.add_argument("--home", default="apt-shield-home", help="state directory")
        return sp

    k = with_home(sub.add_parser("keygen", help="set up the key-generating consortium"))
    k.add_argument("--peers", type=int, default=4)
    k.add_argument("--lambda", dest="security", type=int, default=160,
                   choices=sorted(crypto.SECURITY_LEVELS))
    k.add_argument("--pbits", type=int, default=None, help="override modulus size")
    k.add_argument("--threshold", type=int, default=None)
    k.add_argument("--batch-size", type=int, default=10)
    k.add_argument("--batch-wait", type=float, default=1.0)
    k.add_argument("--seed", type=int, default=None, help="deterministic keys (testing only)")
    k.add_argument("--force", action="store_true")
    k.set_defaults(func=cmd_keygen)

    r = with_home(sub.add_parser("register", help="onboard devices, print transcripts"))
    r.add_argument("ids", nargs="+", metavar="DEVICE_ID")
    r.add_argument("--time", type=int, default=None, help="issue timestamp")
    r.set_defaults(func=cmd_register)

    s = with_home(sub.add_parser("submit", help="run one transaction end to end"))
    s.add_argument("--device", required=True)
    s.add_argument("--action", choices=[a.value for a in Action], default="store")
    s.add_argument("--key", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--payload")
    g.add_argument("--payload-file")
    s.add_argument("--acl", action="append", default=[], metavar="DEVICE_ID")
    s.add_argument("--read-version", type=int, default=None)
    s.add_argument("--owner", default=None)
    s.add_argument("--timestamp", type=int, default=None)
    s.set_defaults(func=cmd_submit)

    d = sub.add_parser("detector", help="train, evaluate or transfer the detector")
    dsub = d.add_subparsers(dest="detector_command", metavar="ACTION", parser_class=_Parser)
    dsub.required = True
    t = dsub.add_parser("train", help="train on a CSV")
    t.add_argument("data")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--history", help="per-epoch CSV")
    t.add_argument("--label", default="label")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--window", type=int, default=16)
    t.add_argument("--window-mode", choices=["pad", "sliding"], default="pad")
    t.add_argument("--scale", choices=["desk", "full"], default="desk")
    t.add_argument("--plain", action="store_true", help="no residual shortcuts")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_detector_train)
    e = dsub.add_parser("eval", help="print metrics of a model on a CSV")
    e.add_argument("data")
    e.add_argument("--model", required=True)
    e.add_argument("--label", default="label")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_detector_eval)
    x = dsub.add_parser("transfer", help="fine-tune a source model on target data")
    x.add_argument("data")
    x.add_argument("--model", required=True, help="source model file")
    x.add_argument("--out", required=True)
    x.add_argument("--history")
    x.add_argument("--label", default="label")
    x.add_argument("--trainable-blocks", type=int, default=0)
    x.add_argument("--epochs", type=int, default=200)
    x.add_argument("--patience", type=int, default=20)
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_detector_transfer)

    b = sub.add_parser("bench", help="benchmark harness")
    bsub = b.add_subparsers(dest="bench_command", metavar="ACTION", parser_class=_Parser)
    bsub.required = True
    br = bsub.add_parser("run", help="run a scenario file")
    br.add_argument("scenario")
    br.add_argument("--json", help="write the full report here")
    br.add_argument("--csv", help="write per-window rows here")
    br.add_argument("--registration", type=int, default=0, metavar="N",
                    help="also time N certificateless vs simulated-CA registrations")
    br.add_argument("--ca-delay-ms", type=float, default=40.0)
    br.set_defaults(func=cmd_bench_run)

    lg = sub.add_parser("ledger", help="ledger maintenance")
    lsub = lg.add_subparsers(dest="ledger_command", metavar="ACTION", parser_class=_Parser)
    lsub.required = True
    la = with_home(lsub.add_parser("audit", help="verify the full hash chain"))
    la.add_argument("--file", help="ledger JSONL (default: HOME/ledger.jsonl)")
    la.set_defaults(func=cmd_ledger_audit)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"apt-shield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"apt-shield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
