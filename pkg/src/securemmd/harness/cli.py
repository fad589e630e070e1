"""Command line entry point: ``smmd {keygen,split,train,eval,table,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from pathlib import Path

from .. import he
from ..data import write_split
from ..model import load_checkpoint, save_checkpoint
from ..protocol import ProtocolAbort
from .config import ConfigError, add_run_flags, config_from_namespace
from .experiments import parse_grid, run_table_experiment
from .train import evaluate, prepare, train, train_remote


def _out_dir(cfg) -> Path | None:
    if cfg.out is None:
        return None
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_keygen(args) -> int:
    kp = he.keygen(args.key_bits, args.seed_crypto)
    doc = {"public": kp.public.to_dict(), "secret": {"lam": format(kp.secret.lam, "x"), "mu": format(kp.secret.mu, "x")},
           "key_id": kp.key_id, "bits": kp.public.bits}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
        print(f"wrote {args.out} (key_id {kp.key_id})")
    else:
        print(json.dumps({"public": doc["public"], "key_id": kp.key_id}, indent=2))
    return 0


def cmd_split(args) -> int:
    cfg = config_from_namespace(args)
    print(cfg.header())
    prep = prepare(cfg)
    out = cfg.out or "split"
    write_split(prep.split, prep.test, out)
    print(json.dumps(prep.split.manifest(), indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = config_from_namespace(args)
    print(cfg.header())
    for note in cfg.notes:
        print(f"# note: {note}")
    try:
        if cfg.listen or cfg.connect:
            party, metrics = train_remote(cfg)
            print(f"{party.role}: {metrics.epochs_run} epochs, final loss {metrics.loss_curve[-1]:.6f}")
            out = _out_dir(cfg)
            if out:
                save_checkpoint(out / f"{party.role}.npz", {party.role: party.params}, {"config": cfg.to_dict()})
            return 0
        (ps, pt), metrics = train(cfg)
    except ProtocolAbort as exc:
        print(f"aborted: {exc.reason} (partial: {exc.partial})", file=sys.stderr)
        return 3
    print(f"epochs={metrics.epochs_run} final_loss={metrics.loss_curve[-1]:.6f}")
    print(f"fscore={metrics.fscore:.4f} auc={metrics.auc:.4f} precision={metrics.precision:.4f}")
    out = _out_dir(cfg)
    if out:
        save_checkpoint(out / "model.npz", {"source": ps, "target": pt}, {"config": cfg.to_dict()})
        (out / "metrics.json").write_text(json.dumps({"config": cfg.to_dict(), "metrics": metrics.to_dict()},
                                                     indent=2, default=str))
    return 0


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    saved = meta.get("config", {})
    ns = argparse.Namespace(**{k: None for k in vars(args)})
    for k, v in saved.items():
        if hasattr(ns, k) and k not in ("notes", "resolved_kernel"):
            setattr(ns, k, v)
    for k, v in vars(args).items():
        if v is not None and k not in ("checkpoint", "func", "command"):
            setattr(ns, k, v)
    ns.config = None
    cfg = config_from_namespace(ns)
    print(cfg.header())
    m = evaluate(params["source"], params["target"], prepare(cfg), args.threshold)
    print(f"fscore={m.fscore:.4f} auc={m.auc:.4f} precision={m.precision:.4f} n_test={m.n_test}")
    return 0


def cmd_table(args) -> int:
    cfg = config_from_namespace(args)
    print(cfg.header())
    report = run_table_experiment(cfg, parse_grid(args.grid), tuple(args.modes.split(",")), args.seeds)
    print(report.to_text())
    if cfg.out:
        report.write(cfg.out)
        print(f"wrote {cfg.out}/table.csv, manifest.json")
    return 0


def cmd_bench(args) -> int:
    kp = he.keygen(args.key_bits, args.seed_crypto)
    pk, sk = kp.public, kp.secret
    rng = random.Random(0)
    p = he.FixedPointParams(args.frac_bits or 40).with_modulus(pk.n)
    xs = [rng.uniform(-1, 1) for _ in range(args.reps)]
    ms = [he.encode_fixed(x, p) for x in xs]
    t = time.perf_counter()
    cts = [he.encrypt(pk, m, rng) for m in ms]
    t_enc = (time.perf_counter() - t) / args.reps
    t = time.perf_counter()
    for c in cts:
        he.decrypt(sk, c)
    t_dec = (time.perf_counter() - t) / args.reps
    t = time.perf_counter()
    for c, m in zip(cts, ms):
        he.mul_plain(pk, c, m)
    t_mul = (time.perf_counter() - t) / args.reps
    t = time.perf_counter()
    he.sum_ciphers(pk, cts)
    t_add = (time.perf_counter() - t) / args.reps
    print(f"key_bits={args.key_bits} reps={args.reps}")
    for name, v in (("encrypt", t_enc), ("decrypt", t_dec), ("mul_plain", t_mul), ("add", t_add)):
        print(f"{name:10s} {1000 * v:8.3f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smmd", description="two-party MMD transfer learning under additive HE")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a keypair")
    p.add_argument("--key-bits", type=int, default=2048)
    p.add_argument("--seed-crypto", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("split", help="write the vertical split as CSV plus manifest")
    add_run_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one configuration")
    add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its held-out target test view")
    p.add_argument("checkpoint")
    p.add_argument("--threshold", type=float, default=0.0)
    add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table", help="kernel grid x modes over several seeds")
    add_run_flags(p)
    p.add_argument("--grid", default="linear;polynomial:2;gaussian:1")
    p.add_argument("--modes", default="encrypted,plaintext,source_only")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("bench", help="time HE primitives")
    p.add_argument("--key-bits", type=int, default=2048)
    p.add_argument("--frac-bits", type=int)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed-crypto", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        ap.error(str(exc))
    return 2


if __name__ == "__main__":
    sys.exit(main())
