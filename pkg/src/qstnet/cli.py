"""``qstnet`` command line.

Exit codes: 0 success, 2 usage error, 3 data or generation failure,
4 numerical divergence, 5 checkpoint mismatch.  Every subcommand prints its
resolved configuration as one JSON line before doing any work.  The default
dataset directory comes from ``$QSTNET_DATA_DIR`` (falling back to ``./data``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, dataset, noise
from .exceptions import (
    CheckpointError,
    DatasetConsistencyError,
    DatasetCorruptionError,
    DivergenceError,
    InvalidParameterError,
    QSTError,
    SamplingError,
    StratificationError,
    UnsupportedFormatError,
)
from .measurement import husimi_values
from .nn import checkpoint
from .nn import train as nn_train
from .nn.optim import SCHEDULES, OptimConfig
from .states import CLASS_NAMES, CoefficientTable, Family

log = logging.getLogger("qstnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE, EXIT_CHECKPOINT = 0, 2, 3, 4, 5
DATA_ENV = "QSTNET_DATA_DIR"
DEFAULT_BATCH = {"rfb": 32, "msnn": 16}


class UsageError(Exception):
    pass


def default_data_dir():
    return Path(os.environ.get(DATA_ENV, "data"))


def _emit_config(name, args):
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    print(json.dumps({"command": name, "config": cfg}, sort_keys=True), flush=True)


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_record_ref(ref):
    """``DIR[@INDEX]`` -> ``(Path, index)``; the index defaults to 0."""
    path, sep, idx = str(ref).rpartition("@")
    if not sep:
        return Path(ref), 0
    try:
        return Path(path), int(idx)
    except ValueError:
        raise UsageError(f"bad record reference {ref!r}; expected DIR@INDEX") from None


def load_record(ref):
    path, index = parse_record_ref(ref)
    records, manifest = dataset.load(path)
    if not 0 <= index < len(records):
        raise IndexError(f"record {index} outside dataset of {len(records)}")
    return records, manifest, index


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    classes = _split_list(args.classes) if args.classes else None
    try:
        classes = dataset.canonical_classes(classes)
        spec = noise.NoiseSpec.parse(args.noise, seed=args.seed) if args.noise else None
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc
    if args.count < len(classes):
        raise UsageError(f"--count {args.count} is smaller than the number of classes ({len(classes)})")
    table = CoefficientTable.load(args.num_table) if args.num_table else None
    _, manifest = dataset.generate(args.count, args.seed, classes, spec, args.out, table=table,
                                   table_path=args.num_table, shard_size=args.shard_size)
    summary = {
        "out": str(args.out),
        "count": manifest.count,
        "per_class_counts": manifest.per_class_counts,
        "shards": [{"file": s["file"], "sha256": s["sha256"]} for s in manifest.shards],
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def pgm_bytes(values, side):
    """8-bit binary graymap; ``[0, max]`` maps linearly onto ``[0, 255]``."""
    img = np.asarray(values, dtype=float).reshape(side, side)
    peak = img.max()
    scaled = np.zeros_like(img) if peak <= 0 else np.clip(img, 0, None) / peak * 255.0
    pixels = np.floor(scaled + 0.5).astype(np.uint8)
    # row 0 of the image is the largest imaginary part
    return f"P5\n{side} {side}\n255\n".encode() + pixels[::-1].tobytes()


def cmd_show(args):
    records, manifest, index = load_record(args.input)
    data = pgm_bytes(records.husimi[index], manifest.side)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(data)
    print(json.dumps({"record": index, "class": Family(int(records.labels[index])).pretty, "out": str(args.out)}))
    return EXIT_OK


def _load_models(methods, args):
    models = {}
    for m in methods:
        if m not in bench.NEURAL:
            continue
        path = getattr(args, f"checkpoint_{m}", None) or getattr(args, "checkpoint", None)
        if not path:
            raise UsageError(f"--method {m} needs a checkpoint")
        models[m], _ = checkpoint.load(path, expect_mode=m)
    return models


def cmd_reconstruct(args):
    records, manifest, index = load_record(args.input)
    models = _load_models([args.method], args)
    settings = bench.MethodSettings(iters=args.iters, lr=args.lr, seed=args.seed, models=models)
    t0 = time.perf_counter()
    rho, info = bench.run_method(args.method, records.husimi[index], manifest.geometry,
                                 int(records.labels[index]), settings, manifest.dim, records.rhos[index])
    report = {
        "method": args.method,
        "record": index,
        "class": Family(int(records.labels[index])).pretty,
        "wall_time": time.perf_counter() - t0,
        "trace": float(np.trace(rho).real),
        "purity": float(np.real(np.trace(rho @ rho))),
        # MAE between the data and the estimate's own Husimi grid, comparable across methods
        "loss": float(np.mean(np.abs(husimi_values(rho, manifest.geometry) - records.husimi[index]))),
        **info,
    }
    _write_json(report, args.report)
    return EXIT_OK


def cmd_train(args):
    records, manifest = dataset.load(args.data)
    if not 0 < args.val_fraction < 1:
        raise UsageError("--val-fraction must lie strictly between 0 and 1")
    if args.classes:
        try:
            keep = [int(Family.parse(c)) for c in _split_list(args.classes)]
        except InvalidParameterError as exc:
            raise UsageError(str(exc)) from exc
        records = records.subset(np.flatnonzero(np.isin(records.labels, keep)))
    train_idx, val_idx = dataset.split(records.labels, (1 - args.val_fraction, args.val_fraction), args.seed)
    data = dataset.to_train_data(records, manifest.geometry)
    model = nn_train.make_model(args.mode, seed=args.seed)
    config = OptimConfig(learning_rate=args.lr, iterations=args.epochs, seed=args.seed, batch_size=args.batch_size)
    out = Path(args.checkpoint_out)
    history_path = Path(args.history) if args.history else out.with_suffix(".history.json")

    def on_epoch(entry, m):
        print(json.dumps(entry, sort_keys=True), flush=True)
        if args.checkpoint_every and entry["epoch"] % args.checkpoint_every == 0:
            checkpoint.save(m, out, meta={"epoch": entry["epoch"]})

    history = nn_train.train(model, data.subset(train_idx), config, args.mode, data.subset(val_idx),
                             args.eval_every, on_epoch, schedule=args.schedule)
    checkpoint.save(model, out, meta={"epoch": args.epochs, "data": str(args.data)})
    _write_json({"mode": args.mode, "history": history}, history_path)
    return EXIT_OK


def _bench_setup(args):
    records, manifest = dataset.load(args.data)
    methods = _split_list(args.methods)
    for m in methods:
        if m not in bench.METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(bench.METHODS)}")
    settings = bench.MethodSettings(iters=args.iters, lr=args.lr, seed=args.seed,
                                    models=_load_models(methods, args))
    indices = np.arange(len(records) if args.limit is None else min(args.limit, len(records)))
    return records, manifest, methods, settings, indices


def cmd_bench_noise(args):
    records, manifest, methods, settings, indices = _bench_setup(args)
    try:
        levels = [float(v) for v in _split_list(args.levels)]
        for v in levels:
            noise.NoiseSpec(args.noise_kind, v)
    except (ValueError, InvalidParameterError) as exc:
        raise UsageError(f"bad --levels: {exc}") from exc
    table = bench.bench_noise(records, manifest.geometry, methods, args.noise_kind, levels, settings, indices)
    _write_json(table, args.out)
    return EXIT_OK


def cmd_bench_compare(args):
    records, manifest, methods, settings, indices = _bench_setup(args)
    table = bench.bench_compare(records, manifest.geometry, methods, settings, indices)
    _write_json(table, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_bench_args(p):
    p.add_argument("--data", type=Path, default=default_data_dir())
    p.add_argument("--methods", default="gd-cholesky")
    p.add_argument("--checkpoint-rfb", type=Path)
    p.add_argument("--checkpoint-msnn", type=Path)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, help="evaluate only the first N records")
    p.add_argument("--out", default="-", help="report path, '-' for stdout")


def build_parser():
    parser = _Parser(prog="qstnet", description="Quantum state tomography toolkit")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a labelled Husimi dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", help=f"comma list from {', '.join(CLASS_NAMES)}")
    p.add_argument("--noise", help="kind:level, kind in mixed, loss, pepper")
    p.add_argument("--out", type=Path, default=default_data_dir())
    p.add_argument("--num-table", help="JSON coefficient table for Num states")
    p.add_argument("--shard-size", type=int, default=dataset.SHARD_SIZE)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("show", help="write a record's Husimi grid as a PGM image")
    p.add_argument("--input", required=True, help="DIR[@INDEX]")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("reconstruct", help="reconstruct one record")
    p.add_argument("--input", required=True, help="DIR[@INDEX]")
    p.add_argument("--method", choices=bench.METHODS, default="gd-cholesky")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default="-", help="report path, '-' for stdout")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train RFB-Net or MS-NN")
    p.add_argument("--mode", choices=("rfb", "msnn"), required=True)
    p.add_argument("--data", type=Path, default=default_data_dir())
    p.add_argument("--classes", help="train on a subset of classes")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, help="default 32 for rfb, 16 for msnn")
    p.add_argument("--schedule", choices=sorted(SCHEDULES), default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--checkpoint-out", type=Path, required=True)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench-noise", help="fidelity table across noise levels")
    _add_bench_args(p)
    p.add_argument("--noise-kind", choices=noise.KINDS, required=True)
    p.add_argument("--levels", required=True, help="comma list of levels")
    p.set_defaults(func=cmd_bench_noise)

    p = sub.add_parser("bench-compare", help="fidelity table across methods")
    _add_bench_args(p)
    p.set_defaults(func=cmd_bench_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"qstnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "batch_size", 0) is None:
        args.batch_size = DEFAULT_BATCH[args.mode]
    _emit_config(args.command, args)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qstnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"qstnet: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as exc:
        print(f"qstnet: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, IndexError, DatasetCorruptionError, DatasetConsistencyError,
            UnsupportedFormatError, SamplingError, StratificationError, bench.BenchmarkFailure) as exc:
        print(f"qstnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QSTError, OSError) as exc:
        print(f"qstnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
