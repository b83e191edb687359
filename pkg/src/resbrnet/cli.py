"""Batch command-line front end.

Exit codes: 0 success, 2 invalid arguments or config, 3 dataset error,
4 numeric divergence, 5 unreadable or corrupt checkpoint, 6 t-SNE perplexity
infeasible for the sample count.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_dataset_cache, save_checkpoint, save_dataset_cache, tree_hash
from .data import SplitSpec, ingest, load_image, split
from .embedding import TsneConfig, extract_features, tsne
from .errors import CheckpointError, ConfigError, DatasetError, NumericError, TsneConfigError
from .fixtures import write_fixture_tree
from .metrics import evaluate
from .model import build_res_brnet
from .training import LOG_COLUMNS, RunConfig, predict_proba, train_model

logger = logging.getLogger("resbrnet")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATASET = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5
EXIT_PERPLEXITY = 6

CACHE_NAME = "cache.rbrd"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def load_dataset(data_dir, target):
    """Dataset from ``<data_dir>/cache.rbrd`` when it is fresh, else decoded from images."""
    digest = tree_hash(data_dir, target)
    cached = load_dataset_cache(Path(data_dir) / CACHE_NAME, expected_hash=digest, target=target)
    if cached is not None:
        return cached
    return ingest(data_dir, target)


def _select(ds, side, which):
    if which == "all":
        return ds
    run = side.get("metadata", {}).get("run_config", {})
    spec = SplitSpec(
        run.get("train_fraction", 0.8), run.get("val_fraction", 0.1), run.get("seed", 0)
    )
    train, val, test = split(ds, spec)
    return {"train": train, "val": val, "test": test}[which]


def _load_for_eval(args):
    model, side = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data, tuple(model.cfg.input))
    names = side.get("class_names") or ds.class_names
    if list(names) != list(ds.class_names):
        raise DatasetError(f"dataset classes {ds.class_names} differ from checkpoint classes {names}")
    which = "all" if getattr(args, "all", False) else args.split
    return model, side, _select(ds, side, which)


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(
        seed=args.seed, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        input_size=args.input_size, arch=args.arch, augment=False if args.no_augment else None,
    )
    ds = load_dataset(args.data, cfg.input_shape)
    train_ds, val_ds, test_ds = split(ds, cfg.split_spec())
    model = build_res_brnet(cfg.model_config(len(ds.class_names)), seed=cfg.seed)

    out = Path(args.out)
    log_path = Path(str(out) + ".trainlog.csv")
    header = ",".join(LOG_COLUMNS)
    lines = [header]
    print(header, flush=True)

    def on_epoch(row):
        lines.append(row.csv())
        print(lines[-1], flush=True)

    result = train_model(model, train_ds, val_ds, cfg, on_epoch)
    log_path.write_text("\n".join(lines) + "\n")
    metadata = {
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "final_lr": result.final_lr,
        "seed": cfg.seed,
        "run_config": cfg.to_dict(),
        "split_sizes": {"train": len(train_ds), "val": len(val_ds), "test": len(test_ds)},
    }
    save_checkpoint(model, out, ds.class_names, metadata)
    return EXIT_OK


def _write_curve(path, header, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for (a, b), thr in zip(curve.points, curve.thresholds):
            w.writerow([repr(a), repr(b), "inf" if thr == float("inf") else repr(thr)])


def cmd_eval(args) -> int:
    model, side, ds = _load_for_eval(args)
    if len(ds) == 0:
        raise DatasetError(f"the {args.split} split is empty")
    probs = predict_proba(model, ds.images)
    report = evaluate(probs, ds.labels, ds.class_names)
    Path(args.report).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    if args.curves:
        for name, curve in report.curves["roc"].items():
            _write_curve(f"{args.curves}.roc.{name}.csv", ("fpr", "tpr", "threshold"), curve)
        for name, curve in report.curves["pr"].items():
            _write_curve(f"{args.curves}.pr.{name}.csv", ("recall", "precision", "threshold"), curve)
    print(f"accuracy_percent={report.accuracy_percent!r} n={report.n_samples}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, side = load_checkpoint(args.ckpt)
    try:
        img = load_image(args.image, tuple(model.cfg.input))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode {args.image}: {exc}") from exc
    probs = predict_proba(model, img[None])[0]
    names = side.get("class_names") or [str(k) for k in range(len(probs))]
    out = {"class": names[int(np.argmax(probs))], "probs": {n: float(p) for n, p in zip(names, probs)}}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_embed(args) -> int:
    model, side, ds = _load_for_eval(args)
    feats = extract_features(model, ds)
    cfg = TsneConfig(perplexity=args.perplexity, iterations=args.iterations, seed=args.seed)
    result = tsne(feats, cfg)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "class_name"])
        for (x, y), label in zip(result.embedding.tolist(), feats.labels.tolist()):
            w.writerow([repr(x), repr(y), label, ds.class_names[label]])
    return EXIT_OK


def cmd_ingest_cache(args) -> int:
    target = (args.channels, args.input_size, args.input_size)
    out = Path(args.out) if args.out else Path(args.data) / CACHE_NAME
    digest = tree_hash(args.data, target)
    if load_dataset_cache(out, expected_hash=digest, target=target) is not None:
        print(f"cache up to date: {out}")
        return EXIT_OK
    ds = ingest(args.data, target)
    save_dataset_cache(ds, out, digest, target)
    print(f"cached {len(ds)} images to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    write_fixture_tree(args.out, per_class=args.per_class, size=args.size, seed=args.seed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resbrnet", description="Res-BRNet training, evaluation and analysis")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train Res-BRNet on a directory-per-class image tree")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="flat JSON run config; flags override its values")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--input-size", type=int)
    t.add_argument("--arch", choices=["canonical", "desk"])
    t.add_argument("--no-augment", action="store_true")
    t.set_defaults(func=cmd_train)

    def add_selection(sp):
        sp.add_argument("--split", choices=["train", "val", "test"], default="test")
        sp.add_argument("--all", action="store_true", help="use every image in --data")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--curves", help="prefix for per-class ROC/PR CSV files")
    add_selection(e)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="classify one image")
    pr.add_argument("--image", required=True)
    pr.add_argument("--ckpt", required=True)
    pr.set_defaults(func=cmd_predict)

    em = sub.add_parser("embed", help="2-D t-SNE of penultimate features")
    em.add_argument("--data", required=True)
    em.add_argument("--ckpt", required=True)
    em.add_argument("--out", required=True)
    em.add_argument("--perplexity", type=float, default=30.0)
    em.add_argument("--iterations", type=int, default=1000)
    em.add_argument("--seed", type=int, default=0)
    add_selection(em)
    em.set_defaults(func=cmd_embed)

    c = sub.add_parser("ingest-cache", help="decode and cache a dataset tree")
    c.add_argument("--data", required=True)
    c.add_argument("--out")
    c.add_argument("--input-size", type=int, default=227)
    c.add_argument("--channels", type=int, choices=[1, 3], default=1)
    c.set_defaults(func=cmd_ingest_cache)

    s = sub.add_parser("synth", help="write a synthetic fixture dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def _thread_limit():
    n = os.environ.get("RBRNET_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"resbrnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with _thread_limit():
            return args.func(args)
    except TsneConfigError as exc:
        logger.error("%s", exc)
        return EXIT_PERPLEXITY
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except DatasetError as exc:
        logger.error("%s", exc)
        return EXIT_DATASET
    except NumericError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        logger.error("%s", exc)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
