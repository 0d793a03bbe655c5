"""Command-line client: train, infer, eval, export-header, inspect, bench,
gradcheck, and serve.

Configuration resolution order is defaults, then the ``--config`` KEY=VALUE
file, then individual flags.  Exit codes are categorized: 0 success,
2 configuration, 3 dataset, 4 numeric fault, 5 I/O or weight-store.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import EngineConfig, NumericPolicy, apply_settings, load_config_file
from .dataset import WEIGHTS_SUBDIR, center_crop_square, read_ppm, scan
from .backward import GradientSet
from .errors import ConfigError, DatasetError, NumericFault, StoreError
from .forward import ActivationSet, build_resize_plan, forward_pass, resize_normalize
from .optimizer import AdamState
from .oracle import gradient_check
from .trainer import TrainReport, evaluate, train
from .weightstore import (BINARY_FILENAME, HEADER_FILENAME, WeightOrigin,
                          WeightSet, export_header, load_binary, load_header,
                          resolve_weights, save_binary)
from .config import derive_dims

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

ORIGIN_PRETRAINED_LINE = "Continuing from saved weights"
ORIGIN_FRESH_LINE = "Starting fresh training"


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="KEY=VALUE settings file")
    parser.add_argument("--data", metavar="DIR", help="dataset root directory")
    parser.add_argument("--weights", metavar="FILE",
                        help=f"weight blob path (default <data>/{WEIGHTS_SUBDIR}/{BINARY_FILENAME})")
    parser.add_argument("--input-size", type=int, metavar="N")
    parser.add_argument("--epochs", type=int, metavar="N")
    parser.add_argument("--batch", type=int, metavar="N", help="batch size")
    parser.add_argument("--lr", type=float, metavar="RATE", help="learning rate")
    parser.add_argument("--val", type=int, metavar="N",
                        help="validation images held out per class (0 disables)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="seed for shuffling and fresh initialization")
    parser.add_argument("--no-shuffle", action="store_true",
                        help="keep strict index order instead of seeded shuffling")
    parser.add_argument("--baked-header", metavar="FILE",
                        help="exported C header to use as the baked-in weight tier")
    parser.add_argument("--no-baked", action="store_true",
                        help="disable the baked-in weight tier")
    parser.add_argument("--image", metavar="FILE", help="input image (binary PPM)")
    parser.add_argument("--out", metavar="FILE", help="output path")
    parser.add_argument("--frames", type=int, default=30, metavar="N",
                        help="frames to time (bench)")


def _build_config(args) -> EngineConfig:
    cfg = EngineConfig.defaults()
    if args.config:
        cfg = load_config_file(args.config, cfg)
    overrides: dict[str, str] = {}
    if args.input_size is not None:
        overrides["input_size"] = str(args.input_size)
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)
    if args.batch is not None:
        overrides["batch_size"] = str(args.batch)
    if args.lr is not None:
        overrides["learning_rate"] = repr(args.lr)
    if args.val is not None:
        overrides["validation_images"] = str(args.val)
    if args.seed is not None:
        overrides["shuffle_seed"] = str(args.seed)
    if args.no_shuffle:
        overrides["shuffle_enabled"] = "false"
    return apply_settings(cfg, overrides) if overrides else cfg


def _weights_path(args) -> Path | None:
    if args.weights:
        return Path(args.weights)
    if args.data:
        return Path(args.data) / WEIGHTS_SUBDIR / BINARY_FILENAME
    return None


def _baked_weights(args, cfg: EngineConfig) -> WeightSet | None:
    if args.no_baked or not args.baked_header:
        return None
    return load_header(args.baked_header, cfg.net)


def _resolve(args, cfg: EngineConfig) -> tuple[WeightSet, WeightOrigin]:
    weights, origin = resolve_weights(_weights_path(args), _baked_weights(args, cfg),
                                      cfg.net, cfg.train.shuffle_seed, cfg.policy)
    return weights, origin


def _load_image_tensor(path: str | Path, input_size: int, policy: NumericPolicy):
    square = center_crop_square(read_ppm(path))
    plan = build_resize_plan(input_size, square.shape[0])
    return resize_normalize(square, plan, policy), square


def _write_report(report: TrainReport, path: Path) -> None:
    lines = []
    for record in report.records:
        lines.append(json.dumps({
            "epoch": record.epoch, "batch": record.batch,
            "batches": record.batches, "loss": record.loss,
            "accuracy_pct": record.accuracy_pct,
        }, sort_keys=True))
    lines.append(json.dumps({
        "summary": True,
        "final_train_accuracy": report.final_train_accuracy,
        "validation_accuracy": report.validation_accuracy,
        "images_processed": report.images_processed,
        "epochs_completed": report.epochs_completed,
        "interrupted": report.interrupted,
        "origin": report.origin.kind.value if report.origin else None,
    }, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    if not args.data:
        raise ConfigError("train requires --data")
    cfg = _build_config(args)
    index = scan(args.data, cfg.classes, cfg.train.validation_images)
    weights, origin = _resolve(args, cfg)
    print(ORIGIN_PRETRAINED_LINE if origin.is_pretrained else ORIGIN_FRESH_LINE)

    dims = derive_dims(cfg.net)
    grads = GradientSet.allocate(cfg.net, dims)
    adam = AdamState.allocate(dims)

    interrupted = {"flag": False}

    def on_sigint(signum, frame):
        interrupted["flag"] = True

    previous = signal.signal(signal.SIGINT, on_sigint)
    try:
        report = train(index, weights, grads, adam, cfg.net, cfg.train, cfg.policy,
                       interrupt=lambda: interrupted["flag"], log=print,
                       origin=origin)
    finally:
        signal.signal(signal.SIGINT, previous)

    out_dir = Path(args.data) / WEIGHTS_SUBDIR
    out_dir.mkdir(parents=True, exist_ok=True)
    save_binary(weights, out_dir / BINARY_FILENAME)
    export_header(weights, cfg.net, cfg.classes, out_dir / HEADER_FILENAME)
    report_path = Path(args.out) if args.out else out_dir / "train_report.jsonl"
    _write_report(report, report_path)
    if report.interrupted:
        print("Training interrupted - weights saved")
    print(f"Saved weights to {out_dir / BINARY_FILENAME}")
    return EXIT_OK


def cmd_infer(args) -> int:
    if not args.image:
        raise ConfigError("infer requires --image")
    cfg = _build_config(args)
    weights, origin = _resolve(args, cfg)
    if not origin.is_pretrained:
        print(f"Warning: no saved weights found; using fresh He initialization "
              f"({origin.source})", file=sys.stderr)
    tensor, _ = _load_image_tensor(args.image, cfg.net.input_size, cfg.policy)
    acts = ActivationSet.allocate(cfg.net, derive_dims(cfg.net))
    probs = forward_pass(tensor, weights, acts, cfg.net, cfg.policy)
    winner = int(np.argmax(probs))
    print(f"Pred: {cfg.classes.labels[winner]} ({100.0 * float(probs[winner]):.1f}%)")
    for label, p in zip(cfg.classes.labels, probs):
        print(f"  {label}: {100.0 * float(p):.1f}%")
    return EXIT_OK


def _print_confusion(confusion: np.ndarray, labels) -> None:
    width = max(len(label) for label in labels) + 2
    header = " " * (width + 6) + "".join(f"{label:>{width}}" for label in labels)
    print(header)
    for i, label in enumerate(labels):
        cells = "".join(f"{int(n):>{width}}" for n in confusion[i])
        print(f"true {label:>{width}}{cells}")


def cmd_eval(args) -> int:
    if not args.data:
        raise ConfigError("eval requires --data")
    cfg = _build_config(args)
    index = scan(args.data, cfg.classes, cfg.train.validation_images)
    weights, origin = _resolve(args, cfg)
    if args.split == "validation":
        if cfg.train.validation_images == 0:
            print("Validation disabled (validation_images = 0)")
            return EXIT_OK
        pairs = index.validation_pairs()
        title = "Validation Accuracy"
    elif args.split == "train":
        pairs = index.train_pairs()
        title = "Training Accuracy"
    else:
        pairs = index.all_pairs()
        title = "Overall Accuracy"
    result = evaluate(pairs, weights, cfg.net, cfg.policy)
    if result.accuracy_pct is None:
        print(f"No images in split '{args.split}'")
        return EXIT_OK
    print(f"{title}: {result.accuracy_pct:.1f}")
    print(f"Images: {result.images}")
    _print_confusion(result.confusion, cfg.classes.labels)
    return EXIT_OK


def cmd_export_header(args) -> int:
    if not args.weights:
        raise ConfigError("export-header requires --weights")
    cfg = _build_config(args)
    weights = load_binary(args.weights, cfg.net)
    out = Path(args.out) if args.out else Path(args.weights).parent / HEADER_FILENAME
    export_header(weights, cfg.net, cfg.classes, out)
    print(f"Wrote {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _build_config(args)
    weights, origin = _resolve(args, cfg)
    print(f"Origin: {origin.kind.value} ({origin.source})")
    print(f"Total parameters: {weights.total_params()}")
    print(f"{'layer':>10s} {'count':>8s} {'min':>12s} {'max':>12s} "
          f"{'mean':>12s} {'std':>12s}")
    for name, arr in weights.arrays():
        print(f"{name:>10s} {arr.size:>8d} {arr.min():>12.6f} {arr.max():>12.6f} "
              f"{arr.mean():>12.6f} {arr.std():>12.6f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if not args.image:
        raise ConfigError("bench requires --image")
    if args.frames < 1:
        raise ConfigError("--frames must be >= 1")
    cfg = _build_config(args)
    weights, _ = _resolve(args, cfg)
    square = center_crop_square(read_ppm(args.image))
    plan = build_resize_plan(cfg.net.input_size, square.shape[0])
    acts = ActivationSet.allocate(cfg.net, derive_dims(cfg.net))
    timings = []
    for frame in range(1, args.frames + 1):
        start = time.perf_counter()
        tensor = resize_normalize(square, plan, cfg.policy)
        forward_pass(tensor, weights, acts, cfg.net, cfg.policy)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        timings.append(elapsed_ms)
        fps = 1000.0 / elapsed_ms if elapsed_ms > 0 else float("inf")
        print(f"Frame {frame}: {int(round(elapsed_ms))} ms ({fps:.1f} FPS)")
    mean = sum(timings) / len(timings)
    print(f"Mean: {mean:.2f} ms  Min: {min(timings):.2f} ms  "
          f"Max: {max(timings):.2f} ms  ({1000.0 / mean:.1f} FPS mean)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _build_config(args)
    net = cfg.net if args.input_size else apply_settings(cfg, {"input_size": "8"}).net
    result = gradient_check(net, cfg.policy, draws=args.draws, seed=args.seed or 0)
    print(f"Gradient check: input_size={net.input_size}, draws={result.draws}, "
          f"h=1e-03")
    print(f"Max relative error (formula vs finite differences): "
          f"{result.max_rel_error:.3e}")
    print(f"Max relative error (float32 path vs float64 formulas): "
          f"{result.production_rel_error:.3e}")
    print(f"Parameters checked: {result.checked}  masked at kinks: {result.masked}")
    if result.passed:
        print(f"PASS (tolerance {result.tolerance:.0e})")
        return EXIT_OK
    print(f"FAIL (tolerance {result.tolerance:.0e})")
    return EXIT_NUMERIC


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinycnn",
        description="Train and run a small transparent CNN on folder-per-class "
                    "PPM datasets.")
    parser.add_argument("--version", action="version", version=f"tinycnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "train": (cmd_train, "train on a dataset and save weights"),
        "infer": (cmd_infer, "classify one image"),
        "eval": (cmd_eval, "report accuracy and a confusion matrix"),
        "export-header": (cmd_export_header, "convert a weight blob to a C header"),
        "inspect": (cmd_inspect, "per-layer weight statistics"),
        "bench": (cmd_bench, "time repeated forward passes"),
        "gradcheck": (cmd_gradcheck, "finite-difference gradient check"),
        "serve": (cmd_serve, "run the HTTP service"),
    }
    for name, (func, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        _add_common_flags(cmd)
        if name == "eval":
            cmd.add_argument("--split", choices=("train", "validation", "all"),
                             default="validation")
        if name == "gradcheck":
            cmd.add_argument("--draws", type=int, default=20)
        if name == "serve":
            cmd.add_argument("--host", default="127.0.0.1")
            cmd.add_argument("--port", type=int, default=8000)
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except NumericFault as exc:
        print(f"numeric fault: {exc} (weights not saved)", file=sys.stderr)
        return EXIT_NUMERIC
    except StoreError as exc:
        print(f"weight store error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
