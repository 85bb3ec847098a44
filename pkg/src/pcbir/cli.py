"""``pcbir`` command line: corpus, import, translator, mixing, detector, evaluation, sweep.

Exit codes: 0 success, 1 invalid input (nothing written), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import SEED_ENV, ConfigError, RunConfig, dump_config, load_config
from .datapipe.splits import PoolExhausted
from .evalkit import AP_MODES
from .gradsuite import run_suite
from .pipeline import (
    PreconditionError,
    evaluate_run,
    import_yolo,
    mix_dirs,
    sweep,
    synth_toy,
    train_detector_run,
    train_translator_run,
    translate_dir,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
log = logging.getLogger("pcbir")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _override(section, **changes):
    try:
        return replace(section, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


def cmd_synth_toy(args) -> int:
    manifest = synth_toy(args.out, args.n, args.size, args.seed, args.split, args.force)
    print(f"wrote {len(manifest)} items to {args.out} ({manifest.counts()})")
    return EXIT_OK


def cmd_train_translator(args) -> int:
    config = _config(args)
    tcfg = config.translator
    if args.epochs is not None:
        tcfg = _override(tcfg, epochs=args.epochs)
    data = args.data or config.resolve_path(config.data.corpus)
    out = Path(args.out) if args.out else config.resolve_path(config.data.out_dir) / "translator"
    run = train_translator_run(tcfg, data, out, config.data.pool_split, args.resume)
    print(f"checkpoint {run.checkpoint}\nloss log {run.loss_csv}")
    if "trained" in run.metrics:
        u, t = run.metrics["untrained"], run.metrics["trained"]
        print(f"held-out L1 {u['mean_l1']:.4f} -> {t['mean_l1']:.4f}, PSNR {u['psnr']:.2f} -> {t['psnr']:.2f} dB")
    return EXIT_OK


def cmd_translate(args) -> int:
    manifest = translate_dir(args.model, args.input, args.out, args.split, args.force)
    print(f"translated {len(manifest)} images into {args.out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    manifest = mix_dirs(args.generated, args.real, args.ratio, args.total, args.out, args.seed,
                        args.pool_split, args.split, args.force)
    counts = manifest.metadata["counts"]
    print(f"mixed {counts['generated']} generated + {counts['real']} real -> {args.out} {manifest.counts()}")
    return EXIT_OK


def cmd_import_yolo(args) -> int:
    manifest = import_yolo(args.input, args.out, args.domain, args.split, args.seed, args.force)
    print(f"imported {len(manifest)} images into {args.out} {manifest.counts()}")
    return EXIT_OK


def cmd_train_detector(args) -> int:
    config = _config(args)
    dcfg = config.detector
    if args.epochs is not None:
        dcfg = _override(dcfg, epochs=args.epochs)
    out = Path(args.out) if args.out else Path(args.data).parent / "detector"
    run = train_detector_run(dcfg, args.data, out)
    last = run.log[-1] if run.log else {}
    print(f"checkpoint {run.checkpoint}\nmetric log {run.log_csv}")
    if last:
        print(f"final val mAP50 {last['map50']:.4f}, mAP50-95 {last['map50_95']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out) if args.out else Path(args.model).parent
    report = evaluate_run(args.model, args.data, args.split, args.domain, out, args.tag,
                          args.ap_mode, args.confidence)
    print("dataset,precision,recall,map50,map50_95")
    print(",".join(report.row()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.spec)
    result = sweep(config, args.out)
    print("dataset,precision,recall,map50,map50_95")
    for r in result.reports:
        print(",".join(r.row()))
    print(f"report {result.csv_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.epsilon, args.tolerance, args.seed, args.only)
    if not results:
        raise PreconditionError(f"no gradcheck case matches {args.only!r}")
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    if args.verbose:
        for r in results:
            for detail in r.report.lines():
                print(f"    {r.name} {detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed at epsilon={args.epsilon:g}")
    return EXIT_OK if not failed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="pcbir", formatter_class=fmt,
                                     description="Visible-to-infrared augmentation pipeline for PCB defect detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("show-config", formatter_class=fmt, help="print the resolved config with every default")
    p.add_argument("--config", help="TOML config file (defaults only when omitted)")
    p.set_defaults(func=cmd_show_config)

    p = sub.add_parser("synth-toy", formatter_class=fmt, help="write the procedural paired toy corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=111, help="number of visible/IR pairs (>= 2)")
    p.add_argument("--size", type=int, default=64, help="image side in pixels (multiple of 8)")
    p.add_argument("--seed", type=int, default=0, help="corpus and split seed")
    p.add_argument("--split", default="8:1:1", help="train:val:test ratio, applied per pair")
    p.add_argument("--force", action="store_true", help="replace a previous corpus in --out")
    p.set_defaults(func=cmd_synth_toy)

    p = sub.add_parser("train-translator", formatter_class=fmt, help="train the CycleGAN translator")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--data", help="corpus manifest (default: data.corpus from the config)")
    p.add_argument("--out", help="output directory (default: <data.out_dir>/translator)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, help="override translator.epochs")
    p.set_defaults(func=cmd_train_translator)

    p = sub.add_parser("translate", formatter_class=fmt, help="write pseudo-IR images for visible items")
    p.add_argument("--model", required=True, help="translator checkpoint")
    p.add_argument("--in", dest="input", required=True, help="input dataset directory or manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="all", help="only translate this split ('all' for every split)")
    p.add_argument("--force", action="store_true", help="replace previous output in --out")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("mix", formatter_class=fmt, help="sample a generated:real detector training set")
    p.add_argument("--generated", required=True, help="pseudo-IR dataset directory or manifest")
    p.add_argument("--real", required=True, help="dataset holding real_ir items")
    p.add_argument("--ratio", required=True, help="generated:real ratio, e.g. 2:1")
    p.add_argument("--total", type=int, default=111, help="total number of images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--pool-split", default="train", help="draw from this source split ('all' for any)")
    p.add_argument("--split", default="7:2:1", help="train:val:test ratio of the mixed set")
    p.add_argument("--force", action="store_true", help="replace previous output in --out")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("import-yolo", formatter_class=fmt, help="convert a YOLO images/ + labels/ tree")
    p.add_argument("--in", dest="input", required=True, help="directory holding images/ and labels/")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--domain", default="real_ir", help="domain of every imported image")
    p.add_argument("--split", help="train:val:test ratio (default: keep train/val/test folders)")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--force", action="store_true", help="replace previous output in --out")
    p.set_defaults(func=cmd_import_yolo)

    p = sub.add_parser("train-detector", formatter_class=fmt, help="train the grid detector")
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--data", required=True, help="dataset manifest with train and val splits")
    p.add_argument("--out", help="output directory (default: <data dir>/../detector)")
    p.add_argument("--epochs", type=int, help="override detector.epochs")
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("evaluate", formatter_class=fmt, help="P, R, mAP50 and mAP50-95 on one split")
    p.add_argument("--model", required=True, help="detector checkpoint")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", default="test", help="split to evaluate")
    p.add_argument("--domain", help="comma-separated domains (default: IR domains for 1-channel models)")
    p.add_argument("--out", help="report directory (default: next to the model)")
    p.add_argument("--tag", help="dataset name in the report (default: the split)")
    p.add_argument("--ap-mode", default="101-point", choices=AP_MODES, help="AP interpolation")
    p.add_argument("--confidence", type=float, help="P/R confidence threshold (default: from the model)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", formatter_class=fmt, help="one detector per mixing ratio, one report row each")
    p.add_argument("--spec", required=True, help="TOML config; data.ratios and data.total define the sweep")
    p.add_argument("--out", help="output directory (default: data.out_dir)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", formatter_class=fmt, help="finite-difference checks of layers and objectives")
    p.add_argument("--epsilon", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=1e-2, help="max relative error")
    p.add_argument("--seed", type=int, default=0, help="toy model seed")
    p.add_argument("--only", help="run cases whose name contains this text")
    p.add_argument("--verbose", action="store_true", help="list per-parameter errors")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PreconditionError, ConfigError, PoolExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "SEED_ENV"]
