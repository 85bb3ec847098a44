"""End-to-end steps behind the CLI: corpus, translation, mixing, detection, sweep.

Each step checks its inputs before writing anything and leaves its
outputs in one directory: checkpoints, CSV logs and PNG figures.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from PIL import Image

from . import plotting
from .config import RunConfig, derive_seed
from .datapipe.io import paired_images, write_png, read_png
from .datapipe.labels import LabelFormatError, read_labels, write_labels
from .datapipe.manifest import DOMAINS, SPLITS, DatasetItem, DatasetManifest, MixRatio
from .datapipe.splits import mix, parse_split_ratio, split
from .datapipe.toy import synth_toy_corpus, write_toy_corpus
from .detector import DetectorConfig, GridDetector, evaluate_detector, load_splits, train_detector
from .evalkit import EvalReport, write_reports
from .translator import (
    CycleGanModel,
    TranslatorConfig,
    evaluate_translation,
    save_metrics,
    train,
    translate,
)

log = logging.getLogger(__name__)

OWNED_NAMES = ("images", "labels", "manifest.json")


class PreconditionError(ValueError):
    """Inputs are unusable; nothing has been written."""


def _checked(fn, *args):
    """Run a parser/validator, reporting bad values as a precondition failure."""
    try:
        return fn(*args)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from None


def _check_out_dir(out: Path, force: bool) -> None:
    if out.exists() and not out.is_dir():
        raise PreconditionError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()):
        if not force:
            raise PreconditionError(f"{out} is not empty; pass --force to overwrite")
        stray = [p.name for p in out.iterdir() if p.name not in OWNED_NAMES]
        if stray:
            raise PreconditionError(f"{out} holds files this command did not write ({', '.join(sorted(stray)[:3])}); "
                                    f"refusing to overwrite")


def _clear_owned(out: Path) -> None:
    for name in OWNED_NAMES:
        p = out / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def _load_manifest(path: str | Path) -> DatasetManifest:
    p = Path(path)
    if not (p / "manifest.json" if p.is_dir() else p).is_file():
        raise PreconditionError(f"no manifest at {p}")
    try:
        return DatasetManifest.load(p)
    except Exception as exc:  # schema or decode failure
        raise PreconditionError(f"invalid manifest {p}: {exc}") from None


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


# ---- synth-toy ----

def synth_toy(out: str | Path, n: int = 111, size: int = 64, seed: int = 0, split_ratio: str = "8:1:1",
              force: bool = False) -> DatasetManifest:
    out = Path(out)
    if n < 2:
        raise PreconditionError("--n must be at least 2 (pairs need two images)")
    if size < 8 or size % 8:
        raise PreconditionError("--size must be a positive multiple of 8")
    _checked(parse_split_ratio, split_ratio)
    _check_out_dir(out, force)
    corpus = synth_toy_corpus(n, size, seed)
    _clear_owned(out)
    return write_toy_corpus(corpus, out, split_ratio, seed)


# ---- translator ----

@dataclass
class TranslatorRun:
    checkpoint: Path
    loss_csv: Path
    metrics: dict


def _translator_pools(manifest: DatasetManifest, pool_split: str):
    splits = None if pool_split == "all" else pool_split
    vis = manifest.select(domain="visible", split=splits)
    ir = manifest.select(domain="real_ir", split=splits)
    if len(vis) == 0 or len(ir) == 0:
        raise PreconditionError(f"translator needs visible and real_ir items in split {pool_split!r}; "
                                f"found {len(vis)} and {len(ir)}")
    return vis, ir


def train_translator_run(config: TranslatorConfig, data: str | Path, out: str | Path,
                         pool_split: str = "train", resume: str | Path | None = None,
                         eval_split: str = "test") -> TranslatorRun:
    manifest = _load_manifest(data)
    vis, ir = _translator_pools(manifest, pool_split)
    w, h = _image_size(vis.resolve(vis.items[0].image))
    if (w, h) != (config.image_size, config.image_size):
        raise PreconditionError(f"corpus images are {w}x{h}, translator.image_size is {config.image_size}")
    if resume is not None and not Path(resume).is_file():
        raise PreconditionError(f"resume checkpoint not found: {resume}")
    out = Path(out)

    result = train(config, vis, ir, checkpoint_dir=out, resume_from=resume)
    metrics: dict = {"steps": result.steps, "epochs": len(result.log)}
    pairs = paired_images(manifest, eval_split)
    if pairs:
        untrained = CycleGanModel.build(config)
        metrics["untrained"] = evaluate_translation(untrained, pairs)
        metrics["trained"] = evaluate_translation(result.model, pairs)
        metrics["eval_split"] = eval_split
    save_metrics(metrics, out / "translator_metrics.json")
    if result.log:
        plotting.plot_translator_losses(result.log, out / "translator_loss.png")
    return TranslatorRun(out / "translator_last.ckpt", out / "translator_loss.csv", metrics)


def _load_translator(path: str | Path) -> CycleGanModel:
    if not Path(path).is_file():
        raise PreconditionError(f"model checkpoint not found: {path}")
    try:
        return CycleGanModel.load(path)
    except Exception as exc:
        raise PreconditionError(f"cannot load translator from {path}: {exc}") from None


def translate_dir(model_path: str | Path, src: str | Path, out: str | Path, split_filter: str = "all",
                  force: bool = False) -> DatasetManifest:
    """Pseudo-IR sibling for every visible item; label files are copied byte for byte."""
    model = _load_translator(model_path)
    manifest = _load_manifest(src)
    vis = manifest.select(domain="visible", split=None if split_filter == "all" else split_filter)
    if len(vis) == 0:
        raise PreconditionError(f"no visible items to translate in {src} (split {split_filter!r})")
    size = model.config.image_size
    for item in vis.items:
        p = vis.resolve(item.image)
        if not p.is_file():
            raise PreconditionError(f"missing image {p}")
        if _image_size(p) != (size, size):
            raise PreconditionError(f"{p} is not {size}x{size}; the translator needs tiles of its training size")
    out = Path(out)
    _check_out_dir(out, force)
    _clear_owned(out)

    items = []
    for item in vis.items:
        stem = Path(item.image).stem
        image_rel = f"images/{item.split}/{stem}.png"
        pseudo = translate(model, read_png(vis.resolve(item.image), model.config.visible_channels))
        write_png(pseudo, out / image_rel)
        label_rel = None
        if item.label is not None:
            label_rel = f"labels/{item.split}/{stem}.txt"
            (out / label_rel).parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(vis.resolve(item.label), out / label_rel)
        items.append(DatasetItem(image_rel, label_rel, "pseudo_ir", item.split, item.pair_id))
    meta = {"name": "pseudo_ir", "seed": int(model.config.seed),
            "source": str(manifest.metadata.get("name", "dataset")), "translator": Path(model_path).name}
    result = DatasetManifest(items, meta, out)
    result.save(out / "manifest.json")
    return result


# ---- mix ----

def _pool(manifest: DatasetManifest, domains, pool_split: str) -> DatasetManifest:
    return manifest.select(domain=domains, split=None if pool_split == "all" else pool_split)


def mix_dirs(generated: str | Path, real: str | Path, ratio: str, total: int, out: str | Path,
             seed: int = 0, pool_split: str = "train", split_ratio: str = "7:2:1",
             force: bool = False) -> DatasetManifest:
    """Sample, split and copy a generated:real training set into ``out``."""
    mix_ratio = _checked(MixRatio.parse, ratio)
    _checked(parse_split_ratio, split_ratio)
    if total < 1:
        raise PreconditionError("--total must be positive")
    gen_pool = _pool(_load_manifest(generated), "pseudo_ir", pool_split)
    real_pool = _pool(_load_manifest(real), "real_ir", pool_split)
    mixed = mix(gen_pool, real_pool, mix_ratio, total, seed)
    out = Path(out)
    _check_out_dir(out, force)
    mixed = split(mixed, split_ratio, derive_seed(seed, "mix/split"))
    _clear_owned(out)

    items = []
    for item in mixed.items:
        origin = "gen" if item.domain == "pseudo_ir" else "real"
        stem = f"{origin}_{Path(item.image).stem}"
        image_rel = f"images/{item.split}/{stem}.png"
        (out / image_rel).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(item.image, out / image_rel)
        label_rel = None
        if item.label:
            label_rel = f"labels/{item.split}/{stem}.txt"
            (out / label_rel).parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(item.label, out / label_rel)
        items.append(replace(item, image=image_rel, label=label_rel))
    result = DatasetManifest(items, mixed.metadata, out)
    result.save(out / "manifest.json")
    return result


# ---- import-yolo ----

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def import_yolo(src: str | Path, out: str | Path, domain: str, split_ratio: str | None = None,
                seed: int = 0, force: bool = False) -> DatasetManifest:
    """Convert an ``images/`` + ``labels/`` YOLO tree into PNGs, canonical labels and a manifest.

    Labels are looked up at the image's relative path under ``labels/``; an
    image without one joins the unlabelled pool. Split folders named
    train/val/test are kept unless ``split_ratio`` reassigns everything.
    """
    src, out = Path(src), Path(out)
    if domain not in DOMAINS:
        raise PreconditionError(f"--domain must be one of {', '.join(DOMAINS)}")
    if split_ratio is not None:
        _checked(parse_split_ratio, split_ratio)
    image_root, label_root = src / "images", src / "labels"
    if not image_root.is_dir():
        raise PreconditionError(f"{src} has no images/ directory")
    paths = sorted(p for p in image_root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise PreconditionError(f"no images under {image_root}")

    entries, stems = [], set()
    for p in paths:
        rel = p.relative_to(image_root)
        if p.stem in stems:
            raise PreconditionError(f"duplicate image stem {p.stem!r}; stems must be unique")
        stems.add(p.stem)
        label_path = (label_root / rel).with_suffix(".txt")
        try:
            boxes = read_labels(label_path) if label_path.is_file() else None
        except LabelFormatError as exc:
            raise PreconditionError(str(exc)) from None
        folder = rel.parts[0] if len(rel.parts) > 1 else "unassigned"
        entries.append((p, boxes, folder if folder in SPLITS else "unassigned"))
    _check_out_dir(out, force)
    _clear_owned(out)

    channels = 3 if domain == "visible" else 1
    items = []
    for p, boxes, split_name in entries:
        image_rel = f"images/{split_name}/{p.stem}.png"
        write_png(read_png(p, channels), out / image_rel)
        label_rel = None
        if boxes is not None:
            label_rel = f"labels/{split_name}/{p.stem}.txt"
            write_labels(boxes, out / label_rel)
        items.append(DatasetItem(image_rel, label_rel, domain, split_name))
    result = DatasetManifest(items, {"name": src.resolve().name, "seed": int(seed)}, out)
    if split_ratio is not None:
        result = split(result, split_ratio, derive_seed(seed, "import/split"))
        moved = []
        for item in result.items:
            image_rel = f"images/{item.split}/{Path(item.image).name}"
            label_rel = f"labels/{item.split}/{Path(item.label).name}" if item.label else None
            for old, new in ((item.image, image_rel), (item.label, label_rel)):
                if old and old != new:
                    (out / new).parent.mkdir(parents=True, exist_ok=True)
                    (out / old).replace(out / new)
            moved.append(replace(item, image=image_rel, label=label_rel))
        result = result.with_items(moved)
    result.save(out / "manifest.json")
    return result


# ---- detector ----

@dataclass
class DetectorRun:
    checkpoint: Path
    log_csv: Path
    log: list[dict]


def _detector_manifest(data: str | Path, config: DetectorConfig) -> DatasetManifest:
    manifest = _load_manifest(data)
    if config.in_channels == 1:
        manifest = manifest.select(domain=("real_ir", "pseudo_ir"))
    for name in ("train", "val"):
        if len(manifest.select(split=name)) == 0:
            raise PreconditionError(f"{data}: the {name!r} split is empty")
    return manifest


def train_detector_run(config: DetectorConfig, data: str | Path, out: str | Path) -> DetectorRun:
    manifest = _detector_manifest(data, config)
    try:
        splits = load_splits(manifest, config)
    except (ValueError, OSError) as exc:
        raise PreconditionError(str(exc)) from None
    out = Path(out)
    result = train_detector(config, splits, checkpoint_dir=out)
    if result.log:
        plotting.plot_detector_log(result.log, out / "detector_log.png")
    return DetectorRun(out / "detector_last.ckpt", out / "detector_log.csv", result.log)


def _load_detector(path: str | Path) -> GridDetector:
    if not Path(path).is_file():
        raise PreconditionError(f"model checkpoint not found: {path}")
    try:
        return GridDetector.load(path)
    except Exception as exc:
        raise PreconditionError(f"cannot load detector from {path}: {exc}") from None


def evaluate_run(model_path: str | Path, data: str | Path, split_name: str = "test",
                 domain: str | None = None, out: str | Path | None = None, tag: str | None = None,
                 ap_mode: str = "101-point", confidence: float | None = None) -> EvalReport:
    model = _load_detector(model_path)
    manifest = _load_manifest(data)
    if domain is None:
        domains = ("real_ir", "pseudo_ir") if model.config.in_channels == 1 else None
    else:
        domains = tuple(d.strip() for d in domain.split(","))
    subset = manifest.select(domain=domains, split=split_name)
    if len(subset) == 0:
        raise PreconditionError(f"split {split_name!r} of {data} has no items to evaluate")
    config = model.config if confidence is None else replace(model.config, confidence_threshold=confidence)
    samples = load_splits(subset, config, (split_name,))[split_name]
    if not any(boxes for _, boxes in samples):
        raise PreconditionError(f"split {split_name!r} has no ground-truth boxes")
    report = evaluate_detector(model, samples, tag or split_name, config, ap_mode)
    if out is not None:
        out = Path(out)
        write_reports([report], out / "eval_report.json", out / "eval_report.csv")
        plotting.plot_report_bars([report], out / "eval_report.png", "evaluation")
    return report


# ---- sweep ----

@dataclass
class SweepResult:
    reports: list[EvalReport]
    csv_path: Path
    json_path: Path


def sweep(config: RunConfig, out: str | Path | None = None,
          ratios: Sequence[str] | None = None) -> SweepResult:
    """Translator (trained once), pseudo-IR pool, then one detector per mixing ratio.

    Every ratio is evaluated on the held-out real-IR test split of the
    corpus. Seeds for ratio ``i`` derive from ``(seed, i)``.
    """
    data = config.data
    ratios = list(ratios or data.ratios)
    for r in ratios:
        _checked(MixRatio.parse, r)
    corpus = config.resolve_path(data.corpus)
    manifest = _load_manifest(corpus)
    test = manifest.select(domain=data.test_domain, split=data.test_split)
    if len(test) == 0:
        raise PreconditionError(f"corpus has no {data.test_domain} items in split {data.test_split!r}")
    out = Path(out) if out is not None else config.resolve_path(data.out_dir)

    ckpt = config.resolve_path(data.translator_checkpoint)
    if ckpt is None:
        ckpt = out / "translator" / "translator_last.ckpt"
        if not ckpt.is_file():
            train_translator_run(config.translator, corpus, out / "translator", data.pool_split)
    generated = config.resolve_path(data.generated)
    if generated is None:
        generated = out / "generated"
        if not (generated / "manifest.json").is_file():
            translate_dir(ckpt, corpus, generated, data.pool_split)

    reports = []
    for i, ratio in enumerate(ratios):
        tag = MixRatio.parse(ratio).tag
        run_dir = out / f"ratio_{tag.replace(':', '_')}"
        mix_dirs(generated, corpus, ratio, data.total, run_dir / "data", derive_seed(config.seed, f"sweep/mix/{i}"),
                 data.pool_split, data.detector_split, force=True)
        det_cfg = replace(config.detector, seed=derive_seed(config.seed, f"sweep/detector/{i}"))
        run = train_detector_run(det_cfg, run_dir / "data", run_dir / "detector")
        report = evaluate_run(run.checkpoint, corpus, data.test_split, data.test_domain,
                              tag=f"{tag} ({_counts(ratio, data.total)})",
                              ap_mode=config.eval.ap_mode, confidence=config.eval.confidence_threshold)
        log.info("sweep %s: mAP50 %.3f", tag, report.map50)
        reports.append(report)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / "sweep_report.json", out / "sweep_report.csv"
    write_reports(reports, json_path, csv_path)
    plotting.plot_report_bars(reports, out / "sweep_report.png", "mixing-ratio sweep, real-IR test split")
    return SweepResult(reports, csv_path, json_path)


def _counts(ratio: str, total: int) -> str:
    g, t = MixRatio.parse(ratio).counts(total)
    return f"{g}:{t}"
