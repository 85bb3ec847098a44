"""Single-class grid detector trained from scratch on the nncore substrate.

The image is divided into S x S cells. Each cell predicts an objectness
logit and a box: centre offsets ``tx, ty`` (sigmoid, cell-relative) and
log-scale size factors ``tw, th`` relative to one cell. The cell holding
a box centre is responsible for it. With one class the classification
loss reduces to objectness, so the training log carries ``box_loss``
and ``obj_loss``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datapipe import augment
from .datapipe.io import load_samples
from .datapipe.labels import BoundingBox
from .datapipe.manifest import DatasetManifest
from .evalkit import Detection, EvalReport, GroundTruthBox, iou, map_suite
from .nncore import (
    Adam,
    LayerSpec,
    Network,
    OptimizerConfig,
    Tensor,
    build_network,
    load_checkpoint,
    maximum,
    minimum,
    no_grad,
    save_checkpoint,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "box_loss", "obj_loss", "precision", "recall", "map50", "map50_95")
SIZE_LOGIT_CLAMP = 4.0
OBJ_PRIOR = 0.01
Sample = tuple[np.ndarray, list[BoundingBox]]


@dataclass
class DetectorConfig:
    image_size: int = 640
    in_channels: int = 1
    batch_size: int = 6
    lr0: float = 0.01
    cosine_schedule: bool = True
    epochs: int = 100
    grid_cells_per_side: int | None = None   # None: image_size // 8
    confidence_threshold: float = 0.25
    nms_iou: float = 0.5
    mosaic: float = 1.0
    copy_paste: float = 0.4
    scale: float = 0.8                       # total width of the zoom range
    scale_min: float | None = None           # None: 1 - scale / 2
    scale_max: float | None = None           # None: 1 + scale / 2
    color_jitter: float = 0.1
    close_mosaic: int = 10                   # final epochs trained without mosaic
    base_channels: int = 16
    eval_confidence: float = 0.001
    max_detections: int = 100
    seed: int = 0

    def __post_init__(self):
        s = self.grid_size
        if self.image_size < 1 or s < 1 or self.image_size % s:
            raise ValueError(f"image_size {self.image_size} must be divisible by the grid size {s}")
        stride = self.image_size // s
        if stride & (stride - 1):
            raise ValueError(f"cell stride {stride} must be a power of two")
        if self.batch_size < 1 or self.epochs < 0 or self.lr0 <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and lr0 > 0 required")
        for name in ("mosaic", "copy_paste", "confidence_threshold", "nms_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid scale range ({lo}, {hi})")

    @property
    def grid_size(self) -> int:
        return self.grid_cells_per_side or max(1, self.image_size // 8)

    @property
    def scale_range(self) -> tuple[float, float]:
        lo = 1.0 - self.scale / 2 if self.scale_min is None else self.scale_min
        hi = 1.0 + self.scale / 2 if self.scale_max is None else self.scale_max
        return lo, hi

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(config: DetectorConfig, epoch: int) -> float:
    """lr0 * (1 + cos(pi * t / T)) / 2 when the cosine schedule is on, else lr0."""
    if not config.cosine_schedule or config.epochs == 0:
        return config.lr0
    return config.lr0 * (1.0 + math.cos(math.pi * epoch / config.epochs)) / 2.0


# ---- target encoding ----

@dataclass
class TargetGrid:
    objectness: np.ndarray   # (S, S), 1 at responsible cells
    boxes: np.ndarray        # (S, S, 4) cx, cy, w, h of the assigned box
    offsets: np.ndarray      # (S, S, 4) tx, ty in [0, 1), tw, th log-scale
    dropped: int = 0

    @property
    def grid_size(self) -> int:
        return self.objectness.shape[0]


def _cell(coord: float, s: int) -> int:
    return min(int(math.floor(coord * s)), s - 1)


def encode_targets(boxes: Sequence[BoundingBox], grid_size: int) -> TargetGrid:
    """Assign each box to the cell holding its centre (half-open cells).

    When several boxes share a cell the largest is kept and the drop logged.
    """
    s = grid_size
    obj = np.zeros((s, s), dtype=np.float64)
    tgt = np.zeros((s, s, 4), dtype=np.float64)
    off = np.zeros((s, s, 4), dtype=np.float64)
    owner: dict[tuple[int, int], BoundingBox] = {}
    dropped = 0
    for box in boxes:
        key = (_cell(box.cy, s), _cell(box.cx, s))
        if key in owner:
            dropped += 1
            if box.area <= owner[key].area:
                continue
        owner[key] = box
    if dropped:
        log.debug("encode_targets: %d boxes dropped from shared cells", dropped)
    for (r, c), box in owner.items():
        obj[r, c] = 1.0
        tgt[r, c] = (box.cx, box.cy, box.w, box.h)
        off[r, c] = (box.cx * s - c, box.cy * s - r, math.log(box.w * s), math.log(box.h * s))
    return TargetGrid(obj, tgt, off, dropped)


def decode_targets(grid: TargetGrid, class_id: int = 0) -> list[BoundingBox]:
    """Inverse of :func:`encode_targets` on the kept boxes, row-major."""
    s = grid.grid_size
    out = []
    for r, c in zip(*np.nonzero(grid.objectness > 0.5)):
        tx, ty, tw, th = grid.offsets[r, c]
        out.append(BoundingBox(class_id, (c + tx) / s, (r + ty) / s, math.exp(tw) / s, math.exp(th) / s))
    return out


def raw_from_targets(grid: TargetGrid, logit: float = 30.0) -> np.ndarray:
    """Head output (5, S, S) that decodes exactly to ``grid``; for tests and sanity checks."""
    frac = np.clip(grid.offsets[..., :2], 1e-12, 1 - 1e-12)
    raw = np.zeros((5,) + grid.objectness.shape)
    raw[0] = np.where(grid.objectness > 0.5, logit, -logit)
    raw[1:3] = np.moveaxis(np.log(frac) - np.log1p(-frac), -1, 0)
    raw[3:5] = np.moveaxis(grid.offsets[..., 2:], -1, 0)
    return raw


# ---- network ----

def detector_specs(in_channels: int, base: int, downsamplings: int) -> list[LayerSpec]:
    specs = [LayerSpec("conv2d", base, 3, 1, 1), LayerSpec("leaky_relu", base, slope=0.1)]
    ch = base
    for d in range(downsamplings):
        ch = base * 2 ** min(d + 1, 2)
        specs += [LayerSpec("conv2d", ch, 3, 2, 1), LayerSpec("leaky_relu", ch, slope=0.1)]
    specs += [LayerSpec("conv2d", ch, 3, 1, 1), LayerSpec("leaky_relu", ch, slope=0.1),
              LayerSpec("conv2d", 5, 1, 1, 0)]
    return specs


@dataclass
class GridDetector:
    network: Network
    config: DetectorConfig

    @classmethod
    def build(cls, config: DetectorConfig, rng: np.random.Generator | None = None) -> GridDetector:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        downs = int(round(math.log2(config.image_size // config.grid_size)))
        specs = detector_specs(config.in_channels, config.base_channels, downs)
        net = build_network(specs, (config.in_channels, config.image_size, config.image_size), rng,
                            name="det", init_std=None)
        head = net.layers[-1]
        head.weight.data *= 0.1
        head.bias.data[0] = math.log(OBJ_PRIOR / (1 - OBJ_PRIOR))
        return cls(net, config)

    def __call__(self, x: Tensor) -> Tensor:
        return self.network(x)

    def parameters(self):
        return self.network.parameters()

    def named_parameters(self) -> dict:
        return self.network.named_parameters()

    def zero_grad(self) -> None:
        self.network.zero_grad()

    def save(self, path: str | Path, step_index: int = 0, include_optimizer: bool = True,
             meta: dict | None = None) -> Path:
        header = {"kind": "detector", "config": self.config.to_dict()}
        header.update(meta or {})
        return save_checkpoint(path, self.named_parameters(), step_index, include_optimizer, header)

    @classmethod
    def load(cls, path: str | Path) -> GridDetector:
        ckpt = load_checkpoint(path)
        if ckpt.meta.get("kind") != "detector":
            raise ValueError(f"{path} is not a detector checkpoint")
        model = cls.build(DetectorConfig(**ckpt.meta["config"]))
        ckpt.restore(model.named_parameters())
        return model


# ---- loss ----

@dataclass
class LossResult:
    total: Tensor
    box_loss: Tensor
    obj_loss: Tensor

    def __getitem__(self, key: str) -> Tensor:
        return getattr(self, key)


def _box_iou(px, py, pw, ph, target: np.ndarray) -> Tensor:
    tx1 = target[:, 0] - target[:, 2] / 2
    tx2 = target[:, 0] + target[:, 2] / 2
    ty1 = target[:, 1] - target[:, 3] / 2
    ty2 = target[:, 1] + target[:, 3] / 2
    iw = (minimum(px + pw * 0.5, tx2) - maximum(px - pw * 0.5, tx1)).relu()
    ih = (minimum(py + ph * 0.5, ty2) - maximum(py - ph * 0.5, ty1)).relu()
    inter = iw * ih
    union = pw * ph + target[:, 2] * target[:, 3] - inter
    return inter / (union + 1e-12)


def detector_loss(predictions: Tensor, targets: Sequence[TargetGrid]) -> LossResult:
    """box_loss: mean (1 - IoU) over responsible cells; obj_loss: mean BCE over all cells."""
    n, c, s, s2 = predictions.shape
    if c != 5 or s != s2 or len(targets) != n or any(t.grid_size != s for t in targets):
        raise ValueError(f"prediction shape {predictions.shape} does not match {len(targets)} target grids")
    obj_t = np.stack([t.objectness for t in targets]).astype(predictions.dtype)
    logits = predictions[:, 0]
    obj_loss = (logits.softplus() - logits * obj_t).mean()

    idx = np.nonzero(obj_t > 0.5)
    if idx[0].size == 0:
        box_loss = Tensor(np.zeros((), dtype=predictions.dtype))
    else:
        target = np.stack([t.boxes for t in targets])[idx].astype(predictions.dtype)
        rows, cols = idx[1].astype(predictions.dtype), idx[2].astype(predictions.dtype)
        px = (predictions[:, 1][idx].sigmoid() + cols) * (1.0 / s)
        py = (predictions[:, 2][idx].sigmoid() + rows) * (1.0 / s)
        pw = predictions[:, 3][idx].clip(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp() * (1.0 / s)
        ph = predictions[:, 4][idx].clip(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp() * (1.0 / s)
        box_loss = (1.0 - _box_iou(px, py, pw, ph, target)).mean()
    return LossResult(box_loss + obj_loss, box_loss, obj_loss)


# ---- inference ----

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def decode_predictions(raw: np.ndarray, image_id=0, min_score: float = 0.0) -> list[Detection]:
    """All cells of a (5, S, S) head output as clipped detections, row-major."""
    s = raw.shape[-1]
    scores = _sigmoid(raw[0].astype(np.float64))
    out = []
    for r, c in zip(*np.nonzero(scores >= min_score)):
        cx = (c + _sigmoid(float(raw[1, r, c]))) / s
        cy = (r + _sigmoid(float(raw[2, r, c]))) / s
        w = math.exp(min(max(float(raw[3, r, c]), -SIZE_LOGIT_CLAMP), SIZE_LOGIT_CLAMP)) / s
        h = math.exp(min(max(float(raw[4, r, c]), -SIZE_LOGIT_CLAMP), SIZE_LOGIT_CLAMP)) / s
        x1, y1 = max(0.0, cx - w / 2), max(0.0, cy - h / 2)
        x2, y2 = min(1.0, cx + w / 2), min(1.0, cy + h / 2)
        if x2 <= x1 or y2 <= y1:
            continue
        out.append(Detection(BoundingBox.from_corners(x1, y1, x2, y2), float(scores[r, c]), image_id))
    return out


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy suppression; survivors come out by descending score (stable)."""
    ranked = sorted(detections, key=lambda d: -d.score)
    kept: list[Detection] = []
    for det in ranked:
        if all(det.image_id != k.image_id or iou(det.box, k.box) < iou_threshold for k in kept):
            kept.append(det)
    return kept


def _as_batch(images: Sequence[np.ndarray], config: DetectorConfig) -> np.ndarray:
    size, ch = config.image_size, config.in_channels
    for img in images:
        if img.shape != (size, size, ch):
            raise ValueError(f"image shape {img.shape} != ({size}, {size}, {ch}); letterbox first")
    return np.stack([np.moveaxis(np.asarray(img, dtype=np.float32), -1, 0) for img in images])


def predict_batch(model: GridDetector, images: Sequence[np.ndarray], config: DetectorConfig | None = None,
                  confidence: float | None = None, image_ids: Sequence | None = None,
                  chunk: int = 32) -> list[list[Detection]]:
    config = config or model.config
    conf = config.confidence_threshold if confidence is None else confidence
    ids = list(range(len(images))) if image_ids is None else list(image_ids)
    results = []
    with no_grad():
        for start in range(0, len(images), chunk):
            raw = model(Tensor(_as_batch(images[start:start + chunk], config))).data
            for k, r in enumerate(raw):
                dets = decode_predictions(r, ids[start + k], conf)
                results.append(nms(dets, config.nms_iou)[:config.max_detections])
    return results


def predict(model: GridDetector, image: np.ndarray, config: DetectorConfig | None = None,
            image_id=0) -> list[Detection]:
    """Decode, keep scores >= the confidence threshold, NMS, sort by score."""
    return predict_batch(model, [image], config, image_ids=[image_id])[0]


def evaluate_detector(model: GridDetector, samples: Sequence[Sample], dataset: str = "dataset",
                      config: DetectorConfig | None = None, mode: str = "101-point") -> EvalReport:
    config = config or model.config
    images = [img for img, _ in samples]
    detections = [d for dets in predict_batch(model, images, config, config.eval_confidence) for d in dets]
    truths = [GroundTruthBox(b, i) for i, (_, boxes) in enumerate(samples) for b in boxes]
    return map_suite(detections, truths, config.confidence_threshold, dataset, mode)


# ---- training ----

@dataclass
class DetectorResult:
    model: GridDetector
    log: list[dict] = field(default_factory=list)
    steps: int = 0


def _prepare(samples: Sequence[Sample], config: DetectorConfig) -> list[Sample]:
    out = []
    for img, boxes in samples:
        if img.shape[2] != config.in_channels:
            raise ValueError(f"image has {img.shape[2]} channels, detector expects {config.in_channels}")
        if img.shape[:2] != (config.image_size, config.image_size):
            img, boxes = augment.letterbox_item((img, boxes), config.image_size)
        out.append((np.asarray(img, dtype=np.float32), list(boxes)))
    return out


def load_splits(manifest: DatasetManifest, config: DetectorConfig,
                splits: Sequence[str] = ("train", "val")) -> dict[str, list[Sample]]:
    out = {}
    for name in splits:
        sub = manifest.select(split=name)
        if len(sub) == 0:
            raise ValueError(f"manifest has an empty {name!r} split")
        if any(item.label is None for item in sub.items):
            raise ValueError(f"{name!r} split has unlabeled items")
        out[name] = _prepare(load_samples(sub, config.in_channels), config)
    return out


def mosaic_crop(items: Sequence[Sample], size: int, rng: np.random.Generator) -> Sample:
    """Mosaic on a 2x canvas, then the ``size`` window centred on the seam point.

    Each quadrant image is scaled by 0.5..1.5, so objects stay near their
    native size instead of shrinking into a quarter of the frame.
    """
    xc, yc = (int(v) for v in rng.integers(size // 2, size + size // 2 + 1, size=2))
    canvas, boxes = augment.mosaic(items, 2 * size, rng, center=(xc, yc))
    x0, y0 = xc - size // 2, yc - size // 2
    kept = [b for b in (augment.remap_box(box, 2.0, 2.0, -x0 / size, -y0 / size, augment.KEEP_FRACTION)
                        for box in boxes) if b is not None]
    return canvas[y0:y0 + size, x0:x0 + size].copy(), kept


def augment_sample(index: int, pool: Sequence[Sample], config: DetectorConfig, rng: np.random.Generator,
                   use_mosaic: bool) -> Sample:
    item = pool[index]
    if use_mosaic and config.mosaic > 0 and rng.random() < config.mosaic:
        others = rng.integers(0, len(pool), size=3)
        item = mosaic_crop([item] + [pool[int(k)] for k in others], config.image_size, rng)
    if config.copy_paste > 0:
        donors = [k for k in range(len(pool)) if pool[k][1]]
        if donors:
            donor = pool[donors[int(rng.integers(len(donors)))]]
            item = augment.copy_paste(donor, item, config.copy_paste, rng)
    if config.scale > 0 or config.scale_min is not None or config.scale_max is not None:
        lo, hi = config.scale_range
        if (lo, hi) != (1.0, 1.0):
            item = augment.random_scale(item, (lo, hi), rng)
    if config.color_jitter > 0:
        item = augment.color_jitter(item, config.color_jitter, rng)
    return item


def write_log_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([row["epoch"]] + [f"{row[c]:.6f}" for c in LOG_COLUMNS[1:]])
    return path


def train_detector(config: DetectorConfig, data: DatasetManifest | dict[str, Sequence[Sample]],
                   checkpoint_dir: str | Path | None = None, eval_split: str = "val",
                   on_epoch: Callable[[dict], None] | None = None) -> DetectorResult:
    """Train with Adam at the scheduled learning rate; evaluate ``eval_split`` each epoch.

    ``data`` is a manifest with train and val splits, or a mapping of split
    names to ``(image, boxes)`` samples. Augmentations touch the train split only.
    """
    if isinstance(data, DatasetManifest):
        pools = load_splits(data, config, tuple(dict.fromkeys(("train", eval_split))))
    else:
        pools = {k: _prepare(v, config) for k, v in data.items()}
    for name in ("train", eval_split):
        if not pools.get(name):
            raise ValueError(f"empty {name!r} split")
    train_pool, eval_pool = pools["train"], pools[eval_split]

    rng = np.random.default_rng(config.seed)
    model = GridDetector.build(config, rng)
    opt = Adam(model.parameters(), OptimizerConfig(learning_rate=config.lr0))
    s = config.grid_size
    rows: list[dict] = []
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        use_mosaic = epoch < config.epochs - config.close_mosaic
        order = rng.permutation(len(train_pool))
        box_sum = obj_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [augment_sample(int(i), train_pool, config, rng, use_mosaic)
                     for i in order[start:start + config.batch_size]]
            x = Tensor(_as_batch([img for img, _ in batch], config))
            targets = [encode_targets(boxes, s) for _, boxes in batch]
            opt.zero_grad()
            loss = detector_loss(model(x), targets)
            loss.total.backward()
            opt.step(lr)
            box_sum += loss.box_loss.item()
            obj_sum += loss.obj_loss.item()
            n_batches += 1
        if not (math.isfinite(box_sum) and math.isfinite(obj_sum)):
            raise FloatingPointError(f"detector loss became non-finite at epoch {epoch + 1}")
        report = evaluate_detector(model, eval_pool, eval_split, config)
        row = {"epoch": epoch + 1, "box_loss": box_sum / n_batches, "obj_loss": obj_sum / n_batches,
               "precision": report.precision, "recall": report.recall,
               "map50": report.map50, "map50_95": report.map50_95, "lr": lr}
        rows.append(row)
        log.info("epoch %d lr %.5f box %.4f obj %.4f mAP50 %.3f", row["epoch"], lr,
                 row["box_loss"], row["obj_loss"], row["map50"])
        if on_epoch is not None:
            on_epoch(row)

    if checkpoint_dir is not None:
        out = Path(checkpoint_dir)
        model.save(out / "detector_last.ckpt", opt.step_index, meta={"epochs_done": len(rows)})
        write_log_csv(rows, out / "detector_log.csv")
    return DetectorResult(model, rows, opt.step_index)
