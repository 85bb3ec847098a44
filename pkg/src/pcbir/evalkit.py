"""Detection metrics: IoU, greedy matching, interpolated AP and mAP reports.

Single class throughout, so mAP is the AP of that class. Two AP
conventions are available: ``"101-point"`` (COCO-style: mean over recall
levels 0.00..1.00 of the best precision at recall >= r) and
``"all-points"`` (area under the precision envelope). Operating points
are taken at distinct score thresholds, so tied scores enter together.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Sequence

import jsonschema
import numpy as np

from .datapipe.labels import BoundingBox
from .datapipe.manifest import load_schema

log = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
AP_MODES = ("101-point", "all-points")
REPORT_COLUMNS = ("dataset", "precision", "recall", "map50", "map50_95")
ORACLE_MAX_DETECTIONS = 30


@dataclass(frozen=True)
class GroundTruthBox:
    box: BoundingBox
    image_id: Hashable = 0


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    image_id: Hashable = 0


def _corners(box) -> tuple[float, float, float, float]:
    if isinstance(box, (Detection, GroundTruthBox)):
        box = box.box
    if isinstance(box, BoundingBox):
        return box.corners
    x1, y1, x2, y2 = box
    return float(x1), float(y1), float(x2), float(y2)


def iou(box_a, box_b) -> float:
    """Intersection over union of two boxes (``BoundingBox`` or corner tuples)."""
    ax1, ay1, ax2, ay2 = _corners(box_a)
    bx1, by1, bx2, by2 = _corners(box_b)
    area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
    area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
    if area_a <= 0 or area_b <= 0:
        log.debug("iou: zero-area box %s / %s", box_a, box_b)
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


@dataclass
class MatchResult:
    matched_gt: list[int | None]      # aligned with the input detections
    is_true_positive: list[bool]
    gt_covered: list[bool]            # aligned with the input ground truths
    order: list[int]                  # processing order (descending score, stable)
    undefined_recall: bool = False

    @property
    def tp(self) -> int:
        return sum(self.is_true_positive)

    @property
    def fp(self) -> int:
        return len(self.is_true_positive) - self.tp

    @property
    def recall(self) -> float:
        n = len(self.gt_covered)
        return self.tp / n if n else 0.0

    @property
    def precision(self) -> float:
        n = len(self.is_true_positive)
        return self.tp / n if n else 0.0


def score_order(detections: Sequence[Detection]) -> list[int]:
    return sorted(range(len(detections)), key=lambda i: -detections[i].score)


def match_detections(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching by descending score within each image.

    Each detection takes the unmatched ground truth of highest IoU (at
    least ``iou_threshold``); IoU ties go to the lower ground-truth index.
    """
    by_image: dict[Hashable, list[int]] = {}
    for j, gt in enumerate(ground_truths):
        by_image.setdefault(gt.image_id, []).append(j)
    covered = [False] * len(ground_truths)
    matched: list[int | None] = [None] * len(detections)
    order = score_order(detections)
    for i in order:
        det = detections[i]
        best, best_iou = None, iou_threshold
        for j in by_image.get(det.image_id, ()):
            if covered[j]:
                continue
            v = iou(det.box, ground_truths[j].box)
            if v > best_iou or (v == best_iou and best is None):
                best, best_iou = j, v
        if best is not None:
            covered[best] = True
            matched[i] = best
    return MatchResult(matched, [m is not None for m in matched], covered, order,
                       undefined_recall=len(ground_truths) == 0)


def pr_curve(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
             iou_threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(recall, precision, threshold) at each distinct score, highest score first."""
    n_gt = len(ground_truths)
    if n_gt == 0:
        raise ValueError("no ground truths: cannot build a PR curve (empty test set?)")
    if not detections:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    result = match_detections(detections, ground_truths, iou_threshold)
    order = np.asarray(result.order)
    scores = np.asarray([detections[i].score for i in order], dtype=np.float64)
    tp = np.asarray([result.is_true_positive[i] for i in order], dtype=np.int64)
    cum_tp = np.cumsum(tp)
    cum_det = np.arange(1, len(tp) + 1)
    last_of_group = np.append(scores[1:] != scores[:-1], True)
    cum_tp, cum_det = cum_tp[last_of_group], cum_det[last_of_group]
    return cum_tp / n_gt, cum_tp / cum_det, scores[last_of_group]


def _interpolate(recall: np.ndarray, precision: np.ndarray, mode: str) -> float:
    if mode not in AP_MODES:
        raise ValueError(f"unknown AP mode {mode!r}; choose from {AP_MODES}")
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if mode == "101-point":
        grid = np.arange(101) / 100.0
        idx = np.searchsorted(recall, grid, side="left")
        values = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
        return float(values.mean())
    widths = np.diff(np.concatenate(([0.0], recall)))
    return float((widths * envelope).sum())


def average_precision(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
                      iou_threshold: float = 0.5, mode: str = "101-point") -> float:
    recall, precision, _ = pr_curve(detections, ground_truths, iou_threshold)
    return _interpolate(recall, precision, mode)


def ap_oracle(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
              iou_threshold: float = 0.5, mode: str = "101-point") -> float:
    """Brute-force AP: rematch from scratch at every distinct score threshold.

    Shares no code with :func:`average_precision` beyond the data types;
    recall comparisons use exact fractions.
    """
    if len(detections) > ORACLE_MAX_DETECTIONS:
        raise ValueError(f"ap_oracle is exhaustive; at most {ORACLE_MAX_DETECTIONS} detections")
    n_gt = len(ground_truths)
    if n_gt == 0:
        raise ValueError("no ground truths")

    def overlap(a: BoundingBox, b: BoundingBox) -> float:
        left, right = max(a.cx - a.w / 2, b.cx - b.w / 2), min(a.cx + a.w / 2, b.cx + b.w / 2)
        top, bottom = max(a.cy - a.h / 2, b.cy - b.h / 2), min(a.cy + a.h / 2, b.cy + b.h / 2)
        if right <= left or bottom <= top:
            return 0.0
        inter = (right - left) * (bottom - top)
        return inter / (a.w * a.h + b.w * b.h - inter)

    ranked = sorted(enumerate(detections), key=lambda pair: (-pair[1].score, pair[0]))
    points = []  # (recall as Fraction, precision as float)
    for tau in sorted({d.score for d in detections}, reverse=True):
        kept = [d for _, d in ranked if d.score >= tau]
        used = set()
        tp = 0
        for d in kept:
            choice, choice_iou = None, -1.0
            for j, gt in enumerate(ground_truths):
                if j in used or gt.image_id != d.image_id:
                    continue
                v = overlap(d.box, gt.box)
                if v >= iou_threshold and v > choice_iou:
                    choice, choice_iou = j, v
            if choice is not None:
                used.add(choice)
                tp += 1
        points.append((Fraction(tp, n_gt), tp / len(kept)))

    if mode == "101-point":
        total = 0.0
        for level in range(101):
            candidates = [p for r, p in points if r >= Fraction(level, 100)]
            total += max(candidates) if candidates else 0.0
        return total / 101
    if mode == "all-points":
        area, prev = 0.0, Fraction(0)
        for k, (r, _) in enumerate(points):
            area += float(r - prev) * max(p for _, p in points[k:])
            prev = r
        return area
    raise ValueError(f"unknown AP mode {mode!r}")


@dataclass
class EvalReport:
    dataset: str
    precision: float
    recall: float
    map50: float
    map50_95: float
    ap_by_iou: dict[str, float] = field(default_factory=dict)
    undefined_recall: bool = False
    n_images: int = 0
    n_ground_truths: int = 0
    n_detections: int = 0
    ap_mode: str = "101-point"
    confidence_threshold: float = 0.25

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "precision": self.precision, "recall": self.recall,
            "map50": self.map50, "map50_95": self.map50_95, "ap_by_iou": dict(self.ap_by_iou),
            "undefined_recall": self.undefined_recall, "n_images": self.n_images,
            "n_ground_truths": self.n_ground_truths, "n_detections": self.n_detections,
            "ap_mode": self.ap_mode, "confidence_threshold": self.confidence_threshold,
        }

    def row(self) -> list:
        return [self.dataset] + [f"{getattr(self, c):.6f}" for c in REPORT_COLUMNS[1:]]


def map_suite(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
              confidence_threshold: float = 0.25, dataset: str = "dataset",
              mode: str = "101-point") -> EvalReport:
    """mAP50, mAP50-95 over ten IoU thresholds, and P/R at the confidence threshold."""
    if not ground_truths:
        raise ValueError("no ground truths: the evaluated split is empty or unlabeled")
    aps = {f"{t:.2f}": average_precision(detections, ground_truths, t, mode) for t in IOU_THRESHOLDS}
    confident = [d for d in detections if d.score >= confidence_threshold]
    at_conf = match_detections(confident, ground_truths, 0.5)
    images = {g.image_id for g in ground_truths} | {d.image_id for d in detections}
    return EvalReport(
        dataset=dataset,
        precision=at_conf.precision,
        recall=at_conf.recall,
        map50=aps["0.50"],
        map50_95=float(np.mean(list(aps.values()))),
        ap_by_iou=aps,
        undefined_recall=at_conf.undefined_recall,
        n_images=len(images),
        n_ground_truths=len(ground_truths),
        n_detections=len(detections),
        ap_mode=mode,
        confidence_threshold=confidence_threshold,
    )


def validate_report_json(data: dict) -> None:
    jsonschema.validate(data, load_schema("eval_report.schema.json"))


def write_reports(reports: Sequence[EvalReport], json_path: str | Path | None = None,
                  csv_path: str | Path | None = None) -> None:
    """Emit reports as schema-checked JSON and as one CSV row per dataset."""
    if json_path is not None:
        data = {"version": 1, "reports": [r.to_dict() for r in reports]}
        validate_report_json(data)
        Path(json_path).parent.mkdir(parents=True, exist_ok=True)
        Path(json_path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with Path(csv_path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for r in reports:
                writer.writerow(r.row())


def read_report_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
