"""Geometric and photometric augmentations that keep boxes consistent.

Every function takes and returns ``(image, boxes)`` with ``image`` an
(H, W, C) float array in [0, 1] and ``boxes`` a list of
:class:`BoundingBox` in normalised coordinates. Randomness comes only
from the ``seed`` argument.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from .labels import BoundingBox

log = logging.getLogger(__name__)

PAD_VALUE = 0.5
KEEP_FRACTION = 0.25
PASTE_TRIES = 20


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def resize_nearest(image: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = image.shape[:2]
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(int), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(int), w - 1)
    return image[rows][:, cols]


def clip_box(box: BoundingBox, keep_fraction: float = 0.0) -> BoundingBox | None:
    """Clip to the unit square; drop if too little of the box survives."""
    clipped = box.clipped()
    if clipped is None or clipped.area < keep_fraction * box.area:
        return None
    return clipped


def remap_box(box: BoundingBox, scale_x: float, scale_y: float, offset_x: float, offset_y: float,
              keep_fraction: float = 0.0) -> BoundingBox | None:
    """x' = x * scale_x + offset_x (normalised), then clip."""
    x1, y1, x2, y2 = box.corners
    moved = BoundingBox.from_corners(x1 * scale_x + offset_x, y1 * scale_y + offset_y,
                                     x2 * scale_x + offset_x, y2 * scale_y + offset_y, box.class_id)
    return clip_box(moved, keep_fraction)


def mosaic(items: Sequence[tuple[np.ndarray, list[BoundingBox]]], output_size: int | None = None,
           seed=0, center: tuple[int, int] | None = None) -> tuple[np.ndarray, list[BoundingBox]]:
    """2x2 collage around a random centre; each image is resized into its quadrant.

    Quadrant order is top-left, top-right, bottom-left, bottom-right. The
    centre is drawn from the middle half of the canvas unless given.
    Zero-area boxes (from an empty quadrant) are dropped.
    """
    if len(items) != 4:
        raise ValueError(f"mosaic needs exactly 4 items, got {len(items)}")
    size = output_size or items[0][0].shape[0]
    rng = _rng(seed)
    if center is None:
        xc = int(rng.integers(size // 4, size - size // 4 + 1))
        yc = int(rng.integers(size // 4, size - size // 4 + 1))
    else:
        xc, yc = center
    channels = items[0][0].shape[2]
    canvas = np.full((size, size, channels), PAD_VALUE, dtype=np.float32)
    regions = [(0, 0, xc, yc), (xc, 0, size, yc), (0, yc, xc, size), (xc, yc, size, size)]
    out_boxes: list[BoundingBox] = []
    for (image, boxes), (x0, y0, x1, y1) in zip(items, regions):
        qw, qh = x1 - x0, y1 - y0
        if qw <= 0 or qh <= 0:
            continue
        canvas[y0:y1, x0:x1] = resize_nearest(image, qh, qw)
        for box in boxes:
            moved = remap_box(box, qw / size, qh / size, x0 / size, y0 / size)
            if moved is not None:
                out_boxes.append(moved)
    return canvas, out_boxes


def _pixel_region(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = box.to_pixels(width, height)
    return (max(0, math.floor(x1 + 1e-9)), max(0, math.floor(y1 + 1e-9)),
            min(width, math.ceil(x2 - 1e-9)), min(height, math.ceil(y2 - 1e-9)))


def _intersects(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])


def copy_paste(source: tuple[np.ndarray, list[BoundingBox]], dest: tuple[np.ndarray, list[BoundingBox]],
               probability: float, seed=0) -> tuple[np.ndarray, list[BoundingBox]]:
    """With ``probability``, paste one source defect patch into ``dest`` where it overlaps no box."""
    src_img, src_boxes = source
    dst_img, dst_boxes = dest
    if not src_boxes:
        raise ValueError("copy_paste source needs at least one box")
    rng = _rng(seed)
    out_img, out_boxes = dst_img.copy(), list(dst_boxes)
    if rng.random() >= probability:
        return out_img, out_boxes

    sh, sw = src_img.shape[:2]
    box = src_boxes[int(rng.integers(len(src_boxes)))]
    x0, y0, x1, y1 = _pixel_region(box, sw, sh)
    patch = src_img[y0:y1, x0:x1]
    ph, pw = patch.shape[:2]
    dh, dw = dst_img.shape[:2]
    if ph == 0 or pw == 0 or ph > dh or pw > dw:
        log.info("copy_paste: patch %dx%d does not fit destination %dx%d", pw, ph, dw, dh)
        return out_img, out_boxes
    occupied = [b.corners for b in dst_boxes]
    for _ in range(PASTE_TRIES):
        px = int(rng.integers(0, dw - pw + 1))
        py = int(rng.integers(0, dh - ph + 1))
        cand = (px / dw, py / dh, (px + pw) / dw, (py + ph) / dh)
        if any(_intersects(cand, other) for other in occupied):
            continue
        out_img[py:py + ph, px:px + pw] = patch
        out_boxes.append(BoundingBox.from_corners(*cand, class_id=box.class_id))
        return out_img, out_boxes
    log.info("copy_paste: no free placement after %d tries", PASTE_TRIES)
    return out_img, out_boxes


def random_scale(item: tuple[np.ndarray, list[BoundingBox]], scale_range: tuple[float, float] = (0.6, 1.4),
                 seed=0, factor: float | None = None) -> tuple[np.ndarray, list[BoundingBox]]:
    """Zoom about the centre and re-letterbox to the original size.

    Shrinking pads with mid-gray; enlarging crops the centre (the random
    crop). Boxes follow the same map; those mostly cut away are dropped.
    """
    image, boxes = item
    if factor is None:
        factor = float(_rng(seed).uniform(*scale_range))
    h, w = image.shape[:2]
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    if (nh, nw) == (h, w):
        return image.copy(), list(boxes)
    resized = resize_nearest(image, nh, nw)
    canvas = np.full_like(image, PAD_VALUE)
    oy, ox = (h - nh) // 2, (w - nw) // 2
    src_y, src_x = max(0, -oy), max(0, -ox)
    dst_y, dst_x = max(0, oy), max(0, ox)
    ch, cw = min(nh - src_y, h - dst_y), min(nw - src_x, w - dst_x)
    canvas[dst_y:dst_y + ch, dst_x:dst_x + cw] = resized[src_y:src_y + ch, src_x:src_x + cw]
    out = []
    for box in boxes:
        moved = remap_box(box, nw / w, nh / h, ox / w, oy / h, KEEP_FRACTION)
        if moved is not None:
            out.append(moved)
    return canvas, out


def color_jitter(item: tuple[np.ndarray, list[BoundingBox]], strength: float,
                 seed=0) -> tuple[np.ndarray, list[BoundingBox]]:
    """Per-channel gain in [1 - s, 1 + s] and offset in [-s/2, s/2]; boxes untouched."""
    image, boxes = item
    if strength == 0:
        return image.copy(), list(boxes)
    rng = _rng(seed)
    c = image.shape[2]
    gain = 1.0 + strength * rng.uniform(-1.0, 1.0, size=c)
    offset = 0.5 * strength * rng.uniform(-1.0, 1.0, size=c)
    out = np.clip(image * gain + offset, 0.0, 1.0).astype(image.dtype)
    return out, list(boxes)


def rotate90(item: tuple[np.ndarray, list[BoundingBox]], k: int = 1) -> tuple[np.ndarray, list[BoundingBox]]:
    """Rotate counter-clockwise by ``k`` quarter turns; labels remap exactly."""
    image, boxes = item
    k %= 4
    out = np.ascontiguousarray(np.rot90(image, k, axes=(0, 1)))
    for _ in range(k):
        boxes = [BoundingBox(b.class_id, b.cy, 1.0 - b.cx, b.h, b.w) for b in boxes]
    return out, list(boxes)


def fliplr(item: tuple[np.ndarray, list[BoundingBox]]) -> tuple[np.ndarray, list[BoundingBox]]:
    image, boxes = item
    return (np.ascontiguousarray(image[:, ::-1]),
            [BoundingBox(b.class_id, 1.0 - b.cx, b.cy, b.w, b.h) for b in boxes])


def letterbox(image: np.ndarray, size: int) -> tuple[np.ndarray, float, tuple[int, int]]:
    """Fit ``image`` into a ``size`` square with mid-gray padding.

    Returns the padded image, the scale applied and the (x, y) pixel offset.
    """
    h, w = image.shape[:2]
    scale = size / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    canvas = np.full((size, size, image.shape[2]), PAD_VALUE, dtype=np.float32)
    oy, ox = (size - nh) // 2, (size - nw) // 2
    canvas[oy:oy + nh, ox:ox + nw] = resize_nearest(image, nh, nw)
    return canvas, scale, (ox, oy)


def letterbox_item(item: tuple[np.ndarray, list[BoundingBox]], size: int):
    image, boxes = item
    h, w = image.shape[:2]
    canvas, scale, (ox, oy) = letterbox(image, size)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    out = [b for b in (remap_box(box, nw / size, nh / size, ox / size, oy / size) for box in boxes) if b]
    return canvas, out


def box_within_bounds(box: BoundingBox, width: int, height: int, tol: float = 1e-6) -> bool:
    x1, y1, x2, y2 = box.to_pixels(width, height)
    return x1 >= -tol and y1 >= -tol and x2 <= width + tol and y2 <= height + tol
