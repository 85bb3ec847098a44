"""Cutting full-board images into square tiles with remapped labels."""

from __future__ import annotations

import numpy as np

from .augment import KEEP_FRACTION
from .labels import BoundingBox


def tile_origins(length: int, tile_size: int, stride: int) -> list[int]:
    return list(range(0, length - tile_size + 1, stride))


def tile_crop(image: np.ndarray, boxes: list[BoundingBox], tile_size: int, stride: int,
              keep_fraction: float = KEEP_FRACTION) -> list[tuple[np.ndarray, list[BoundingBox]]]:
    """Row-major tiles of ``tile_size`` pixels every ``stride`` pixels.

    A box is kept in a tile iff the part inside covers at least
    ``keep_fraction`` of its original area; kept boxes are clipped then
    renormalised to tile coordinates.
    """
    h, w = image.shape[:2]
    if tile_size > h or tile_size > w:
        raise ValueError(f"tile size {tile_size} exceeds image size {w}x{h}")
    if tile_size < 1 or stride < 1:
        raise ValueError("tile_size and stride must be positive")
    pixel_boxes = [(b, b.to_pixels(w, h)) for b in boxes]
    tiles = []
    for ty in tile_origins(h, tile_size, stride):
        for tx in tile_origins(w, tile_size, stride):
            tile = image[ty:ty + tile_size, tx:tx + tile_size].copy()
            kept = []
            for box, (x1, y1, x2, y2) in pixel_boxes:
                cx1, cy1 = max(x1, tx), max(y1, ty)
                cx2, cy2 = min(x2, tx + tile_size), min(y2, ty + tile_size)
                if cx2 <= cx1 or cy2 <= cy1:
                    continue
                if (cx2 - cx1) * (cy2 - cy1) < keep_fraction * (x2 - x1) * (y2 - y1):
                    continue
                kept.append(BoundingBox.from_corners((cx1 - tx) / tile_size, (cy1 - ty) / tile_size,
                                                     (cx2 - tx) / tile_size, (cy2 - ty) / tile_size,
                                                     box.class_id))
            tiles.append((tile, kept))
    return tiles
