"""PNG reading and writing, and loading manifest items into arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .labels import BoundingBox, read_labels
from .manifest import DatasetItem, DatasetManifest


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap [0, 1] floats to the 8-bit grid so in-memory and on-disk images agree."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def write_png(image: np.ndarray, path: str | Path) -> Path:
    """Write an (H, W), (H, W, 1) or (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")
    return path


def read_png(path: str | Path, channels: int | None = None) -> np.ndarray:
    """Read a PNG into (H, W, C) float32 in [0, 1]; ``channels`` forces 1 or 3."""
    with Image.open(path) as im:
        if channels == 1 or (channels is None and im.mode in ("L", "I", "I;16", "F")):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[..., None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_item(manifest: DatasetManifest, item: DatasetItem,
              channels: int | None = None) -> tuple[np.ndarray, list[BoundingBox]]:
    image = read_png(manifest.resolve(item.image), channels)
    boxes = read_labels(manifest.resolve(item.label)) if item.label else []
    return image, boxes


def load_samples(manifest: DatasetManifest, channels: int | None = None):
    return [load_item(manifest, item, channels) for item in manifest.items]


def load_manifest_images(manifest: DatasetManifest, domain: str | None = None,
                         split: str | None = None) -> list[np.ndarray]:
    sub = manifest.select(domain=domain, split=split)
    return [read_png(sub.resolve(item.image)) for item in sub.items]


def paired_images(manifest: DatasetManifest, split: str | None = None,
                  a: str = "visible", b: str = "real_ir") -> list[tuple[np.ndarray, np.ndarray]]:
    """Positionally matched (domain a, domain b) image pairs, ordered by pair id."""
    sub = manifest.select(split=split)
    by_pair: dict[int, dict[str, DatasetItem]] = {}
    for item in sub.items:
        if item.pair_id is not None:
            by_pair.setdefault(item.pair_id, {})[item.domain] = item
    pairs = []
    for pid in sorted(by_pair):
        entry = by_pair[pid]
        if a in entry and b in entry:
            pairs.append((read_png(sub.resolve(entry[a].image)), read_png(sub.resolve(entry[b].image))))
    return pairs
