"""Procedural stand-in for paired visible / infrared perforated-board images.

Each board is a regular grid of drilled, copper-ringed holes. A few holes
are missing; those are the labelled defects. The visible image shows the
board with nuisance colour and lighting; the infrared image is a smooth
warm field where present holes read slightly cooler and every missing hole
is a Gaussian thermal spot. A few unlabelled glare spots, which have no
visible counterpart, stand in for lamp reflections and warm parts. Both
images of a pair share the same labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import quantize, write_png
from .labels import BoundingBox, write_labels
from .manifest import DatasetItem, DatasetManifest
from .splits import split as assign_splits


@dataclass(frozen=True)
class ToyStyle:
    grid: int = 8
    ring_radius: float = 0.35       # in units of the hole pitch
    hole_radius: float = 0.16
    box_fraction: float = 0.75      # label side length in units of pitch
    min_defects: int = 1
    max_defects: int = 3
    spot_sigma: float = 0.2         # in units of pitch
    spot_amplitude: float = 0.45
    polarity: float = 1.0           # +1 hot spot, -1 cold spot
    hole_contrast: float = 0.12
    max_glare: int = 2              # unlabelled IR-only warm spots per image
    glare_sigma: float = 0.25       # in units of pitch
    glare_amplitude: tuple[float, float] = (0.3, 0.5)


@dataclass
class ToyCorpus:
    visible: list[tuple[np.ndarray, list[BoundingBox]]]
    ir: list[tuple[np.ndarray, list[BoundingBox]]]
    pairs: list[tuple[int, int]]
    defect_sites: list[list[tuple[int, int]]]
    image_size: int
    seed: int
    style: ToyStyle = field(default_factory=ToyStyle)


def _site_centers(size: int, grid: int) -> np.ndarray:
    pitch = size / grid
    return (np.arange(grid) + 0.5) * pitch


def render_pair(index: int, image_size: int, seed: int, style: ToyStyle = ToyStyle()):
    """Render pair ``index``; randomness comes from the (seed, index) stream."""
    rng = np.random.default_rng([seed, index])
    size, g = image_size, style.grid
    pitch = size / g
    n_defects = int(rng.integers(style.min_defects, style.max_defects + 1))
    flat = rng.choice(g * g, size=n_defects, replace=False)
    sites = sorted((int(k // g), int(k % g)) for k in flat)  # (row, col)
    missing = np.zeros((g, g), dtype=bool)
    for r, c in sites:
        missing[r, c] = True

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) + 0.5
    centers = _site_centers(size, g)
    # distance to the nearest site centre, and which site that is
    col = np.clip((xx // pitch).astype(int), 0, g - 1)
    row = np.clip((yy // pitch).astype(int), 0, g - 1)
    dist = np.hypot(xx - centers[col], yy - centers[row]) / pitch
    present = ~missing[row, col]

    # visible: board colour, lighting gradient, sensor noise, copper rings
    base = np.array([0.12, 0.42, 0.22]) + rng.uniform(-0.05, 0.05, size=3)
    gx, gy = rng.uniform(-0.1, 0.1, size=2)
    light = 1.0 + gx * (xx / size - 0.5) + gy * (yy / size - 0.5)
    vis = base[None, None, :] * light[..., None]
    copper = np.array([0.82, 0.62, 0.30]) + rng.uniform(-0.05, 0.05, size=3)
    ring = present & (dist <= style.ring_radius)
    hole = present & (dist <= style.hole_radius)
    vis[ring] = copper * light[ring][:, None]
    vis[hole] = 0.05
    vis = vis + rng.normal(0.0, 0.015, size=vis.shape)

    # infrared: smooth warm field, cooler holes, thermal spots at missing holes
    t0 = 0.30 + rng.uniform(-0.04, 0.04)
    fx, fy = rng.uniform(0.5, 1.5, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    field_ = 0.04 * np.cos(2 * np.pi * fx * xx / size + phase[0]) * np.cos(2 * np.pi * fy * yy / size + phase[1])
    ir = t0 + field_
    ir = ir - style.hole_contrast * (present & (dist <= style.ring_radius * 0.8))
    spot = np.exp(-0.5 * (dist / style.spot_sigma) ** 2) * (~present)
    ir = ir + style.polarity * style.spot_amplitude * spot
    # glare: reflections and warm parts that the visible image cannot predict
    for _ in range(int(rng.integers(0, style.max_glare + 1))):
        gx0, gy0 = rng.uniform(0, size, size=2)
        amp = rng.uniform(*style.glare_amplitude)
        ir = ir + style.polarity * amp * np.exp(-0.5 * (np.hypot(xx - gx0, yy - gy0) / (style.glare_sigma * pitch)) ** 2)
    ir = ir + rng.normal(0.0, 0.01, size=ir.shape)

    side = style.box_fraction * pitch / size
    boxes = [BoundingBox(0, float(centers[c] / size), float(centers[r] / size), side, side) for r, c in sites]
    return quantize(vis), quantize(ir[..., None]), boxes, sites


def synth_toy_corpus(n_pairs: int, image_size: int = 64, seed: int = 0,
                     style: ToyStyle = ToyStyle()) -> ToyCorpus:
    if n_pairs < 2:
        raise ValueError("toy corpus needs at least 2 pairs")
    if image_size % style.grid:
        raise ValueError(f"image_size must be a multiple of the hole grid ({style.grid})")
    visible, ir, sites = [], [], []
    for i in range(n_pairs):
        v, t, boxes, s = render_pair(i, image_size, seed, style)
        visible.append((v, boxes))
        ir.append((t, list(boxes)))
        sites.append(s)
    return ToyCorpus(visible, ir, [(i, i) for i in range(n_pairs)], sites, image_size, seed, style)


def write_toy_corpus(corpus: ToyCorpus, out_dir: str | Path, split_ratio: str | None = "8:1:1",
                     split_seed: int | None = None, name: str = "toy") -> DatasetManifest:
    """Write images, labels and ``manifest.json`` under ``out_dir``.

    Pairs are split as units; files land in ``images/<split>/`` and
    ``labels/<split>/`` with ``vis_`` and ``ir_`` prefixes.
    """
    out_dir = Path(out_dir)
    items = []
    for pid, ((vis, boxes), (ir, _)) in enumerate(zip(corpus.visible, corpus.ir)):
        for prefix, domain in (("vis", "visible"), ("ir", "real_ir")):
            stem = f"{prefix}_{pid:04d}"
            items.append(DatasetItem(f"images/unassigned/{stem}.png", f"labels/unassigned/{stem}.txt",
                                     domain, "unassigned", pid))
    meta = {"name": name, "seed": int(corpus.seed), "image_size": corpus.image_size,
            "n_pairs": len(corpus.pairs), "notes": ["procedural toy corpus"]}
    manifest = DatasetManifest(items, meta, out_dir)
    if split_ratio:
        manifest = assign_splits(manifest, split_ratio, corpus.seed if split_seed is None else split_seed)
    placed = []
    for item in manifest.items:
        placed.append(DatasetItem(item.image.replace("/unassigned/", f"/{item.split}/"),
                                  item.label.replace("/unassigned/", f"/{item.split}/"),
                                  item.domain, item.split, item.pair_id))
    manifest = manifest.with_items(placed)
    for item in manifest.items:
        image, boxes = (corpus.visible if item.domain == "visible" else corpus.ir)[item.pair_id]
        write_png(image, manifest.resolve(item.image))
        write_labels(boxes, manifest.resolve(item.label))
    manifest.save(out_dir / "manifest.json")
    return manifest
