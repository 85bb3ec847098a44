"""Dataset mechanics: labels, manifests, tiling, splitting, mixing, augmentation, toy data."""

from .augment import (
    color_jitter,
    copy_paste,
    fliplr,
    letterbox,
    letterbox_item,
    mosaic,
    random_scale,
    resize_nearest,
    rotate90,
)
from .io import load_item, load_manifest_images, load_samples, paired_images, quantize, read_png, write_png
from .labels import BoundingBox, LabelFormatError, format_labels, parse_labels, read_labels, write_labels
from .manifest import DOMAINS, SPLITS, DatasetItem, DatasetManifest, MixRatio, validate_manifest
from .splits import PoolExhausted, mix, parse_split_ratio, split, split_counts
from .tiling import tile_crop
from .toy import ToyCorpus, ToyStyle, render_pair, synth_toy_corpus, write_toy_corpus

__all__ = [
    "BoundingBox", "DOMAINS", "DatasetItem", "DatasetManifest", "LabelFormatError", "MixRatio",
    "PoolExhausted", "SPLITS", "ToyCorpus", "ToyStyle", "color_jitter", "copy_paste", "fliplr",
    "format_labels", "letterbox", "letterbox_item", "load_item", "load_manifest_images",
    "load_samples", "mix", "mosaic", "paired_images", "parse_labels", "parse_split_ratio",
    "quantize", "random_scale", "read_labels", "read_png", "render_pair", "resize_nearest",
    "rotate90", "split", "split_counts", "synth_toy_corpus", "tile_crop", "validate_manifest",
    "write_labels", "write_png", "write_toy_corpus",
]
