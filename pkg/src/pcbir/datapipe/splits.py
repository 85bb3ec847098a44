"""Seeded train/val/test assignment and generated:real mixing."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .manifest import DatasetItem, DatasetManifest, MixRatio

log = logging.getLogger(__name__)


class PoolExhausted(ValueError):
    pass


def parse_split_ratio(ratio: str | tuple) -> tuple[int, int, int]:
    if isinstance(ratio, str):
        try:
            parts = tuple(int(v) for v in ratio.split(":"))
        except ValueError:
            raise ValueError(f"split ratio must look like 'a:b:c', got {ratio!r}") from None
    else:
        parts = tuple(int(v) for v in ratio)
    if len(parts) != 3 or min(parts) < 0 or sum(parts) == 0:
        raise ValueError(f"split ratio needs three non-negative parts with a positive sum, got {ratio!r}")
    return parts  # type: ignore[return-value]


def split_counts(n: int, ratio: str | tuple) -> tuple[int, int, int]:
    """(train, val, test): val and test are floored, train takes the remainder."""
    a, b, c = parse_split_ratio(ratio)
    total = a + b + c
    n_val = n * b // total
    n_test = n * c // total
    return n - n_val - n_test, n_val, n_test


def _units(manifest: DatasetManifest) -> list[list[int]]:
    """Indices grouped so paired items stay together."""
    if manifest.items and all(it.pair_id is not None for it in manifest.items):
        groups: dict[int, list[int]] = {}
        for i, it in enumerate(manifest.items):
            groups.setdefault(it.pair_id, []).append(i)
        return [groups[k] for k in sorted(groups)]
    return [[i] for i in range(len(manifest.items))]


def split(manifest: DatasetManifest, ratio: str | tuple, seed: int) -> DatasetManifest:
    """Assign train/val/test by a seeded shuffle.

    When every item carries a ``pair_id`` the pairs are the units being
    split, so both halves of a pair always land in the same split.
    """
    if len(manifest) == 0:
        raise ValueError("cannot split an empty manifest")
    units = _units(manifest)
    n_train, n_val, n_test = split_counts(len(units), ratio)
    parts = parse_split_ratio(ratio)
    for name, part, count in zip(("train", "val", "test"), parts, (n_train, n_val, n_test)):
        if part > 0 and count == 0:
            log.warning("split %r is empty: %d units are too few for ratio %s", name, len(units), ratio)

    order = np.random.default_rng(seed).permutation(len(units))
    assignment = {}
    for rank, u in enumerate(order):
        label = "val" if rank < n_val else "test" if rank < n_val + n_test else "train"
        for i in units[u]:
            assignment[i] = label
    items = [replace(it, split=assignment[i]) for i, it in enumerate(manifest.items)]
    tag = ratio if isinstance(ratio, str) else ":".join(map(str, ratio))
    return manifest.with_items(items, split_ratio=tag, split_seed=seed,
                               split_counts={"train": n_train, "val": n_val, "test": n_test})


def mix(generated_pool: DatasetManifest, real_pool: DatasetManifest, ratio: MixRatio | str,
        total: int, seed: int) -> DatasetManifest:
    """Sample ``total`` items without replacement at the given generated:real ratio."""
    ratio = MixRatio.parse(ratio) if isinstance(ratio, str) else ratio
    n_gen, n_real = ratio.counts(total)
    for label, need, pool in (("generated", n_gen, generated_pool), ("real", n_real, real_pool)):
        if need > len(pool):
            raise PoolExhausted(f"{label} pool too small for ratio {ratio.tag} at total {total}: "
                                f"need {need}, have {len(pool)}")
    rng = np.random.default_rng(seed)
    gen_idx = np.sort(rng.choice(len(generated_pool), size=n_gen, replace=False))
    real_idx = np.sort(rng.choice(len(real_pool), size=n_real, replace=False))

    items: list[DatasetItem] = []
    for pool, idx in ((generated_pool, gen_idx), (real_pool, real_idx)):
        for i in idx:
            it = pool.items[int(i)]
            items.append(replace(
                it,
                image=str(pool.resolve(it.image)),
                label=str(pool.resolve(it.label)) if it.label else None,
                split="unassigned",
                pair_id=None,
            ))
    meta = {
        "name": f"mix_{ratio.generated_parts}_{ratio.real_parts}",
        "seed": int(seed),
        "ratio_tag": ratio.tag,
        "total": int(total),
        "counts": {"generated": n_gen, "real": n_real},
    }
    return DatasetManifest(items, meta, None)
