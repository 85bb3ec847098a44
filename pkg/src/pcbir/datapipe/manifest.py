"""Dataset manifests: which images exist, their labels, domain and split."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

import jsonschema

MANIFEST_VERSION = 1
DOMAINS = ("visible", "real_ir", "pseudo_ir")
SPLITS = ("train", "val", "test", "unassigned")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    return json.loads(resources.files("pcbir.schemas").joinpath(name).read_text())


@dataclass(frozen=True)
class DatasetItem:
    image: str
    label: str | None
    domain: str
    split: str = "unassigned"
    pair_id: int | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.label is not None and Path(self.label).stem != Path(self.image).stem:
            raise ValueError(f"label stem {Path(self.label).stem!r} != image stem {Path(self.image).stem!r}")

    def to_dict(self) -> dict:
        out = {"image": self.image, "label": self.label, "domain": self.domain, "split": self.split}
        if self.pair_id is not None:
            out["pair_id"] = self.pair_id
        return out


@dataclass
class DatasetManifest:
    """Items plus free-form metadata. Item paths are relative to ``root``."""

    items: list[DatasetItem]
    metadata: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for item in self.items:
            if item.image in seen:
                raise ValueError(f"duplicate image path {item.image!r} in manifest")
            seen.add(item.image)
        self.metadata.setdefault("name", "dataset")
        self.metadata.setdefault("seed", 0)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def resolve(self, rel: str) -> Path:
        path = Path(rel)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path

    def select(self, domain: str | Iterable[str] | None = None,
               split: str | Iterable[str] | None = None) -> DatasetManifest:
        domains = {domain} if isinstance(domain, str) else set(domain or DOMAINS)
        splits = {split} if isinstance(split, str) else set(split or SPLITS)
        items = [it for it in self.items if it.domain in domains and it.split in splits]
        return DatasetManifest(items, dict(self.metadata), self.root)

    def counts(self, key: str = "split") -> dict[str, int]:
        out: dict[str, int] = {}
        for item in self.items:
            value = getattr(item, key)
            out[value] = out.get(value, 0) + 1
        return out

    def with_items(self, items: list[DatasetItem], **metadata) -> DatasetManifest:
        meta = dict(self.metadata)
        meta.update(metadata)
        return DatasetManifest(items, meta, self.root)

    def rebased(self, new_root: Path) -> DatasetManifest:
        """Rewrite item paths relative to ``new_root``."""
        new_root = Path(new_root).resolve()

        def rel(p: str | None) -> str | None:
            if p is None:
                return None
            return Path(os.path.relpath(self.resolve(p).resolve(), new_root)).as_posix()

        items = [replace(it, image=rel(it.image), label=rel(it.label)) for it in self.items]
        return DatasetManifest(items, dict(self.metadata), new_root)

    def to_dict(self) -> dict:
        return {"version": MANIFEST_VERSION, "items": [it.to_dict() for it in self.items],
                "metadata": self.metadata}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = self if self.root is not None and self.root.resolve() == path.parent.resolve() \
            else self.rebased(path.parent)
        data = manifest.to_dict()
        validate_manifest(data)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict, root: Path | None = None) -> DatasetManifest:
        validate_manifest(data)
        items = [DatasetItem(d["image"], d.get("label"), d["domain"], d["split"], d.get("pair_id"))
                 for d in data["items"]]
        return cls(items, dict(data["metadata"]), root)

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        return cls.from_dict(json.loads(path.read_text()), path.parent)


def validate_manifest(data: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``data`` breaks the manifest schema."""
    jsonschema.validate(data, load_schema("manifest.schema.json"))


@dataclass(frozen=True)
class MixRatio:
    generated_parts: int
    real_parts: int

    def __post_init__(self):
        if self.generated_parts < 0 or self.real_parts < 0:
            raise ValueError("ratio parts must be non-negative")
        if self.generated_parts == 0 and self.real_parts == 0:
            raise ValueError("ratio parts cannot both be zero")

    @classmethod
    def parse(cls, text: str) -> MixRatio:
        try:
            g, t = (int(v) for v in str(text).split(":"))
        except ValueError:
            raise ValueError(f"ratio must look like 'G:T', got {text!r}") from None
        return cls(g, t)

    @property
    def tag(self) -> str:
        return f"{self.generated_parts}:{self.real_parts}"

    def counts(self, total: int) -> tuple[int, int]:
        """(generated, real) with the generated share rounded half up."""
        parts = self.generated_parts + self.real_parts
        generated = (2 * total * self.generated_parts + parts) // (2 * parts)
        return generated, total - generated

    def __str__(self) -> str:
        return self.tag
