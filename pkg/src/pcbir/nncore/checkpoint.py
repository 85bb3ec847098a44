"""Parameter checkpoints: one zip archive, JSON header plus raw float32 payloads.

Layout::

    header.json            {"format_version", "step_index", "optimizer_state",
                            "tensors": {name: {"shape", "entry"}}, "meta"}
    tensors/000000.bin     little-endian float32, row-major

Entries carry a fixed timestamp and are stored uncompressed, so identical
parameters produce identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .layers import Parameter

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_FLOAT = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    step_index: int
    arrays: dict[str, np.ndarray]
    optimizer_state: bool = False
    meta: dict = field(default_factory=dict)

    def restore(self, params: Mapping[str, Parameter], strict: bool = True) -> None:
        """Copy stored values (and moments, if present) into ``params``."""
        missing = [name for name in params if name not in self.arrays]
        if missing and strict:
            raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in params.items():
            if name not in self.arrays:
                continue
            value = self.arrays[name]
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(np.float32).copy()
            if self.optimizer_state:
                p.first_moment = self.arrays[name + "#m"].astype(np.float32).copy()
                p.second_moment = self.arrays[name + "#v"].astype(np.float32).copy()


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path: str | Path, params: Mapping[str, Parameter], step_index: int = 0,
                    include_optimizer: bool = True, meta: dict | None = None,
                    extra_arrays: Mapping[str, np.ndarray] | None = None) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(params):
        p = params[name]
        arrays[name] = p.data
        if include_optimizer:
            arrays[name + "#m"] = p.first_moment
            arrays[name + "#v"] = p.second_moment
    for name, arr in sorted((extra_arrays or {}).items()):
        if name in arrays:
            raise CheckpointError(f"duplicate array name {name!r}")
        arrays[name] = np.asarray(arr)

    table = {}
    for i, (name, arr) in enumerate(arrays.items()):
        table[name] = {"shape": list(arr.shape), "entry": f"tensors/{i:06d}.bin"}
    header = {
        "format_version": FORMAT_VERSION,
        "step_index": int(step_index),
        "optimizer_state": bool(include_optimizer),
        "tensors": table,
        "meta": meta or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_entry("header.json"), json.dumps(header, indent=1, sort_keys=True))
        for name, arr in arrays.items():
            zf.writestr(_entry(table[name]["entry"]), np.ascontiguousarray(arr, dtype=_FLOAT).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')!r}")
        arrays = {}
        for name, info in header["tensors"].items():
            raw = np.frombuffer(zf.read(info["entry"]), dtype=_FLOAT)
            arrays[name] = raw.reshape(info["shape"]).copy()
    return Checkpoint(step_index=header["step_index"], arrays=arrays,
                      optimizer_state=header["optimizer_state"], meta=header.get("meta", {}))
