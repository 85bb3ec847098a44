"""Run configuration: one TOML file, strict keys, one global seed.

Sub-seeds come from ``derive_seed(global_seed, purpose)``, a stable hash,
so adding a new consumer of randomness never shifts existing streams.
A section may still pin its own ``seed`` explicitly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datapipe.manifest import MixRatio
from .datapipe.splits import parse_split_ratio
from .detector import DetectorConfig
from .evalkit import AP_MODES
from .translator import TranslatorConfig

SEED_ENV = "PCBIR_SEED"
DEFAULT_SWEEP_RATIOS = ("1:1", "3:2", "2:1", "4:1")


class ConfigError(ValueError):
    pass


def derive_seed(global_seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{int(global_seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class DataConfig:
    corpus: str = "runs/toy/manifest.json"
    out_dir: str = "runs/experiment"
    translator_checkpoint: str | None = None   # train one when unset
    generated: str | None = None               # translate the corpus when unset
    pool_split: str = "train"
    detector_split: str = "7:2:1"
    ratios: list[str] = field(default_factory=lambda: list(DEFAULT_SWEEP_RATIOS))
    total: int = 111
    test_split: str = "test"
    test_domain: str = "real_ir"

    def __post_init__(self):
        parse_split_ratio(self.detector_split)
        if not self.ratios:
            raise ConfigError("data.ratios must not be empty")
        for r in self.ratios:
            MixRatio.parse(r)
        if self.total < 1:
            raise ConfigError("data.total must be positive")


@dataclass
class EvalConfig:
    confidence_threshold: float = 0.25
    ap_mode: str = "101-point"

    def __post_init__(self):
        if self.ap_mode not in AP_MODES:
            raise ConfigError(f"eval.ap_mode must be one of {AP_MODES}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError("eval.confidence_threshold must lie in [0, 1]")


@dataclass
class RunConfig:
    seed: int = 0
    translator: TranslatorConfig = field(default_factory=TranslatorConfig)
    detector: DetectorConfig = field(default_factory=lambda: DetectorConfig(image_size=64))
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "translator": self.translator.to_dict(),
                "detector": self.detector.to_dict(), "data": dataclasses.asdict(self.data),
                "eval": dataclasses.asdict(self.eval)}

    def resolve_path(self, value: str | None) -> Path | None:
        """Relative paths in a config file are taken relative to that file."""
        if value is None:
            return None
        p = Path(value)
        if p.is_absolute() or self.source is None:
            return p
        return Path(self.source).parent / p


_SECTIONS = {"translator": TranslatorConfig, "detector": DetectorConfig,
             "data": DataConfig, "eval": EvalConfig}


def _build(cls, values: dict, section: str, extra: dict | None = None):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(known))}")
    try:
        return cls(**{**(extra or {}), **values})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(raw: dict[str, Any], source: str | None = None,
                     env: dict[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    top = set(raw) - set(_SECTIONS) - {"seed"}
    if top:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(top))}")
    seed = raw.get("seed", 0)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        extra = {}
        if "seed" in {f.name for f in dataclasses.fields(cls)}:
            extra["seed"] = derive_seed(seed, name)
        if name == "detector":
            extra["image_size"] = 64
        sections[name] = _build(cls, values, name, extra)
    return RunConfig(seed=seed, source=source, **sections)


def load_config(path: str | Path, env: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, str(path), env)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(config: RunConfig) -> str:
    """TOML text listing every key, including defaults; ``None`` values are commented out."""
    data = config.to_dict()
    lines = [f"seed = {config.seed}"]
    for section in _SECTIONS:
        lines += ["", f"[{section}]"]
        for key, value in data[section].items():
            lines.append(f"# {key} = (unset)" if value is None else f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"
