"""Run configuration: defaults, config-file loading, overrides, hashing.

Config files are flat ``key = value`` sections (configparser syntax).
Every key has a default, so an empty or missing file is a valid config.
The stable hash of the merged configuration is stamped into every output
artifact so results can be traced back to their settings.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace

from .cqt import CqtParams, SpecAugmentPolicy
from .errors import DataError, UsageError
from .model import ModelConfig
from .protocol import MIN_DURATION_S, OVERLAP_SECONDS, SEGMENT_SECONDS
from .train import TrainConfig

CACHE_ENV_VAR = "GSE_CACHE_DIR"


@dataclass(frozen=True)
class DataPaths:
    manifest: str = "corpus/manifest.csv"
    cache_dir: str = "cache"
    out_dir: str = "runs"


@dataclass(frozen=True)
class ProtocolConfig:
    segment_seconds: float = SEGMENT_SECONDS
    overlap_seconds: float = OVERLAP_SECONDS
    min_duration_s: float = MIN_DURATION_S
    # Open switch: whether segment-level protocols overlap segments.  The
    # default keeps the 15 s overlap everywhere, applied uniformly to the
    # temporal fifths as well.
    use_overlap: bool = True

    def effective_overlap(self):
        return self.overlap_seconds if self.use_overlap else 0.0


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    n_freq_masks: int = 2
    max_freq_rows: int = 20
    n_time_masks: int = 2
    max_time_cols: int = 40

    def policy(self):
        if not self.enabled:
            return None
        return SpecAugmentPolicy(self.n_freq_masks, self.max_freq_rows,
                                 self.n_time_masks, self.max_time_cols)


@dataclass(frozen=True)
class RunConfig:
    data: DataPaths = field(default_factory=DataPaths)
    cqt: CqtParams = field(default_factory=CqtParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def cache_dir(self):
        return os.environ.get(CACHE_ENV_VAR) or self.data.cache_dir


_SECTIONS = ("data", "cqt", "model", "train", "protocol", "augment")


def _coerce(current, raw, where):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            kind = type(current[0]) if current else float
            return tuple(kind(p) for p in parts)
        return raw
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from exc


def _apply(cfg, section, key, raw):
    if section not in _SECTIONS:
        raise DataError(f"unknown config section [{section}]")
    sub = getattr(cfg, section)
    names = {f.name for f in fields(sub)}
    if key not in names:
        raise DataError(f"unknown config key {section}.{key}")
    value = _coerce(getattr(sub, key), raw, f"{section}.{key}")
    return replace(cfg, **{section: replace(sub, **{key: value})})


def load_run_config(path=None, overrides=()):
    """Defaults, then the config file (if given), then ``section.key=value``
    override strings."""
    cfg = RunConfig()
    if path is not None:
        if not os.path.exists(path):
            raise DataError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise DataError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg = _apply(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(
                f"override {item!r} must look like section.key=value"
            )
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        cfg = _apply(cfg, section.strip(), key.strip(), raw)
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def config_items(cfg):
    """Canonical (section.key, value-string) pairs covering every field."""
    out = []
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in sorted(fields(sub), key=lambda f: f.name):
            value = getattr(sub, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append((f"{section}.{f.name}", str(value)))
    return out


def config_hash(cfg):
    """ 12-hex-digit digest of the canonical config listing."""
    text = "\n".join(f"{k}={v}" for k, v in config_items(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    for key, value in config_items(cfg):
        section, name = key.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
