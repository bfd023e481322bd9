"""Flat ``key = value`` run configuration and named model presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import ModelConfig
from .tokenizer import ConfigError, PatchConfig
from .trainer import TrainConfig

# 20 layers, 8 heads, hidden 512, MLP 2048 on 112x112 RGB; only P and S differ
PRESETS: dict[str, tuple[PatchConfig, ModelConfig]] = {
    f"vit-p{P}s8": (PatchConfig(W=112, C=3, P=P, S=8), ModelConfig(D=512, heads=8, depth=20, mlp_dim=2048))
    for P in (8, 10, 12)
}


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "synthetic"  # "synthetic" or a manifest CSV path
    identities: int = 8
    samples_per_identity: int = 32
    noise_sigma: float = 20.0
    max_shift: int = 1
    data_seed: int = 0


@dataclass
class RunConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"
    checkpoint_every_epoch: bool = False
    source: Path | None = None


_SECTIONS = {"patch": PatchConfig, "model": ModelConfig, "train": TrainConfig, "data": DataConfig}
_TOP = {"out_dir": str, "checkpoint_every_epoch": bool, "preset": str}


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if f.init}


def _key_owner() -> dict[str, str]:
    owner = {}
    for section, cls in _SECTIONS.items():
        for name in _fields(cls):
            owner[name] = section
    return owner


def _convert(key: str, raw: str, kind) -> object:
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    try:
        if kind in ("bool",):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int | None"):
            return None if raw.lower() in ("none", "auto", "") else int(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    owner = _key_owner()
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    top: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in _TOP:
            top[key] = _convert(key, raw, _TOP[key].__name__)
        elif key in owner:
            section = owner[key]
            values[section][key] = _convert(key, raw, _fields(_SECTIONS[section])[key].type)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    cfg = RunConfig()
    if "preset" in top:
        name = str(top["preset"])
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg.patch, cfg.model = PRESETS[name]
    try:
        cfg.patch = dataclasses.replace(cfg.patch, **values["patch"])
        cfg.model = dataclasses.replace(cfg.model, **values["model"])
        cfg.train = TrainConfig(**values["train"])
        cfg.data = DataConfig(**values["data"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.out_dir = str(top.get("out_dir", cfg.out_dir))
    cfg.checkpoint_every_epoch = bool(top.get("checkpoint_every_epoch", False))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config_text(text, str(path))
    cfg.source = path
    return cfg
