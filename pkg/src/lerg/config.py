"""Plain-text ``key = value`` pipeline configuration."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class DataConfig:
    path: str = ""
    format: str = "tsv_pairs"
    name: str = ""
    split: tuple = (0.8, 0.1, 0.1)  # train, test, valid
    negatives: int = 5
    seed: int = 0


@dataclass
class ModelConfig:
    c: int = 2000
    d: int = 128
    b: int = 16
    anchor_weight: float = 0.9
    num_layers: int = 4
    partition_eps: float = 0.1
    partition_labels: str = ""
    seed: int = 0


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    l2_lambda: float = 5e-4
    batch_size: int = 2048
    max_epochs: int = 100
    patience: int = 10
    lsq_grad_scale: bool = False
    seed: int = 0


@dataclass
class RewireConfig:
    retention_ratio: tuple = (0.7,)
    max_hops: int = 4
    boundary: float = 0.5
    placeholders: int = 500
    kmeans_iters: int = 100
    seed: int = 0


@dataclass
class FinetuneSection:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    l2_lambda: float = 5e-4
    batch_size: int = 2048
    max_epochs: int = 50
    patience: int = 5
    lsq_grad_scale: bool = False
    seed: int = 0


@dataclass
class EvalConfig:
    n: tuple = (10, 20)
    random_baseline_seed: int = 12345


PARSERS = {
    "split": _floats,
    "retention_ratio": _floats,
    "n": _ints,
    "lsq_grad_scale": _bool,
}


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    rewire: RewireConfig = field(default_factory=RewireConfig)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str = field(default="", compare=False)

    SECTIONS = ("data", "model", "train", "rewire", "finetune", "eval")

    def override_seed(self, seed: int) -> None:
        for name in self.SECTIONS:
            sec = getattr(self, name)
            if hasattr(sec, "seed"):
                sec.seed = seed

    def as_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=list).encode()
        return hashlib.blake2b(blob, digest_size=16).hexdigest()


def parse_config(text: str, base_dir: Path | None = None) -> Config:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = Config()
    for section in cp.sections():
        if section not in Config.SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        known = {f.name: f for f in fields(target)}
        for key, raw in cp.items(section):
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            default = getattr(target, key)
            try:
                if key in PARSERS:
                    value = PARSERS[key](raw)
                elif isinstance(default, bool):
                    value = _bool(raw)
                else:
                    value = type(default)(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
            setattr(target, key, value)
    if base_dir is not None:
        for attr in ("path",):
            p = getattr(cfg.data, attr)
            if p and not Path(p).is_absolute():
                setattr(cfg.data, attr, str((base_dir / p).resolve()))
        lab = cfg.model.partition_labels
        if lab and not Path(lab).is_absolute():
            cfg.model.partition_labels = str((base_dir / lab).resolve())
    if not cfg.data.name and cfg.data.path:
        cfg.data.name = Path(cfg.data.path).stem
    cfg.source = text
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
