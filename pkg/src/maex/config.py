"""Run configuration: nested dataclasses, JSON files, ``key=value`` overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from maex.errors import ConfigError
from maex.fusion import VARIANTS
from maex.params import OptimizerConfig


@dataclass
class TextConfig:
    window: int = 3
    filters: int = 64
    dropout: float = 0.1
    token_dim: int = 64
    # None: train a randomly initialised table, keep a pretrained one frozen
    finetune_embeddings: bool | None = None
    embeddings_path: str | None = None

    @property
    def trains_embeddings(self):
        if self.finetune_embeddings is None:
            return self.embeddings_path is None
        return bool(self.finetune_embeddings)


@dataclass
class ImageConfig:
    # None: take the dimension from the corpus
    feature_dim: int | None = None
    dropout: float = 0.1


@dataclass
class FusionConfig:
    variant: str = "concat"


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 30
    patience: int = 3
    negatives: int = 1


@dataclass
class RunConfig:
    profile: str = "desk"
    embed_dim: int = 64
    seed: int = 0
    candidates: str = "all"  # or "attribute"
    text: TextConfig = field(default_factory=TextConfig)
    image: ImageConfig = field(default_factory=ImageConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.text.window < 1 or self.text.filters < 1 or self.text.token_dim < 1:
            raise ConfigError("text window, filters and token_dim must be >= 1")
        for name, rate in (("text.dropout", self.text.dropout), ("image.dropout", self.image.dropout)):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {rate}")
        if self.fusion.variant not in VARIANTS:
            raise ConfigError(f"fusion.variant must be one of {', '.join(VARIANTS)}, got {self.fusion.variant!r}")
        if self.candidates not in ("all", "attribute"):
            raise ConfigError(f"candidates must be 'all' or 'attribute', got {self.candidates!r}")
        if self.optimizer.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer.kind must be 'adam' or 'sgd', got {self.optimizer.kind!r}")
        if self.train.batch_size < 1 or self.train.epochs < 0 or self.train.negatives < 1:
            raise ConfigError("batch_size and negatives must be >= 1, epochs >= 0")
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    @property
    def uses_text(self):
        return self.fusion.variant in ("concat", "gmu", "text")

    @property
    def uses_image(self):
        return self.fusion.variant in ("concat", "gmu", "image")


PROFILES = {
    "desk": {"embed_dim": 64, "text.window": 3, "text.filters": 64, "text.token_dim": 64},
    "paper": {
        "embed_dim": 1024,
        "text.window": 5,
        "text.filters": 600,
        "text.token_dim": 300,
        "image.feature_dim": 4096,
    },
}


def _merge(obj, data, where=""):
    names = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where + key!r}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            _merge(cur, value, where + key + ".")
        else:
            setattr(obj, key, value)


def from_dict(data):
    cfg = RunConfig()
    profile = data.get("profile", "desk")
    apply_profile(cfg, profile)
    _merge(cfg, data)
    return cfg


def apply_profile(cfg, name):
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {', '.join(PROFILES)}")
    cfg.profile = name
    for key, value in PROFILES[name].items():
        set_value(cfg, key, value)
    return cfg


def _parse(text, annotation):
    """Read ``text`` as the type named by a field annotation such as ``"int | None"``."""
    name = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    kinds = [k.strip() for k in name.split("|")]
    if "None" in kinds and text.strip().lower() in ("none", "null"):
        return None
    if "bool" in kinds:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot read {text!r} as a boolean")
    if "int" in kinds:
        return int(text)
    if "float" in kinds:
        return float(text)
    return text


def set_value(cfg, dotted, value):
    *path, last = dotted.split(".")
    obj = cfg
    for part in path:
        if not hasattr(obj, part) or not is_dataclass(getattr(obj, part)):
            raise ConfigError(f"unknown config key {dotted!r}")
        obj = getattr(obj, part)
    types = {f.name: f.type for f in fields(obj)} if is_dataclass(obj) else {}
    if last not in types:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(value, str):
        try:
            value = _parse(value, types[last])
        except ValueError as exc:
            raise ConfigError(f"bad value for {dotted}: {exc}") from exc
    setattr(obj, last, value)
    return cfg


def apply_overrides(cfg, overrides):
    """Apply ``key=value`` strings, e.g. ``fusion.variant=gmu``."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        if key.strip() == "profile":
            apply_profile(cfg, value.strip())
        else:
            set_value(cfg, key.strip(), value)
    return cfg


def load_config(path=None, profile=None, overrides=()):
    """Profile defaults, then the file, then the overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if profile is not None:
        data = {**data, "profile": profile}
    cfg = from_dict(data)
    apply_overrides(cfg, overrides)
    return cfg.validate()


def save_config(cfg, path):
    Path(path).write_text(cfg.to_json() + "\n", encoding="utf-8")
