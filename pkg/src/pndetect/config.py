"""Pipeline configuration: a YAML file merged onto defaults, then flag overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .market_events import DEFAULT_SIGMA_MULTIPLIER, DEFAULT_SLOPE_THRESHOLD


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    posts: str | None = None
    comments: str | None = None
    ohlcv_dir: str | None = None
    sector_map: str | None = None
    listings: str | None = None
    workdir: str = "work"
    # word lists; None uses the bundled files
    stopwords: str | None = None
    contractions: str | None = None
    lemmas: str | None = None
    agreement_empath: str | None = None
    agreement_custom: str | None = None


@dataclass
class MarketConfig:
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD
    sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER


@dataclass
class FeatureConfig:
    min_count: int = 1
    weighting: str = "count"


@dataclass
class ModelConfig:
    kind: str = "mlp"
    hidden_sizes: list[int] = field(default_factory=lambda: [64])


@dataclass
class TrainSettings:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    l2: float = 1e-5
    optimizer: str = "adam"
    balance_classes: bool = True


@dataclass
class EvalConfig:
    k: int = 5
    seed: int = 0
    docs: str = "all"


@dataclass
class ExplainConfig:
    samples: int = 200
    background_size: int = 100
    instances: int = 50
    top_n: int = 30
    seed: int = 0
    output: str = "probability"


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    threads: int = 1
    base_dir: str = field(default=".", repr=False)

    def validate(self) -> None:
        if not self.market.slope_threshold > 0:
            raise ConfigError("market.slope_threshold must be > 0")
        if not self.market.sigma_multiplier > 0:
            raise ConfigError("market.sigma_multiplier must be > 0")
        if self.model.kind not in ("mlp", "logreg"):
            raise ConfigError("model.kind must be 'mlp' or 'logreg'")
        if self.model.kind == "mlp" and not self.model.hidden_sizes:
            raise ConfigError("model.hidden_sizes must name at least one layer for an MLP")
        if self.features.weighting not in ("count", "tfidf"):
            raise ConfigError("features.weighting must be 'count' or 'tfidf'")
        if self.features.min_count < 1:
            raise ConfigError("features.min_count must be >= 1")
        if self.eval.docs not in ("posts", "all"):
            raise ConfigError("eval.docs must be 'posts' or 'all'")
        if self.eval.k < 2:
            raise ConfigError("eval.k must be >= 2")
        if self.explain.output not in ("probability", "logit"):
            raise ConfigError("explain.output must be 'probability' or 'logit'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def workdir(self) -> Path:
        return self.path("workdir")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _merge(obj, data: dict, where: str) -> None:
    names = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in names or key == "base_dir":
            raise ConfigError(f"unknown config key {where}{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where}{key} must be a mapping")
            _merge(current, value, f"{where}{key}.")
        else:
            setattr(obj, key, value)


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the YAML file at ``path``, then dotted-key ``overrides``.

    Relative paths inside the file resolve against the file's directory.
    """
    cfg = PipelineConfig()
    if path is not None:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
        _merge(cfg, data, "")
        cfg.base_dir = str(path.parent)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        target = cfg
        for p in parents:
            target = getattr(target, p)
        setattr(target, leaf, value)
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
