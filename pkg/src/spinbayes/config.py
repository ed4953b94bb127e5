"""JSON pipeline configuration with full-default fallback.

Every section is optional; missing keys take their defaults and unknown
keys are rejected. See the README for the schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .campaign import CampaignConfig
from .detector import DOMAINS
from .errors import ConfigurationError
from .network import Method, Sharing
from .training import DropoutConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    n_per_class: int = 500
    n_classes: int = 4
    dim: int = 32
    images: Optional[str] = None
    labels: Optional[str] = None
    binarize_threshold: float = 0.5
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigurationError(f"data.source must be 'synthetic' or 'idx', got {self.source!r}")
        if self.source == "idx" and not (self.images and self.labels):
            raise ConfigurationError("data.source 'idx' needs data.images and data.labels")


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64, 64)
    method: str = Method.SPINDROP.value
    p: float = 0.25
    sharing: str = Sharing.PER_COLUMN.value
    group_size: int = 4
    scale_gamma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        try:
            Method(self.method)
            Sharing(self.sharing)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e

    def dropout(self) -> DropoutConfig:
        return DropoutConfig(self.method, self.p, self.sharing, self.group_size, self.scale_gamma)


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    eval_T: int = 20

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum, seed)


@dataclass(frozen=True)
class AtpgConfig:
    N: int = 100
    R: int = 200
    T: int = 20
    pool_size: Optional[int] = None
    R_fit: int = 20
    profile_domain: str = "log"

    def __post_init__(self):
        if self.profile_domain not in DOMAINS:
            raise ConfigurationError(f"atpg.profile_domain must be one of {DOMAINS}")


@dataclass(frozen=True)
class CheckConfig:
    L: int = 4
    T: int = 20


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainSection,
    "atpg": AtpgConfig,
    "check": CheckConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    atpg: AtpgConfig = field(default_factory=AtpgConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    check: CheckConfig = field(default_factory=CheckConfig)

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        camp = self.campaign.to_dict()
        camp.pop("seed")
        out["campaign"] = camp
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        allowed = {"seed", "campaign", *SECTIONS}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        kw: dict = {}
        if "seed" in d:
            kw["seed"] = _seed(d["seed"])
        for name, typ in SECTIONS.items():
            if name in d:
                kw[name] = _section(typ, d[name], name)
        if "campaign" in d:
            camp = dict(d["campaign"])
            if "seed" in camp:
                raise ConfigurationError("campaign.seed is derived from the top-level seed")
            kw["campaign"] = CampaignConfig.from_dict(camp)
        return cls(**kw)

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        return self if seed is None else replace(self, seed=_seed(seed))

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _seed(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {v!r}")
    return v


def _section(typ, d, name):
    if not isinstance(d, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(typ)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return typ(**d)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"bad {name!r} section: {e}") from e


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a config file; ``None`` gives the all-defaults config."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {p} is not valid JSON: {e}") from e
    return PipelineConfig.from_dict(d)
