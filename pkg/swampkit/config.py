"""Training hyperparameters and their JSON/YAML file form."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from omegaconf import OmegaConf
from omegaconf.errors import ConfigKeyError, OmegaConfBaseException, ValidationError

from .errors import ConfigError

_log = logging.getLogger(__name__)


class Assignment(str, Enum):
    soft = "soft"
    hard = "hard"


class InitMode(str, Enum):
    random = "random"
    warmstart = "warmstart"


class LossMode(str, Enum):
    contrastive_only = "contrastive_only"
    swamp_combined = "swamp_combined"
    swamp_only = "swamp_only"


class Mining(str, Enum):
    hardest = "hardest"
    sum = "sum"


_POSITIVE = ("num_classes", "tau", "eta", "lr", "batch_size", "epochs", "embed_dim", "hidden", "sk_max_iters", "sk_tol")


@dataclass
class TrainConfig:
    """Every knob of a training run. Defaults reproduce the synthetic benchmark setup."""

    seed: int = 0
    num_classes: int = 1000
    queue_capacity: int = 1280
    tau: float = 0.01
    eta: float = 20.0
    lam: float = 1.0
    margin: float = 0.1
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    embed_dim: int = 5
    hidden: int = 50
    assignment: Assignment = Assignment.soft
    init: InitMode = InitMode.random
    sk_max_iters: int = 100
    sk_tol: float = 1e-6
    sk_warm_start: bool = True
    loss_mode: LossMode = LossMode.swamp_combined
    mining: Mining = Mining.hardest
    train_subset: Optional[int] = None
    warn_small_queue: bool = True

    def __post_init__(self):
        for name, enum_cls in (
            ("assignment", Assignment),
            ("init", InitMode),
            ("loss_mode", LossMode),
            ("mining", Mining),
        ):
            value = getattr(self, name)
            try:
                setattr(self, name, enum_cls(value.value if isinstance(value, Enum) else value))
            except ValueError:
                allowed = ", ".join(m.value for m in enum_cls)
                raise ConfigError(f"{name}: '{value}' is not one of {allowed}") from None
        for name in _POSITIVE:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.queue_capacity < 0:
            raise ConfigError(f"queue_capacity must be >= 0, got {self.queue_capacity}")
        if self.queue_capacity and self.queue_capacity < self.batch_size:
            raise ConfigError(
                f"queue_capacity ({self.queue_capacity}) must be 0 or at least batch_size ({self.batch_size})"
            )
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.train_subset is not None and self.train_subset < self.batch_size:
            raise ConfigError(f"train_subset ({self.train_subset}) must hold at least one batch ({self.batch_size})")

    def to_dict(self) -> Dict[str, Any]:
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_updates(self, **changes) -> "TrainConfig":
        return train_config_from_dict({**self.to_dict(), **changes})


FIELD_NAMES = tuple(f.name for f in fields(TrainConfig))


def train_config_from_dict(values: Dict[str, Any]) -> TrainConfig:
    """Strict construction: unknown keys and ill-typed values raise :class:`ConfigError` naming the key."""
    unknown = sorted(set(values) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    schema = OmegaConf.structured(TrainConfig)
    try:
        merged = OmegaConf.merge(schema, values)
    except ConfigKeyError as e:
        raise ConfigError(f"unknown config key '{e.key}'") from e
    except ValidationError as e:
        raise ConfigError(f"invalid value for '{e.full_key}': {e.msg}") from e
    except OmegaConfBaseException as e:
        raise ConfigError(f"invalid config: {e}") from e
    return TrainConfig(**OmegaConf.to_container(merged, enum_to_str=True))


def load_train_config(path: Union[str, Path, None]) -> TrainConfig:
    """Read a flat JSON (or YAML) object; ``None`` gives the defaults."""
    if path is None:
        return TrainConfig()
    path = Path(path)
    try:
        raw = OmegaConf.load(path)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid JSON/YAML: {e}") from e
    if not OmegaConf.is_dict(raw):
        raise ConfigError(f"{path}: expected a flat object of TrainConfig fields")
    cfg = train_config_from_dict(OmegaConf.to_container(raw))
    _log.info(f"Loaded training config from {path}")
    return cfg


def save_train_config(cfg: TrainConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_json() + "\n")
    return path
