"""Training configuration, loss weights, profiles and YAML config files."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
import logging
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .const import (
    ADV_MINIMAX,
    ADV_NON_SATURATING,
    DEFAULT_LAMBDA_ADV,
    DEFAULT_LAMBDA_L1,
    DEFAULT_LAMBDA_SSIM,
    DEFAULT_PREFETCH,
    PROFILE_DESK,
    PROFILE_LIBERO,
    PROFILE_METAWORLD,
    PROFILE_PAPER,
    PROFILE_TOY,
)
from .exceptions import ConfigError
from .model import ModelConfig

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the L1, SSIM and adversarial generator terms."""

    l1: float = DEFAULT_LAMBDA_L1
    ssim: float = DEFAULT_LAMBDA_SSIM
    adv: float = DEFAULT_LAMBDA_ADV

    def __post_init__(self) -> None:
        """Reject negative weights."""
        for key, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {key} must be >= 0, got {value}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule."""

    epochs: int = 2
    learning_rate: float = 5e-4
    batch_size: int = 4
    accumulation_steps: int = 1
    seed: int = 0
    checkpoint_every: int = 1
    max_steps: int | None = None
    adversarial_mode: str = ADV_NON_SATURATING
    d_steps_per_g_step: int = 1
    prefetch: int = DEFAULT_PREFETCH

    def __post_init__(self) -> None:
        """Check the schedule invariants."""
        for key in ("epochs", "batch_size", "accumulation_steps", "checkpoint_every"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.adversarial_mode not in (ADV_NON_SATURATING, ADV_MINIMAX):
            raise ConfigError(f"unknown adversarial_mode {self.adversarial_mode!r}")
        if self.d_steps_per_g_step < 1:
            raise ConfigError("d_steps_per_g_step must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass(frozen=True)
class RunConfig:
    """Everything train needs besides the dataset."""

    profile: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def as_dict(self) -> dict[str, Any]:
        """Return the fully resolved config."""
        return {
            "profile": self.profile,
            "model": self.model.as_dict(),
            "train": asdict(self.train),
            "loss": asdict(self.loss),
        }


_BENCHMARK_MODEL = ModelConfig(
    image_size=360, patch_size=12, embed_dim=512, depth=12, num_heads=8, mlp_ratio=4.0
)

PROFILES: dict[str, RunConfig] = {
    PROFILE_LIBERO: RunConfig(
        profile=PROFILE_LIBERO,
        model=_BENCHMARK_MODEL,
        train=TrainConfig(epochs=30, learning_rate=1e-4, batch_size=12, accumulation_steps=12),
    ),
    PROFILE_METAWORLD: RunConfig(
        profile=PROFILE_METAWORLD,
        model=replace(_BENCHMARK_MODEL, image_size=480, patch_size=16),
        train=TrainConfig(epochs=37, learning_rate=7e-4, batch_size=8, accumulation_steps=32),
    ),
    PROFILE_PAPER: RunConfig(
        profile=PROFILE_PAPER,
        model=_BENCHMARK_MODEL,
        train=TrainConfig(epochs=30, learning_rate=1e-4, batch_size=12, accumulation_steps=12),
    ),
    PROFILE_DESK: RunConfig(
        profile=PROFILE_DESK,
        model=ModelConfig(
            image_size=64, patch_size=8, embed_dim=128, depth=6, num_heads=4, mlp_ratio=2.0
        ),
        train=TrainConfig(epochs=2, learning_rate=5e-4, batch_size=4, accumulation_steps=1),
    ),
    PROFILE_TOY: RunConfig(
        profile=PROFILE_TOY,
        model=ModelConfig(
            image_size=32, patch_size=8, embed_dim=64, depth=2, num_heads=4, mlp_ratio=2.0
        ),
        train=TrainConfig(epochs=1, learning_rate=1e-3, batch_size=2, accumulation_steps=1),
    ),
}

_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0.0))

MODEL_SCHEMA = vol.Schema(
    {
        vol.Optional("image_size"): _POSITIVE_INT,
        vol.Optional("patch_size"): _POSITIVE_INT,
        vol.Optional("embed_dim"): _POSITIVE_INT,
        vol.Optional("depth"): _POSITIVE_INT,
        vol.Optional("num_heads"): _POSITIVE_INT,
        vol.Optional("mlp_ratio"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
        vol.Optional("disc_embed_dim"): vol.Any(None, _POSITIVE_INT),
        vol.Optional("disc_depth"): vol.Any(None, _POSITIVE_INT),
        vol.Optional("disc_heads"): vol.Any(None, _POSITIVE_INT),
        vol.Optional("global_residual"): vol.Boolean(),
        vol.Optional("rope_base"): vol.Coerce(float),
    },
    extra=vol.PREVENT_EXTRA,
)

TRAIN_SCHEMA = vol.Schema(
    {
        vol.Optional("epochs"): _POSITIVE_INT,
        vol.Optional("learning_rate"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
        vol.Optional("batch_size"): _POSITIVE_INT,
        vol.Optional("accumulation_steps"): _POSITIVE_INT,
        vol.Optional("seed"): vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)),
        vol.Optional("checkpoint_every"): _POSITIVE_INT,
        vol.Optional("max_steps"): vol.Any(None, _POSITIVE_INT),
        vol.Optional("adversarial_mode"): vol.In([ADV_NON_SATURATING, ADV_MINIMAX]),
        vol.Optional("d_steps_per_g_step"): _POSITIVE_INT,
        vol.Optional("prefetch"): vol.All(vol.Coerce(int), vol.Range(min=0)),
    },
    extra=vol.PREVENT_EXTRA,
)

LOSS_SCHEMA = vol.Schema(
    {
        vol.Optional("l1"): _NON_NEGATIVE,
        vol.Optional("ssim"): _NON_NEGATIVE,
        vol.Optional("adv"): _NON_NEGATIVE,
    },
    extra=vol.PREVENT_EXTRA,
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("profile"): vol.In(sorted(PROFILES)),
        vol.Optional("model", default={}): MODEL_SCHEMA,
        vol.Optional("train", default={}): TRAIN_SCHEMA,
        vol.Optional("loss", default={}): LOSS_SCHEMA,
    },
    extra=vol.PREVENT_EXTRA,
)


def get_profile(name: str) -> RunConfig:
    """Return a named profile.

    Raises:
        ConfigError: Unknown profile
    """
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def resolve_config(
    profile: str | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Merge validated overrides onto a profile (desk when none is named).

    overrides has the CONFIG_SCHEMA layout; a "profile" key there wins over
    the argument.
    """
    try:
        data = CONFIG_SCHEMA(dict(overrides or {}))
    except vol.Invalid as err:
        raise ConfigError(f"invalid config: {err}") from err
    name = data.get("profile") or profile or PROFILE_DESK
    base = get_profile(name)
    return RunConfig(
        profile=name,
        model=ModelConfig.from_dict({**base.model.as_dict(), **data["model"]}),
        train=replace(base.train, **data["train"]),
        loss=replace(base.loss, **data["loss"]),
    )


def load_config_file(path: str | Path, profile: str | None = None) -> RunConfig:
    """Read a YAML config file and resolve it.

    Raises:
        ConfigError: Unreadable file, invalid YAML or unknown keys
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err})") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from err
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    try:
        return resolve_config(profile, raw)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from err
