"""
Configuration Module for SMELL

Holds the TrainConfig data contract and resolves it from layered sources:
model defaults, config/config.yaml, an optional user file (YAML or JSON),
SMELL_* environment variables and explicit CLI overrides.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : ConfigModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <TrainConfig>  → Frozen pydantic contract for every hyperparameter       │
  │  <ConfigLoader> → Loads YAML/JSON sections                                │
  │  <EnvOverlay>   → SMELL_* environment overrides (after .env loading)      │
  │  <Resolve>      → defaults < file < user file < env < flags               │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <yaml>        ← from library (Config parsing; JSON is valid YAML)        │
  │  <pydantic>    ← from library (Data contracts)                            │
  │  <dotenv>      ← from library (.env loading)                              │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : dict, float, int, bool, "config.yaml"

Production Rules:
  ConfigModule    → imports + <TrainConfig> + <ConfigLoader> + <EnvOverlay> + <Resolve>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

# Pattern: Strategy + Layered Configuration
# Purpose: Decouples hyperparameter values from the code that consumes them.

CONFIG_PATH = Path(__file__).parent.parent.parent / "config" / "config.yaml"
ENV_PREFIX = "SMELL_"


class TrainConfig(BaseModel):
    """Every calibration constant, architecture size, schedule and seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Loss calibration
    r_hc: float = Field(1.0, ge=0)
    r_d: float = Field(0.1, ge=0)
    r_r: float = Field(0.001, ge=0)
    epsilon: float = Field(0.001, gt=0)
    ce_clamp: float = Field(1e-7, gt=0, lt=0.5)

    # Markers
    k_pos: int = Field(3, ge=1)
    k_neg: int = Field(2, ge=1)
    marker_sample_pairs: int = Field(2048, ge=1)
    kmeans_max_iter: int = Field(50, ge=1)
    kmeans_tol: float = Field(1e-6, ge=0)
    # joint epochs between warm-started Lloyd refits of the markers; 0 disables
    marker_refresh_every: int = Field(10, ge=0)
    # largest L2 norm of one marker group's gradient per step; 0 disables
    marker_grad_clip: float = Field(1.0, ge=0)

    # Architecture m-512-512-2048-n
    latent_dim: int = Field(64, ge=1)
    hidden_dims: Tuple[int, ...] = (512, 512, 2048)
    init_weight_std: float = Field(0.01, ge=0)
    init_bias_mean: float = 0.5
    init_bias_std: float = Field(0.01, ge=0)

    # Optimizer and schedule
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)
    pretrain_epochs: int = Field(200, ge=0)
    joint_epochs: int = Field(500, ge=0)
    seed: int = 0

    # Ablations
    zero_r_r: bool = False
    zero_r_d: bool = False
    euclidean_eval: bool = False

    # Data pipeline and evaluation
    downsample_fraction: float = Field(1.0, gt=0, le=1)
    downsample_above: int = Field(0, ge=0)
    n_folds: int = Field(10, ge=2)
    knn_neighbors: int = Field(3, ge=1)
    export_pairs_per_group: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _warn_odd_batch(self) -> "TrainConfig":
        if self.batch_size % 2:
            logger.warning(
                "batch_size=%d is odd; batches will hold one more similar than dissimilar pair",
                self.batch_size,
            )
        return self

    @property
    def n_markers(self) -> int:
        return self.k_pos + self.k_neg

    def effective(self) -> "TrainConfig":
        """Returns the snapshot with ablation flags applied to r_r / r_d."""
        update: Dict[str, Any] = {}
        if self.zero_r_r and self.r_r != 0.0:
            update["r_r"] = 0.0
        if self.zero_r_d and self.r_d != 0.0:
            update["r_d"] = 0.0
        return self.model_copy(update=update) if update else self

    def for_fold(self, fold: int) -> "TrainConfig":
        """Per-fold snapshot; each fold run gets seed = base_seed + fold."""
        return self.model_copy(update={"seed": self.seed + fold})


def _read_document(path: Union[str, Path]) -> dict:
    """Loads a YAML or JSON mapping (yaml.safe_load accepts both)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return document


def load_settings(path: Union[str, Path] = CONFIG_PATH) -> dict:
    """Loads the full settings document (train / data / evaluation sections)."""
    if not Path(path).exists():
        logger.debug("no settings file at %s, using built-in defaults", path)
        return {}
    return _read_document(path)


def _train_section(document: Mapping[str, Any]) -> dict:
    # A user file may be either a bare field mapping or carry a `train:` section.
    section = document.get("train", document)
    return {k: v for k, v in section.items() if k in TrainConfig.model_fields}


def _env_overrides() -> dict:
    load_dotenv()
    overrides = {}
    for name in TrainConfig.model_fields:
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            overrides[name] = yaml.safe_load(raw)
    if overrides:
        logger.info("environment overrides: %s", sorted(overrides))
    return overrides


def load_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    use_env: bool = True,
    settings_path: Union[str, Path] = CONFIG_PATH,
) -> TrainConfig:
    """
    Resolves a TrainConfig. Later layers win:
    defaults < settings file < user file < SMELL_* env < overrides.
    Overrides whose value is None are ignored (unset CLI flags).
    """
    merged: Dict[str, Any] = _train_section(load_settings(settings_path))
    if config_path is not None:
        merged.update(_train_section(_read_document(config_path)))
    if use_env:
        merged.update(_env_overrides())
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
