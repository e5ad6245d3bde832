"""
Run configuration.

A single JSON file holds every knob of an experiment. Models are pydantic v2 with explicit
defaults; validation problems are gathered into one ConfigError listing all of them.
"""

import json
import os
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .utils.file_utils import atomic_write_text

# Thresholds (percent of total attribution mass) used for IoU and spread curves
DEFAULT_THRESHOLDS = [1, 2, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 98]

# Reference setting for full-scale runs; desk-scale default is much shorter
REFERENCE_CONTEXT_WORDS = 640


def _ascending(values: List[float], name: str) -> List[float]:
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly ascending")
    if values[0] <= 0 or values[-1] > 100:
        raise ValueError(f"{name} must lie in (0, 100]")
    return values


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelConfig(_Strict):
    """Toy causal LM architecture."""
    family: Literal["transformer", "ssm"] = "transformer"
    n_layers: int = Field(6, ge=3)
    hidden_size: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    vocab_size: int = Field(512, ge=64)
    max_positions: int = Field(256, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _heads_divide_hidden(self):
        if self.family == "transformer" and self.hidden_size % self.n_heads != 0:
            raise ValueError(
                f"hidden_size ({self.hidden_size}) must be divisible by n_heads ({self.n_heads})"
            )
        return self


class TrainingConfig(_Strict):
    """Adam-style optimizer settings; all recorded in the run manifest."""
    steps: int = Field(2000, ge=0)
    learning_rate: float = Field(3e-3, gt=0)
    batch_size: int = Field(8, ge=1)
    seq_len: int = Field(32, ge=2)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    grad_clip: float = Field(1.0, gt=0)
    eval_interval: int = Field(100, ge=1)
    eval_windows: int = Field(16, ge=1)


class PipelineConfig(_Strict):
    """Stimulus, attribution and analysis parameters."""
    context_words: int = Field(64, ge=1)
    delays: int = Field(4, ge=1)
    tr_duration_s: float = Field(2.0, gt=0)
    word_duration_s: float = Field(0.5, gt=0)
    method: Literal["gxi", "ig"] = "gxi"
    ig_steps: int = Field(20, ge=1)
    ig_rule: Literal["right", "trapezoid"] = "right"
    layers: Union[Literal["auto"], List[int]] = "auto"
    thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    bin_width: int = Field(16, ge=1)
    com_mode: Literal["top", "all"] = "top"
    com_threshold: float = Field(60, gt=0, le=100)
    distance_origin: Literal[0, 1] = 0
    signed: bool = False
    positional_thresholds: List[float] = Field(default_factory=lambda: [10, 60])
    feature_thresholds: List[float] = Field(default_factory=lambda: [10, 60, 80])
    masking_thresholds: List[float] = Field(default_factory=lambda: [1, 5, 10])
    masking_seeds: int = Field(5, ge=1)
    random_baseline_draws: int = Field(100, ge=1)
    max_attribution_trs: Optional[int] = Field(None, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)

    @field_validator("thresholds", "positional_thresholds", "feature_thresholds",
                     "masking_thresholds")
    @classmethod
    def _check_thresholds(cls, value, info):
        return _ascending(value, info.field_name)

    @field_validator("layers")
    @classmethod
    def _check_layers(cls, value):
        if value != "auto":
            if not value:
                raise ValueError("layers must be 'auto' or a non-empty list of layer ids")
            if any(layer < 0 for layer in value):
                raise ValueError("layer ids must be non-negative")
        return value


class FoldConfig(_Strict):
    """Nested cross-validation layout for the encoding model."""
    outer_folds: int = Field(4, ge=2)
    inner_folds: int = Field(3, ge=2)
    lambda_grid: List[float] = Field(
        default_factory=lambda: [float(v) for v in np.logspace(-3, 6, 10)]
    )

    @field_validator("lambda_grid")
    @classmethod
    def _check_grid(cls, value):
        if not value:
            raise ValueError("lambda_grid must not be empty")
        if any(v < 0 for v in value):
            raise ValueError("lambda_grid values must be >= 0")
        return value


class SyntheticConfig(_Strict):
    """Synthetic corpus and brain-response generator."""
    n_words: int = Field(480, ge=1)
    n_runs: int = Field(2, ge=1)
    n_voxels: int = Field(16, ge=1)
    n_subjects: int = Field(2, ge=1)
    noise_std: float = Field(0.5, ge=0)
    planted: bool = False
    n_semantic: int = Field(8, ge=1)
    n_syntactic: int = Field(6, ge=1)
    n_discourse: int = Field(4, ge=1)
    seed: int = 0


class PathsConfig(_Strict):
    """Artifact locations. Relative paths resolve against the config file's directory."""
    corpus: str = "data/corpus.jsonl"
    responses: str = "data/responses"
    checkpoint: str = "artifacts/model.npz"
    output_dir: str = "artifacts"


class RunConfig(_Strict):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    folds: FoldConfig = Field(default_factory=FoldConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    seed: int = 0
    jobs: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _cross_checks(self):
        problems = []
        if self.pipeline.layers != "auto":
            bad = [layer for layer in self.pipeline.layers if layer >= self.model.n_layers]
            if bad:
                problems.append(f"layers {bad} exceed n_layers={self.model.n_layers}")
        if self.pipeline.context_words > self.model.max_positions:
            problems.append(
                f"context_words ({self.pipeline.context_words}) exceeds "
                f"max_positions ({self.model.max_positions})"
            )
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def words_per_tr(self) -> float:
        return self.pipeline.tr_duration_s / self.pipeline.word_duration_s


def _violations(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{location}: {item['msg']}")
    return messages


def validate_config(payload: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a plain dict, raising ConfigError with every violation."""
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(_violations(e))


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path: str) -> RunConfig:
    """Load and validate a JSON config file."""
    if not os.path.isfile(path):
        raise ConfigError([f"config file not found: {path}"])
    try:
        with open(path, "r") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError([f"config file is not valid JSON: {e}"])
    return validate_config(payload)


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def save_config(config: RunConfig, path: str) -> None:
    atomic_write_text(path, json.dumps(config_to_dict(config), indent=2) + "\n")


def apply_overrides(
    config: RunConfig,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    method: Optional[str] = None,
    layers: Optional[str] = None,
    thresholds: Optional[str] = None
) -> RunConfig:
    """Apply CLI flag overrides and re-validate.

    Args:
        config: Base configuration
        seed: Replaces the run, model and synthetic seeds
        jobs: Worker cap
        method: gxi or ig
        layers: "auto" or comma-separated layer ids
        thresholds: Comma-separated ascending percentages

    Returns:
        New validated RunConfig
    """
    payload = config_to_dict(config)
    problems = []
    if seed is not None:
        payload["seed"] = seed
        payload["model"]["seed"] = seed
        payload["synthetic"]["seed"] = seed
    if jobs is not None:
        payload["jobs"] = jobs
    if method is not None:
        payload["pipeline"]["method"] = method
    if layers is not None:
        if layers.strip() == "auto":
            payload["pipeline"]["layers"] = "auto"
        else:
            try:
                payload["pipeline"]["layers"] = [int(v) for v in layers.split(",") if v.strip()]
            except ValueError:
                problems.append(f"--layers: expected 'auto' or integers, got {layers!r}")
    if thresholds is not None:
        try:
            payload["pipeline"]["thresholds"] = [float(v) for v in thresholds.split(",") if v.strip()]
        except ValueError:
            problems.append(f"--thresholds: expected numbers, got {thresholds!r}")
    if problems:
        raise ConfigError(problems)
    return validate_config(payload)


def resolve_path(config_path: Optional[str], path: str) -> str:
    """Resolve a configured path relative to the config file location."""
    if os.path.isabs(path) or not config_path:
        return path
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), path)
