"""Run configuration: one JSON file with a section per component, plus command-line overrides.

Resolution order for the file is an explicit path, then ``WOUNDFORMER_CONFIG`` (environment
or ``.env``), then built-in defaults. Overrides take the form ``--section.key=value``; the
value is parsed as JSON when it parses, otherwise it is used as a string.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.data.augment import AugmentConfig
from src.data.dataset import SIZE_MULTIPLE, ClassPalette, PaletteMode
from src.decoder.spatial import DecoderConfig
from src.encoder.mit import EncoderConfig
from src.errors import ConfigError
from src.metrics.dice import AbsentPolicy
from src.objectives.losses import LossConfig
from src.segmentation.model import ModelConfig

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "WOUNDFORMER_CONFIG"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, gt=0, description="Initial Adam learning rate")
    batch_size: int = Field(8, ge=1)
    input_size: int = Field(224, ge=SIZE_MULTIPLE, description="Square training resolution")
    max_epochs: int = Field(200, ge=1)
    plateau_factor: float = Field(0.1, gt=0, lt=1)
    plateau_patience: int = Field(5, ge=1)
    plateau_threshold: float = Field(1e-4, ge=0, description="Absolute improvement needed to reset counters")
    early_stop_patience: int = Field(15, ge=1)
    seed: int = Field(0, description="Seeds initialisation, shuffling and augmentation")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    palette: PaletteMode = Field("six_tissue", description="Class set of the dataset")
    train_manifest: Optional[str] = Field(None, description="image<TAB>mask manifest of the training split")
    val_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    synthetic_samples: int = Field(64, ge=1, description="Generated samples when no manifest is set")
    synthetic_size: int = Field(64, ge=SIZE_MULTIPLE)
    synthetic_seed: int = 0
    synthetic_style: Literal["standard", "boundary"] = "standard"
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def build_palette(self) -> ClassPalette:
        return ClassPalette.from_mode(self.palette)


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    absent_class_policy: AbsentPolicy = Field("exclude", description="How a class absent from both masks scores")
    include_background: Optional[bool] = Field(None, description="Average Background too; defaults per palette")
    eval_workers: int = Field(1, ge=1, description="Threads for validation inference")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        palette = self.data.build_palette()
        if palette.num_classes != self.decoder.num_classes:
            raise ValueError(
                f"palette {self.data.palette} has {palette.num_classes} classes but decoder.num_classes is {self.decoder.num_classes}"
            )
        if self.train.input_size % SIZE_MULTIPLE:
            raise ValueError(f"train.input_size must be a multiple of {SIZE_MULTIPLE}, got {self.train.input_size}")
        if self.loss.class_weights is not None and len(self.loss.class_weights) != self.decoder.num_classes:
            raise ValueError(f"loss.class_weights needs {self.decoder.num_classes} entries")
        return self

    @classmethod
    def micro(cls, seed: int = 0) -> "RunConfig":
        """Desk-scale profile: micro encoder, decoder width 32, 64x64 input, batch 4"""
        return cls(
            decoder=DecoderConfig(unified_channels=32),
            model=ModelConfig(allmlp_embed_dim=32),
            train=TrainConfig(batch_size=4, input_size=64, seed=seed),
            data=DataConfig(synthetic_size=64),
        )


def parse_overrides(args: Sequence[str]) -> Dict[str, Dict[str, Any]]:
    """Turn ``--section.key=value`` flags into a nested update.

    Raises:
        ConfigError: On a flag that is not of that form or names an unknown section or key
    """
    updates: Dict[str, Dict[str, Any]] = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg or "." not in arg.split("=", 1)[0]:
            raise ConfigError(f"expected an override of the form --section.key=value, got {arg!r}")
        dotted, raw = arg[2:].split("=", 1)
        section, key = dotted.split(".", 1)
        fields = RunConfig.model_fields
        if section not in fields:
            raise ConfigError(f"unknown config section {section!r} in {arg!r}")
        if key not in fields[section].annotation.model_fields:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        updates.setdefault(section, {})[key] = value
    return updates


def _merge(base: Dict[str, Any], updates: Dict[str, Dict[str, Any]]) -> Dict[str, Any]:
    merged = dict(base)
    for section, values in updates.items():
        merged[section] = {**merged.get(section, {}), **values}
    return merged


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read, override and validate the run configuration.

    Raises:
        ConfigError: If the file is missing or not JSON, an override is unknown, or validation fails
    """
    load_dotenv()
    source = path or os.getenv(CONFIG_ENV_VAR)
    raw: Dict[str, Any] = {}
    if source:
        source = Path(source)
        if not source.exists():
            raise ConfigError(f"config file not found: {source}")
        try:
            raw = json.loads(source.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {source} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {source} must hold a JSON object")
        logger.info(f"Loaded run config from {source}")
    else:
        logger.info("No run config given; using built-in defaults")

    merged = _merge(raw, parse_overrides(overrides))
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {_describe(exc)}")


def _describe(exc: ValidationError) -> str:
    messages: List[str] = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        messages.append(f"{location}: {error['msg']}")
    return "; ".join(messages)
