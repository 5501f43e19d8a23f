# Configuration settings
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from .errors import ConfigError

CLASS_NAMES = ["planktic", "calcareous_benthic", "agglutinated_benthic", "sediment"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    plates: Path = Path("plates")
    data: Path = Path("data")
    out: Path = Path("runs")


class DetectionConfig(_Section):
    border_sigma: float = Field(2.0, gt=0)
    sigma: float = Field(1.0, gt=0)
    # "otsu" or a fixed threshold in [0, 1]
    threshold: Union[Literal["otsu"], float] = "otsu"
    connectivity: Literal[4, 8] = 8
    min_area: int = Field(1024, ge=1)
    # an Otsu split whose class means differ by less than this is treated as empty field
    min_contrast: float = Field(0.05, ge=0, le=1)
    # backbones consume 224x224 crops only
    crop_size: Literal[224] = 224

    @field_validator("threshold")
    @classmethod
    def _check_threshold(cls, v):
        if isinstance(v, float) and not 0.0 <= v <= 1.0:
            raise ValueError("fixed threshold must lie in [0, 1]")
        return v


class SplitConfig(_Section):
    train: float = Field(0.8, ge=0, le=1)
    val: float = Field(0.1, ge=0, le=1)
    test: float = Field(0.1, ge=0, le=1)

    @model_validator(mode="after")
    def _sum_to_one(self):
        if not math.isclose(self.train + self.val + self.test, 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")
        return self

    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


class AugmentSection(_Section):
    hflip: bool = True
    rot90: bool = True
    brightness_delta: float = Field(0.10, ge=0, le=1)
    contrast_delta: float = Field(0.10, ge=0, le=1)
    saturation_delta: float = Field(0.10, ge=0, le=1)
    hue_delta: float = Field(0.05, ge=0, le=1)


OptimizerName = Literal["adam", "sgd_momentum", "rmsprop", "adagrad"]


class TrainingConfig(_Section):
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-4, gt=0)
    optimizer: OptimizerName = "adam"
    max_epochs: int = Field(50, ge=0)
    patience: int = Field(3, ge=0)
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    hidden: list[int] = Field(default_factory=lambda: [512, 64])
    epoch_multiplicity: int = Field(4, ge=1)


class FinetuneConfig(_Section):
    backbone_lr: float = Field(1e-7, gt=0)
    lr_scale: float = Field(1.0, gt=0)
    head_lr: float = Field(1e-4, gt=0)
    max_epochs: int = Field(10, ge=0)
    patience: int = Field(3, ge=0)
    trainable_blocks: list[int] = Field(default_factory=lambda: [4, 5])


class PretrainConfig(_Section):
    lr: float = Field(1e-3, gt=0)
    max_epochs: int = Field(8, ge=0)
    patience: int = Field(2, ge=0)


class GridConfig(_Section):
    max_epochs: int = Field(5, ge=1)
    widths_first: list[int] = Field(default_factory=lambda: [256, 512, 1024])
    widths_second: list[int] = Field(default_factory=lambda: [32, 64, 128])
    dropout_rates: list[float] = Field(default_factory=lambda: [0.3, 0.5])
    optimizers: list[OptimizerName] = Field(
        default_factory=lambda: ["adam", "sgd_momentum", "rmsprop", "adagrad"]
    )


class BackboneConfig(_Section):
    kind: Literal["builtin_small", "pretrained_interchange"] = "builtin_small"
    model_path: Path | None = None
    layout: Literal["nchw", "nhwc"] = "nchw"
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _pretrained_needs_path(self):
        if self.kind == "pretrained_interchange" and self.model_path is None:
            raise ValueError("backbone.model_path is required for the pretrained_interchange kind")
        return self


class McConfig(_Section):
    passes: int = Field(100, ge=1)
    confidence: float = Field(0.7, ge=0, le=1)
    margin: float = Field(0.2, ge=0, le=1)
    hist_bins: int = Field(20, ge=1)


class SynthConfig(_Section):
    plates_per_class: int = Field(10, ge=0)
    blobs_per_plate: int = Field(60, ge=0)
    plate_height: int = Field(1400, ge=224)
    plate_width: int = Field(1800, ge=224)
    min_area: int = Field(1500, ge=1)
    max_area: int = Field(4000, ge=1)
    border_width: int = Field(12, ge=0)

    @model_validator(mode="after")
    def _area_order(self):
        if self.min_area > self.max_area:
            raise ValueError("synth.min_area must not exceed synth.max_area")
        return self


class RunConfig(_Section):
    seed: int = 0
    workers: int = Field(1, ge=1)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    mc: McConfig = Field(default_factory=McConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    class_names: list[str] = Field(default_factory=lambda: list(CLASS_NAMES))

    @field_validator("class_names")
    @classmethod
    def _four_classes(cls, v):
        if len(v) != 4 or len(set(v)) != 4:
            raise ValueError("class_names must list 4 distinct names")
        return v


def _offending_keys(exc: PydanticValidationError) -> list[str]:
    return [".".join(str(p) for p in err["loc"]) for err in exc.errors()]


def build_config(data: dict | None = None, **overrides) -> RunConfig:
    """Validate ``data`` (a parsed config tree) into a ``RunConfig``.

    ``overrides`` are dotted keys (``seed=3``, ``paths.out=...``) applied on top.
    """
    tree = dict(data or {})
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = tree
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(tree)
    except PydanticValidationError as exc:
        keys = _offending_keys(exc)
        raise ConfigError(f"invalid config; offending keys: {', '.join(keys)}", keys) from exc


def load_config(path: Path | None = None, **overrides) -> RunConfig:
    """Read a YAML config file (or defaults when ``path`` is None)."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}", ["--config"])
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}", ["--config"]) from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping at the top level", ["<root>"])
        data = loaded or {}
    return build_config(data, **overrides)


def dump_config(cfg: RunConfig) -> str:
    """Return the resolved config as YAML; loading it back reproduces ``cfg``."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
