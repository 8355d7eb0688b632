import json
import os
import typing as ty

from pydantic import Field, field_validator, model_validator

from sfcnn.base import BaseModel
from sfcnn.errors import ConfigError
from sfcnn.ingest import slot_levels
from sfcnn.model.architecture import Architecture
from sfcnn.train import TrainConfig, Variant  # noqa: F401

THREADS_ENV = "SFCNN_THREADS"
FULL_SCALE_MAPS = [128, 128, 128]
FULL_SCALE_DENSE = 1024


def threads_from_env() -> int:
    """Thread cap from SFCNN_THREADS (default 1)."""
    value = os.getenv(THREADS_ENV)
    if value is None or value == "":
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


class DataConfig(BaseModel):
    # fmt: off
    T: int = Field(default=84, ge=1, description="Data Frame length in days.")
    horizon: int = Field(default=7, ge=1, description="Days summed into the regression target.")
    stride: int = Field(default=1, ge=1, description="Days between consecutive training end points.")
    include_supplier: bool = Field(default=False, description="Add the supplier slot to every Data Frame.")
    forecast_start: ty.Optional[ty.Union[int, str]] = Field(default=None, description="Last day any training target may reach (day index or YYYY-MM-DD); default: num_days - horizon - 1.")
    test_start: ty.Optional[ty.Union[int, str]] = Field(default=None, description="First target day used by evaluation; default: forecast_start + 1, so evaluation targets never overlap training targets.")
    # fmt: on

    @property
    def num_slots(self) -> int:
        return len(slot_levels(self.include_supplier))


class ArchConfig(BaseModel):
    # fmt: off
    filter_sizes: ty.List[int] = Field(default=[7, 4, 3], description="Filter length per order.")
    pool_sizes: ty.List[int] = Field(default=[7, 4, 3], description="Max-pooling length per order.")
    maps: ty.List[int] = Field(default=[8, 8, 8], description="Feature maps per order.")
    dense_dim: int = Field(default=64, description="Extracted feature vector size.")
    dropout: float = Field(default=0.2, description="Dropout rate on the flattened vector.")
    # fmt: on

    def to_architecture(self, num_slots: int, d: int, T: int) -> Architecture:
        return Architecture(
            num_slots=num_slots,
            d=d,
            T=T,
            filter_sizes=self.filter_sizes,
            pool_sizes=self.pool_sizes,
            maps=self.maps,
            dense_dim=self.dense_dim,
            dropout_rate=self.dropout,
        )


class PathsConfig(BaseModel):
    # fmt: off
    logs: ty.Optional[str] = Field(default=None, description="logs.csv path.")
    items: ty.Optional[str] = Field(default=None, description="items.csv path.")
    model: ty.Optional[str] = Field(default=None, description="Model file or directory of model files.")
    outputs: str = Field(default="outputs", description="Directory receiving every artifact of the run.")
    # fmt: on


class RunConfig(BaseModel):
    """Effective configuration of one CLI run."""

    data: DataConfig = Field(default=DataConfig(), description="Data Frame and sampling settings.")
    arch: ArchConfig = Field(default=ArchConfig(), description="Network hyperparameters.")
    train: TrainConfig = Field(default=TrainConfig(), description="Optimization settings.")
    paths: PathsConfig = Field(default=PathsConfig(), description="Input and output locations.")

    @model_validator(mode="after")
    def validate_shape_chain(self) -> "RunConfig":
        # Stage lengths do not depend on d, so one indicator row is enough here
        self.architecture(d=1)
        return self

    def architecture(self, d: int) -> Architecture:
        return self.arch.to_architecture(self.data.num_slots, d, self.data.T)

    @classmethod
    def from_sources(
        cls,
        config_path: ty.Optional[str] = None,
        overrides: ty.Optional[ty.Dict[str, ty.Any]] = None,
        full_scale: bool = False,
    ) -> "RunConfig":
        """
        JSON config file, then `--full_scale`, then flag overrides.

        Override keys are `section.field` or a bare field name that exists in
         exactly one section; None values are ignored.
        """
        data: ty.Dict[str, dict] = {}
        if config_path is not None:
            try:
                with open(config_path, encoding="utf-8") as fd:
                    data = json.load(fd)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"Can not read config {config_path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"Config {config_path} must hold a JSON object")
        if full_scale:
            data.setdefault("arch", {})
            data["arch"]["maps"] = list(FULL_SCALE_MAPS)
            data["arch"]["dense_dim"] = FULL_SCALE_DENSE
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, name = _resolve_key(key)
            data.setdefault(section, {})[name] = value
        return cls(**data)


_SECTIONS = {
    "data": DataConfig,
    "arch": ArchConfig,
    "train": TrainConfig,
    "paths": PathsConfig,
}


def _resolve_key(key: str) -> ty.Tuple[str, str]:
    key = key.replace("-", "_")
    if "." in key:
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in _SECTIONS[section].model_fields:
            raise ConfigError(f"Unknown config key: {key}")
        return section, name
    matches = [section for section, model in _SECTIONS.items() if key in model.model_fields]
    if len(matches) != 1:
        raise ConfigError(
            f"Unknown config key: {key}" if not matches else f"Ambiguous config key: {key}"
        )
    return matches[0], key


class MethodMetrics(BaseModel):
    regions: ty.Dict[str, float] = Field(description="Test MSE per region.")
    average: float = Field(description="Unweighted mean of the per-region MSEs.")


class Metrics(BaseModel):
    methods: ty.Dict[str, MethodMetrics] = Field(default={}, description="Metrics per method.")

    @field_validator("methods")
    @classmethod
    def validate_methods(cls, value):
        for name in value:
            if not name:
                raise ValueError("Method names must be non-empty")
        return value
