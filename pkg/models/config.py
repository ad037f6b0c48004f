"""
Run configuration.

A run config is a TOML file whose tables match the sections below; every
section rejects unknown keys. Flags given on the command line win over the file.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    rows: int = Field(default=8, ge=2)
    cols: int = Field(default=8, ge=2)
    n_trips: int = Field(default=800, ge=10)
    mean_trip_segments: float = Field(default=90.0, gt=0)
    min_trip_segments: int = Field(default=10, ge=1)
    max_trip_segments: int = Field(default=220, ge=1)
    seed: int = 42


class WalkConfig(_Section):
    dim: int = Field(default=32, ge=1)
    walk_length: int = Field(default=20, ge=1)
    walks_per_node: int = Field(default=10, ge=1)
    context_size: int = Field(default=10, ge=1)
    p: float = Field(default=1.0, gt=0)
    q: float = Field(default=1.0, gt=0)
    negatives_per_positive: int = Field(default=1, ge=1)
    epochs: int = Field(default=5, ge=1)
    learning_rate: float = Field(default=0.025, gt=0)
    seed: int = 42


class ModelConfig(_Section):
    window: int = Field(default=1, ge=0)
    embedding_dim: int = 32
    profile_len: int = Field(default=60, ge=2)
    ffn_hidden: int = Field(default=32, ge=1)
    decoder: Literal["physics", "linear"] = "physics"
    elevation_mode: Literal["grade", "literal"] = "grade"
    gravity: float = 9.81
    air_density: float = 1.225
    init_speed: float = Field(default=10.0, gt=0)  # m/s, initial softplus output
    seed: int = 42


class TrainConfig(_Section):
    batch_size: int = Field(default=512, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    patience: int = Field(default=10, ge=1)
    max_epochs: int = Field(default=200, ge=1)
    seed: int = 42
    energy_label_fraction: float = Field(default=0.05, gt=0, le=1)
    subpath_len: int = Field(default=20, ge=1)
    subpath_step: int = Field(default=5, ge=1)


class LossWeights(_Section):
    energy: float = Field(default=0.2, ge=0)
    time: float = Field(default=0.8, ge=0)
    jerk: float = Field(default=1e-6, ge=0)
    huber_delta: float = Field(default=1.0, gt=0)


class ExperimentConfig(_Section):
    repeats: int = Field(default=10, ge=1)
    test_lengths: list[int] = Field(default_factory=lambda: [1, 10, 20, 50, 100, 200])
    methods: list[Literal["eco_pinn", "ci_encoder_fc", "nrel"]] = Field(
        default_factory=lambda: ["eco_pinn", "ci_encoder_fc", "nrel"]
    )
    sweep_jerk: list[float] = Field(default_factory=lambda: [0.0, 1e-7, 1e-6, 1e-5, 1e-4])
    sweep_energy_weight: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    sweep_window: list[int] = Field(default_factory=lambda: [0, 1, 2])
    workers: int = Field(default=1, ge=1)


class RunConfig(_Section):
    workdir: str = "runs"
    network_dir: Optional[str] = None
    trips_path: Optional[str] = None
    embeddings_path: Optional[str] = None
    checkpoint_dir: Optional[str] = None

    data: DataConfig = Field(default_factory=DataConfig)
    embedding: WalkConfig = Field(default_factory=WalkConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    @model_validator(mode="after")
    def _embedding_dims_agree(self):
        if self.model.embedding_dim != self.embedding.dim:
            raise ValueError(
                f"model.embedding_dim={self.model.embedding_dim} but embedding.dim={self.embedding.dim}"
            )
        return self


def _coerce(raw: str):
    """Parse a flag value with TOML rules, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` overrides onto a nested config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-table value")
        node[keys[-1]] = _coerce(raw.strip())
    return data


def load_config(path: Optional[str | Path] = None, overrides: Optional[list[str]] = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    apply_overrides(data, overrides or [])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
