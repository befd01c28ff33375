"""
RunConfig: the JSON experiment document (system, model, train, eval sections).

Unknown keys are rejected and every cross-dimensional constraint is checked
at load; validation failures surface as ConfigurationError pointing at the
offending dotted key.
"""
import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import ConfigurationError
from src.logger import get_logger
from src.utils import sha256_of

logger = get_logger("validator")

METHODS = ("proposed", "digital_only", "one_shot")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemConfig(_Section):
    n_x: int = Field(3, ge=1)
    n_y: int = Field(3, ge=1)
    spacing_wavelengths: float = Field(0.5, gt=0)
    max_degree: int = Field(2, ge=0)
    n_subcarriers: int = Field(16, ge=1)
    subcarrier_spacing_hz: float = Field(960e3, gt=0)
    carrier_frequency_hz: float = Field(30e9, gt=0)
    n_paths: int = Field(2, ge=1)
    stages: int = Field(3, ge=1)
    substages: int = Field(4, ge=1)
    p_max: float = Field(1.0, gt=0)
    region_half_width: float = Field(30.0, gt=0)
    ap_height: float = Field(10.0, gt=0)
    snr_db: float = 10.0
    n_antennas: int | None = None
    basis_size: int | None = None

    @model_validator(mode="after")
    def _derived_dims(self):
        if self.n_antennas is not None and self.n_antennas != self.n_x * self.n_y:
            raise ValueError(f"n_antennas={self.n_antennas} but n_x*n_y={self.n_x * self.n_y}")
        if self.basis_size is not None and self.basis_size != (self.max_degree + 1) ** 2:
            raise ValueError(f"basis_size={self.basis_size} but (max_degree+1)^2={(self.max_degree + 1) ** 2}")
        return self

    @property
    def antennas(self) -> int:
        return self.n_x * self.n_y

    @property
    def basis(self) -> int:
        return (self.max_degree + 1) ** 2


class ModelConfig(_Section):
    d_model: int = Field(32, ge=1)
    heads: int = Field(2, ge=1)
    embed_dim: int = Field(64, ge=1)
    lstm_hidden: int = Field(64, ge=1)
    head_hidden: int = Field(64, ge=1)
    ff_hidden: int = Field(64, ge=1)

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self


class TrainConfig(_Section):
    method: Literal["proposed", "digital_only", "one_shot"] = "proposed"
    sample_count: int = Field(2200, ge=2)
    split: float = Field(2000 / 2200, gt=0, lt=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    epochs: int = Field(50, ge=1)
    stage_weights: list[float] | None = None
    grad_clip: float = Field(1.0, ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _weights_monotone(self):
        if self.stage_weights is not None:
            weights = self.stage_weights
            if any(b < 0 for b in weights):
                raise ValueError("stage_weights must be nonnegative")
            if any(b2 < b1 for b1, b2 in zip(weights, weights[1:])):
                raise ValueError("stage_weights must be nondecreasing")
            if sum(weights) <= 0:
                raise ValueError("stage_weights must not all be zero")
        return self


class EvalConfig(_Section):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    snr_list: list[float] = Field(default_factory=lambda: [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0])
    methods: list[Literal["proposed", "digital_only", "one_shot"]] = Field(
        default_factory=lambda: list(METHODS)
    )
    budget: int = Field(12, ge=1)
    allocations: list[tuple[int, int]] = Field(default_factory=lambda: [(1, 12), (2, 6), (3, 4), (4, 3)])
    beam_stages: int = Field(3, ge=1)
    beam_substages: int = Field(6, ge=1)
    beam_grid: tuple[int, int] = (32, 64)
    beam_average: bool = True
    beam_db: bool = False

    @model_validator(mode="after")
    def _allocations_divide_budget(self):
        for stages, per_stage in self.allocations:
            if stages < 1 or per_stage < 1 or stages * per_stage != self.budget:
                raise ValueError(f"allocation ({stages}, {per_stage}) does not match budget {self.budget}")
        if min(self.beam_grid) < 1:
            raise ValueError("beam_grid resolutions must be positive")
        return self


class RunConfig(_Section):
    system: SystemConfig = Field(default_factory=SystemConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _cross_constraints(self):
        s, m = self.system, self.model
        if not m.embed_dim < 2 * s.n_subcarriers * s.substages:
            raise ValueError(
                f"model.embed_dim={m.embed_dim} must be < 2*n_subcarriers*substages="
                f"{2 * s.n_subcarriers * s.substages}"
            )
        weights = self.train.stage_weights
        if weights is not None and len(weights) != s.stages:
            raise ValueError(f"train.stage_weights has {len(weights)} entries for {s.stages} stages")
        return self

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        return sha256_of(self.to_dict())

    def with_updates(self, section: str, **values) -> "RunConfig":
        """Copy with fields of one section replaced, re-validated."""
        document = self.to_dict()
        document[section].update(values)
        return validate_run_config(document)

    def for_method(self, method: str) -> "RunConfig":
        """Config of a compared method; one-shot spends the whole pilot budget in one stage."""
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
        document = self.to_dict()
        document["train"]["method"] = method
        if method == "one_shot":
            s = self.system
            document["system"]["substages"] = s.stages * s.substages
            document["system"]["stages"] = 1
            document["train"]["stage_weights"] = None
        return validate_run_config(document)

    def with_allocation(self, stages: int, substages: int) -> "RunConfig":
        document = self.to_dict()
        document["system"]["stages"] = stages
        document["system"]["substages"] = substages
        document["train"]["stage_weights"] = None
        return validate_run_config(document)


def _pointer(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def validate_run_config(document: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigurationError(f"{_pointer(first)}: {first.get('msg', 'invalid value')}") from exc


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: malformed JSON ({exc})") from exc
    config = validate_run_config(document)
    logger.info(f"Loaded run config {path} (hash {config.config_hash()[:12]})")
    return config


def save_run_config(config: RunConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
