"""Application and run configuration."""

import logging
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from cadrec.core.error_handler import ConfigError

logger = logging.getLogger(__name__)

AblationName = Literal["no_sa", "no_dis", "no_er", "no_ws", "no_pop", "no_indi"]
ABLATIONS: tuple[str, ...] = ("no_sa", "no_dis", "no_er", "no_ws", "no_pop", "no_indi")


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables."""

    log_level: str = Field(default="info", alias="CADREC_LOG")
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, alias="CADREC_THREADS")
    default_out_dir: str = Field(default="./runs", alias="CADREC_OUT")

    model_config = SettingsConfigDict(
        env_prefix="CADREC_",
        case_sensitive=False,
        env_file=".env",
        populate_by_name=True,
        extra="ignore",
    )


settings = Settings()


def _split_csv(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class ModelFields(BaseModel):
    """Hyperparameter fields shared by `HyperParams` and `RunConfig`."""

    d_m: int = Field(default=64, gt=0, description="Embedding dimension (even)")
    num_layers: int = Field(default=1, gt=0, description="Number of HGC layers z_l")
    num_heads: int = Field(default=1, gt=0, description="Number of attention heads z_h")
    delta: float = Field(default=0.1, ge=0.0, description="Scale of the attention perturbation")
    beta1: float = Field(default=0.4, ge=0.0, description="Popularity influence in training scores")
    beta2: float = Field(default=0.06, ge=0.0, description="Embedding regularization strength")
    lambda1: float = Field(default=0.46, ge=0.0, description="Loss weight of IA items")
    lambda2: float = Field(default=0.41, ge=0.0, description="Loss weight of FIA items")
    learning_rate: float = Field(default=1e-2, gt=0.0)
    attention_norm: Literal["row", "frobenius", "column"] = "row"
    integration: Literal["perturbation", "hgc_only", "sa_only", "weighted_add"] = "perturbation"
    regularizer: Literal["squared", "norm"] = "squared"
    optimizer: Literal["sgd", "momentum", "adam"] = "sgd"
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    use_popularity: bool = True
    use_individual_bias: bool = True
    pop_log_buckets: bool = False

    @field_validator("d_m")
    @classmethod
    def _even_dimension(cls, value: int) -> int:
        if value % 2:
            raise ValueError("d_m must be even for the popularity encoding")
        return value


class HyperParams(ModelFields):
    """Model hyperparameters consumed by the encoders, the HGC layer and the objective."""

    model_config = ConfigDict(frozen=True)

    def mixing_weights(self) -> tuple[float, float]:
        """Return (a, b) of the mixing matrix a·Â[S] + b·Norm(QKᵀ/√d_m)."""
        if self.integration == "hgc_only":
            return 1.0, 0.0
        if self.integration == "sa_only":
            return 0.0, 1.0
        if self.integration == "weighted_add":
            return 1.0 - self.delta, self.delta
        return 1.0, self.delta


def to_key_value_text(config: BaseModel) -> str:
    """Serialize a config as the flat `key = value` format read by the loaders."""
    lines = []
    for name, value in config.model_dump().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif name == "delimiter":
            value = {"\t": "tab", " ": "space"}.get(value, value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


class RunConfig(ModelFields):
    """Validated configuration of one train/eval/diagnose run."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    data_path: str | None = Field(default=None, description="Interaction file")
    delimiter: str = Field(default="\t", description="Column delimiter or 'whitespace'")
    columns: list[int] = Field(default=[0, 1, 2], description="user,item,timestamp positions")

    train_ratio: float = Field(default=0.7, gt=0.0, le=1.0)
    val_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    test_ratio: float = Field(default=0.2, ge=0.0, lt=1.0)
    min_interactions: int = Field(default=5, ge=1)
    max_seq_len: int = Field(default=200, ge=1)
    ia_fraction: float = Field(default=0.8, gt=0.0, le=1.0)

    batch_size: int = Field(default=1024, ge=1)
    epochs: int = Field(default=50, ge=1)
    patience: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    ablations: list[AblationName] = Field(default_factory=list)

    top_k: list[int] = Field(default=[5, 10, 20])
    sd_gap_k: list[int] = Field(default=[50, 100, 500, 1000])
    corr_users: int = Field(default=1000, ge=1)
    out_dir: str | None = None

    @field_validator("columns", "top_k", "sd_gap_k", "ablations", mode="before")
    @classmethod
    def _parse_lists(cls, value):
        return _split_csv(value)

    @field_validator("columns")
    @classmethod
    def _three_columns(cls, value: list[int]) -> list[int]:
        if len(value) != 3 or len(set(value)) != 3 or min(value) < 0:
            raise ValueError("columns must name three distinct non-negative positions")
        return value

    @field_validator("top_k", "sd_gap_k")
    @classmethod
    def _positive_ks(cls, value: list[int]) -> list[int]:
        if not value or min(value) < 1:
            raise ValueError("cutoffs must be positive")
        return sorted(set(value))

    @model_validator(mode="after")
    def _ratios_sum_to_one(self) -> "RunConfig":
        total = self.train_ratio + self.val_ratio + self.test_ratio
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1 (got {total})")
        return self

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def hyperparams(self) -> HyperParams:
        """Model hyperparameters after ablations are applied."""
        values = {name: getattr(self, name) for name in ModelFields.model_fields}
        if "no_sa" in self.ablations:
            values["delta"] = 0.0
            if values["integration"] == "sa_only":
                values["integration"] = "hgc_only"
        if "no_dis" in self.ablations:
            values["use_popularity"] = False
            values["use_individual_bias"] = False
        if "no_pop" in self.ablations:
            values["use_popularity"] = False
        if "no_indi" in self.ablations:
            values["use_individual_bias"] = False
        if "no_er" in self.ablations:
            values["beta2"] = 0.0
        if "no_ws" in self.ablations:
            values["lambda1"] = 1.0
            values["lambda2"] = 1.0
        return HyperParams(**values)

    def to_text(self) -> str:
        return to_key_value_text(self)


class SynthConfig(BaseModel):
    """Parameters of a synthetic corpus with planted popularity and individual biases."""

    model_config = ConfigDict(extra="forbid")

    num_users: int = Field(default=500, gt=0, description="M")
    num_items: int = Field(default=1000, gt=0, description="N")
    d_true: int = Field(default=8, gt=0, description="Latent dimension")
    alpha_pop: float = Field(default=1.0, ge=0.0, description="Zipf exponent of base popularity")
    sigma_indi: float = Field(default=0.0, ge=0.0, description="Scale of planted user offsets")
    events_per_user: int = Field(default=30, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _enough_items(self) -> "SynthConfig":
        if self.events_per_user > self.num_items:
            raise ValueError("events_per_user cannot exceed num_items")
        return self

    def to_text(self) -> str:
        return to_key_value_text(self)


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat `key = value` lines; `#` starts a comment."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'", field=line)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key", field="")
        values[key] = value
    return values


def _normalize_delimiter(values: dict) -> dict:
    delimiter = values.get("delimiter")
    if delimiter in ("tab", "\\t"):
        values["delimiter"] = "\t"
    elif delimiter == "space":
        values["delimiter"] = " "
    return values


def _build(model: type[BaseModel], values: dict):
    unknown = sorted(set(values) - set(model.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config key '{unknown[0]}'", field=unknown[0])
    try:
        return model(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first["loc"] else "<config>"
        raise ConfigError(f"Invalid value for '{field}': {first['msg']}", field=field) from e


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Load a RunConfig from a key-value file, then apply CLI overrides."""
    values: dict = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {config_path}", field="config")
        values.update(parse_key_values(config_path.read_text(), source=str(config_path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    config = _build(RunConfig, _normalize_delimiter(values))
    logger.debug(f"Resolved run config: {config.model_dump()}")
    return config


def load_synth_config(path: str | Path | None = None, overrides: dict | None = None) -> SynthConfig:
    """Load a SynthConfig the same way as `load_run_config`."""
    values: dict = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {config_path}", field="config")
        values.update(parse_key_values(config_path.read_text(), source=str(config_path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return _build(SynthConfig, values)
