"""
Configuration settings for the EV Charging Station Thermal Monitor
"""

import os
from pathlib import Path
from typing import Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from station_sim import EfficiencyMap, SessionDistributions, StationConfig
from thermal import ThermalMeans
from utils import PathLike, UsageError, digest_payload


class Settings(BaseSettings):
    """Process settings, read from the environment and .env"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="EVTHERMAL_",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "EV Charging Station Thermal Monitor"
    app_version: str = "1.0.0"

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Execution
    show_progress: bool = True
    n_jobs: int = Field(default=1, ge=1)
    run_root: str = "runs"  # parent of --out when omitted


# Environment-specific configurations
class DevelopmentSettings(Settings):
    """Development environment settings"""
    log_level: str = "DEBUG"


class ProductionSettings(Settings):
    """Production environment settings"""
    log_level: str = "WARNING"


class TestingSettings(Settings):
    """Testing environment settings"""
    show_progress: bool = False


def get_settings() -> Settings:
    """Get settings based on environment"""
    env = os.getenv("ENVIRONMENT", "development").lower()

    if env == "production":
        return ProductionSettings()
    elif env == "testing":
        return TestingSettings()
    else:
        return DevelopmentSettings()


class TrainingConfig(BaseModel):
    """Network shape and optimiser recipe shared by every ensemble member"""

    model_config = ConfigDict(extra="forbid")

    n_members: int = Field(default=10, ge=2)
    window: int = Field(default=125, ge=1)
    hidden_sizes: Tuple[int, ...] = (128, 64)
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    train_fraction: float = Field(default=0.8, gt=0, lt=1)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.window, *self.hidden_sizes, 1)


class DetectionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: float = Field(default=30.0, ge=0)
    fraction_rule: float = Field(default=0.2, ge=0, le=1)
    ema_alpha: float = Field(default=4e-3, gt=0, le=1)
    sma_window: int = Field(default=500, ge=1)
    s_floor: float = Field(default=1e-3, gt=0)  # °C
    hist_bin_width: float = Field(default=2.0, gt=0)
    ci_level: float = Field(default=0.99, gt=0, lt=1)
    data_threshold_percentile: float = Field(default=99.0, gt=0, le=100)


class RunConfig(BaseModel):
    """Everything that determines a run's outputs"""

    model_config = ConfigDict(extra="forbid")

    station: StationConfig = Field(default_factory=StationConfig)
    sessions: SessionDistributions = Field(default_factory=SessionDistributions)
    efficiency: EfficiencyMap = Field(default_factory=EfficiencyMap)
    thermal: ThermalMeans = Field(default_factory=ThermalMeans)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)

    def digest(self) -> str:
        return digest_payload(self.model_dump(mode="json"))


def load_run_config(path: Optional[PathLike] = None) -> RunConfig:
    """Load a YAML run config; no path means all defaults"""
    if path is None:
        return RunConfig()

    source = Path(path)
    try:
        raw = yaml.safe_load(source.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"Config file not found: {source}")
    except yaml.YAMLError as e:
        raise UsageError(f"Malformed YAML in {source}: {e}")

    try:
        return RunConfig.model_validate(raw or {})
    except ValidationError as e:
        raise UsageError(f"Invalid config {source}: {e}")


# Export the appropriate settings
settings = get_settings()
