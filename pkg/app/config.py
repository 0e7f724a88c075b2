from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="STICKYLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Configuration
    app_name: str = Field("Sticky Damping Lab")
    app_version: str = Field("1.0.0")

    # Logging Configuration
    log_level: str = Field("INFO")
    log_format: str = Field("console")

    # Output
    output_dir: Optional[str] = Field(None, description="Overrides every command's output directory")

    # Numerical defaults
    default_dt: float = Field(1e-3, gt=0)
    default_toll: float = Field(0.002, gt=0)
    default_output_stride: int = Field(10, ge=1)
    default_velocity_low: float = Field(-1.0)
    default_velocity_high: float = Field(1.0)
    default_seed: int = Field(0, ge=0)

    # Picard iteration
    picard_tol: float = Field(1e-8, gt=0)
    picard_max_iters: int = Field(200, ge=1)

    # Admissibility sampling
    validate_radius: float = Field(10.0, gt=0)
    validate_samples: int = Field(2001, ge=3)

    # Workers
    max_workers: int = Field(4, ge=1)

    @property
    def json_logs(self) -> bool:
        return self.log_format.lower() == "json"


# Global settings instance
settings = Settings()
