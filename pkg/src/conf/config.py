from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)
    output_dir: str = "results"
    # None selects the closed-form (infinite) sinc-train sums
    kmax: int | None = Field(default=None, ge=1)
    points_per_bin: int = Field(default=16, ge=1)
    mp_max_iters: int = Field(default=30, ge=1)
    mp_damping: float = Field(default=0.6, gt=0.0, le=1.0)
    mp_tolerance: float = 1e-4
    mp_max_taps: int = 16
    lmmse_max_dim: int = 4096
    gram_max_dim: int = 1024
    fracdelay_taps: int = 64
    kaiser_beta: float = 8.0
    api_max_bits: int = 200_000
    # random 4-QAM frames per calibrated phase table
    calibration_frames: int = Field(default=4, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="ODDM_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )


settings = Settings()
