from pydantic_settings import BaseSettings
from typing import Optional


class Settings(BaseSettings):
    """Engine settings"""

    # Application
    APP_NAME: str = "FeatUp"
    ENVIRONMENT: str = "development"

    # Kernel parallelism (defaults to hardware parallelism when unset)
    FEATUP_THREADS: Optional[int] = None
    JBU_CHANNEL_TILE: int = 256  # channels per fast-kernel block

    # Benchmarks
    BENCH_MAX_REFERENCE_MB: int = 4096  # skip unfold reference above this footprint

    # Transforms
    DEFAULT_IMAGE_SIZE: int = 224  # "Image Load Size"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
