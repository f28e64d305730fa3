"""
Configuration module for tetrasolve.
Environment-level defaults; run configs in config/*.ini override these per command.
"""

from functools import lru_cache
import logging
import os

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="TETRASOLVE_", case_sensitive=True)

    PROJECT_NAME: str = "tetrasolve"
    VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # Execution
    WORKERS: int = 1
    SEED: int = 0
    OUTPUT_DIR: str = os.path.join(".", "out")

    # Solver defaults (outer loop + batching)
    BATCH_SIZE: int = 16
    OUTER_TOL: float = 1e-8
    OUTER_MAX_ITER: int = 5000
    AGGREGATE_SIZE: int = 8
    RESIDUAL_STRIDE: int = 1


@lru_cache()
def get_settings() -> Settings:
    """Get settings instance"""
    try:
        logger.info("Loading settings...")
        settings = Settings()

        logger.info("Loaded settings:")
        for key, value in settings.model_dump().items():
            logger.info(f"{key}: {value}")

        return settings
    except Exception as e:
        logger.error(f"Failed to load settings: {str(e)}", exc_info=True)
        raise
