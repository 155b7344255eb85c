import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
env_path = os.path.join(os.path.dirname(__file__), '.env')
load_dotenv(env_path)

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class Settings(BaseSettings):
    """Process-wide settings for the toolkit"""

    model_config = SettingsConfigDict(env_file=env_path, env_file_encoding="utf-8", extra="ignore")

    # Logging settings
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = os.path.join(PROJECT_ROOT, "logs")
    LOG_TO_FILE: bool = False

    # Reproducibility
    DEFAULT_SEED: int = 0

    # Scoring
    SCORING_THREADS: int = 1

    def validate_paths(self) -> None:
        """Ensure directories needed by the settings exist"""
        if self.LOG_TO_FILE:
            os.makedirs(self.LOG_DIR, exist_ok=True)

    def log_file(self) -> Optional[str]:
        if not self.LOG_TO_FILE:
            return None
        return self.LOG_DIR


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get the cached settings instance"""
    settings = Settings()
    settings.validate_paths()
    return settings
