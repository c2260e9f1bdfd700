from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional
import logging
import sys
from pathlib import Path

import structlog


def setup_logging(level: str = "INFO", log_dir: Optional[str] = "logs"):
    """
    Configure logging for the application

    Args:
        level (str): Root log level name
        log_dir (str | None): Directory for app.log; console only when None
    """
    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    handlers = [logging.StreamHandler(sys.stdout)]
    if log_dir:
        # Create logs directory if it doesn't exist
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(log_dir) / "app.log"))

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=log_format,
        handlers=handlers,
        force=True,
    )

    # Route structlog events through the handlers above
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_log_level,
            structlog.processors.format_exc_info,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


"""
Application configuration using Pydantic BaseSettings
"""


class Settings(BaseSettings):
    """
    Application settings, read from OBJCODE_* environment variables or .env

    Attributes:
        APP_NAME (str): Name of the application
        DEBUG (bool): Debug mode flag
        API_V1_STR (str): API version prefix
        LOG_LEVEL (str): Root log level
        LOG_DIR (str): Directory of the log file
        CHECKPOINT_PATH (str | None): Checkpoint served by the HTTP service
        HOST (str): Service bind address
        PORT (int): Service port
        CORS_ORIGINS (list[str]): Origins allowed by the CORS middleware
    """
    model_config = SettingsConfigDict(env_prefix="OBJCODE_", env_file=".env", extra="ignore")

    APP_NAME: str = "py_objcode"
    DEBUG: bool = False
    API_V1_STR: str = "/api/v1"

    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"

    # Service settings
    CHECKPOINT_PATH: Optional[str] = None
    HOST: str = "127.0.0.1"
    PORT: int = 8000
    CORS_ORIGINS: list[str] = ["http://localhost:3000"]


settings = Settings()
