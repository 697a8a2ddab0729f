import logging

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class TncSettings(BaseSettings):
    """Process-wide defaults read from ``TNC_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="TNC_", extra="ignore")

    seed: int = 42
    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    # Suppress compiler chatter from numba's JIT
    logging.getLogger("numba").setLevel(logging.WARNING)
