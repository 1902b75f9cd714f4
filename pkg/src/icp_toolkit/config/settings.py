"""Configuration settings for icp-toolkit."""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Application settings and configuration."""

    def __init__(self) -> None:
        """Initialize settings from environment variables."""
        report_dir = os.getenv("ICP_TOOLKIT_REPORT_DIR")
        self.report_dir: Optional[Path] = Path(report_dir) if report_dir else None
        self.log_level: str = os.getenv("ICP_TOOLKIT_LOG_LEVEL", "WARNING").upper()
        workers = os.getenv("ICP_TOOLKIT_WORKERS", "1")
        # 0 marks an unparsable value; validate() rejects it
        self.workers: int = int(workers) if workers.lstrip("-").isdigit() else 0

        # App settings
        self.app_name: str = "icp-toolkit"
        self.app_version: str = "0.1.0"
        self.debug: bool = os.getenv("DEBUG", "false").lower() == "true"

    @property
    def effective_log_level(self) -> int:
        if self.debug:
            return logging.DEBUG
        level = logging.getLevelName(self.log_level)
        return level if isinstance(level, int) else logging.WARNING

    def validate(self) -> bool:
        """Check the report directory, worker count and log level."""
        if self.report_dir is not None and self.report_dir.exists() and not self.report_dir.is_dir():
            return False
        if self.workers == 0 or self.workers < -1:
            return False
        return isinstance(logging.getLevelName(self.log_level), int)


# Global settings instance
settings = Settings()
