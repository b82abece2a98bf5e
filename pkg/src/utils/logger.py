"""
Logging configuration for the Lmser experiments
"""
import logging
from pathlib import Path
from typing import Union


def setup_logging(level: Union[str, int] = "INFO", log_file: Union[str, Path] = "logs/lmser.log"):
    """Setup logging configuration"""
    log_file = Path(log_file)
    # Ensure logs directory exists
    log_file.parent.mkdir(parents=True, exist_ok=True)

    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True,
    )

    return logging.getLogger(__name__)
