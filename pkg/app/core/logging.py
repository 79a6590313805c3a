import sys

from loguru import logger


def configure_logging(level: str = "INFO") -> None:
    """Install a single stderr sink for library logs."""
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | "
        "<cyan>{name}</cyan> - {message}",
    )
