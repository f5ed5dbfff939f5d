import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path

from . import config

LOG_FORMAT = "%(asctime)s | %(name)s | %(levelname)s | %(message)s"


def setup_logging(log_dir: Path | None = None, verbose: bool = False) -> logging.Logger:
    logger = logging.getLogger("heatwave")

    # Guard against duplicate handlers on repeated calls
    if logger.handlers:
        if verbose:
            for handler in logger.handlers:
                if not isinstance(handler, RotatingFileHandler):
                    handler.setLevel(logging.INFO)
        return logger

    logger.setLevel(logging.DEBUG)

    # File handler: rotating, DEBUG level. Never inside an output directory.
    log_dir = Path(log_dir) if log_dir is not None else config.LOG_DIR
    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_dir / "heatwave.log",
            maxBytes=5 * 1024 * 1024,  # 5MB
            backupCount=3,
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)
    except OSError as exc:
        logger.warning("File logging disabled (%s): %s", log_dir, exc)

    # Console handler: WARNING level unless verbose
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO if verbose else logging.WARNING)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console_handler)

    return logger
