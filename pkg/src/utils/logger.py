import logging
from typing import Optional

DEFAULT_LOG_FILE = "paraformer.log"


def setup_logger(log_file: Optional[str] = DEFAULT_LOG_FILE, log_level=logging.INFO):
    """
    Set up and configure the logger for the application.

    Args:
        log_file: Path to the log file; None logs to the console only
        log_level: Logging level (e.g., logging.INFO, logging.DEBUG)

    Returns:
        Configured logger instance
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )

    logger = logging.getLogger('ParaFormer')
    logger.setLevel(log_level)
    return logger
