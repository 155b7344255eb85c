import logging
import os
from datetime import datetime
from typing import Optional

APP_LOGGER_NAME = 'app'


def setup_logger(name: str, log_file: Optional[str] = None, level: int = logging.INFO) -> logging.Logger:
    """Set up a logger with the specified name, file, and level"""
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Check if logger already has handlers to prevent duplicates
    if logger.handlers:
        return logger

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)

        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def get_app_logger(log_dir: Optional[str] = None) -> logging.Logger:
    """Get the application logger

    File logging is enabled when a directory is passed or when the settings
    ask for it; otherwise only the console handler is attached.
    """
    from config.config import get_settings

    settings = get_settings()
    level = logging.getLevelName(settings.LOG_LEVEL.upper())
    if not isinstance(level, int):
        level = logging.INFO

    log_dir = log_dir or settings.log_file()
    log_file = None
    if log_dir:
        timestamp = datetime.now().strftime("%Y%m%d")
        log_file = os.path.join(log_dir, f"app_{timestamp}.log")

    return setup_logger(APP_LOGGER_NAME, log_file, level)


def set_verbosity(verbose: bool) -> None:
    """Switch the application logger and its handlers to DEBUG or back to the configured level"""
    from config.config import get_settings

    logger = get_app_logger()
    level = logging.getLevelName(get_settings().LOG_LEVEL.upper())
    if verbose or not isinstance(level, int):
        level = logging.DEBUG if verbose else logging.INFO
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
