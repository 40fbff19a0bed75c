# utils/log_utils.py

import os
import json
import logging
from typing import Dict, Any
from termcolor import colored
from logging.handlers import RotatingFileHandler

# Global flag for per-step record logging
DETAILED_STEP_LOGGING = False

LOG_MAX_BYTES = 1024 * 1024  # 1MB
LOG_BACKUP_COUNT = 5

__all__ = [
    'setup_logging',
    'toggle_detailed_step_logging',
    'log_step_record',
]


def toggle_detailed_step_logging(enable: bool = True):
    """Toggle per-step record logging on/off"""
    global DETAILED_STEP_LOGGING
    DETAILED_STEP_LOGGING = enable
    print(colored(f"Detailed step logging {'enabled' if enable else 'disabled'}", "yellow"))


def setup_logging(project_root: str, level: str = "INFO") -> str:
    """
    Route the root logger to logs/app.log (rotated by size) and warnings to the console.

    Runs once per process; later calls return the log path without touching handlers.
    """
    log_file = os.path.join(project_root, "logs", "app.log")
    if hasattr(setup_logging, '_initialized'):
        return setup_logging._initialized

    logs_dir = os.path.dirname(log_file)
    if not os.path.exists(logs_dir):
        print(colored(f"Creating logs directory at {logs_dir}", "yellow"))
        os.makedirs(logs_dir, exist_ok=True)

    # Remove any existing handlers from the root logger
    logging.root.handlers = []

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    try:
        file_handler = RotatingFileHandler(log_file, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUP_COUNT,
                                           encoding='utf-8')
        file_handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s:%(name)s:%(message)s'))
        root_logger.addHandler(file_handler)

        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.WARNING)
        console_handler.setFormatter(logging.Formatter('%(levelname)s:%(message)s'))
        root_logger.addHandler(console_handler)

        setup_logging._initialized = log_file
        logging.info("Logging system initialized")
        return log_file

    except Exception as e:
        print(colored(f"Error setting up file logging: {e}", "red"))
        raise


def log_step_record(record: Dict[str, Any]):
    """Log one training step record if detailed logging is enabled"""
    if not DETAILED_STEP_LOGGING or not record:
        return
    try:
        logging.info("STEP " + json.dumps(record, sort_keys=True, default=float))
    except Exception as e:
        logging.error(f"Error logging step record: {str(e)}")
