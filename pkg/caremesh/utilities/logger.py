"""
Logging Utilities Module
=======================

Centralized diagnostic logging for caremesh:
- One named logger ('caremesh') with per-module children
- Optional rotating log files (info, error, debug) under Config.LOG_DIR
- Colored console output
- Structured JSON entries when context keywords are passed
- Startup phase timing and shutdown hooks for the daemon

Diagnostic logs are not the scenario event log. The event log
(caremesh.utilities.event_log) is deterministic and never carries wall-clock
time; entries here may.
"""
import os
import sys
import json
import time
import logging
import traceback
from logging.handlers import RotatingFileHandler
from datetime import datetime, timezone
from typing import Optional, Any, Dict, Callable

from caremesh.config.config import Config

# Global dictionaries to store daemon startup timings
_startup_phase_start_times: Dict[str, float] = {}
_startup_current_phase: Optional[str] = None

logs_dir = Config.LOG_DIR
log_level = Config.get_log_level()
log_format = Config.LOG_FORMAT

logger = logging.getLogger('caremesh')
logger.setLevel(log_level)
logger.propagate = True

# Clear any existing handlers to prevent duplicates on re-import
for _handler in logger.handlers[:]:
    logger.removeHandler(_handler)

formatter = logging.Formatter(log_format)

if Config.LOG_TO_FILE:
    os.makedirs(logs_dir, exist_ok=True)

    info_handler = RotatingFileHandler(os.path.join(logs_dir, 'info.log'),
                                       maxBytes=Config.LOG_MAX_SIZE, backupCount=Config.LOG_BACKUP_COUNT)
    info_handler.setLevel(logging.INFO)
    info_handler.setFormatter(formatter)
    logger.addHandler(info_handler)

    error_handler = RotatingFileHandler(os.path.join(logs_dir, 'error.log'),
                                        maxBytes=Config.LOG_MAX_SIZE, backupCount=Config.LOG_BACKUP_COUNT)
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(formatter)
    logger.addHandler(error_handler)

    if log_level <= logging.DEBUG:
        debug_handler = RotatingFileHandler(os.path.join(logs_dir, 'debug.log'),
                                            maxBytes=Config.LOG_MAX_SIZE, backupCount=Config.LOG_BACKUP_COUNT)
        debug_handler.setLevel(logging.DEBUG)
        debug_handler.setFormatter(formatter)
        logger.addHandler(debug_handler)


class ColoredFormatter(logging.Formatter):
    """
    Log formatter that colors the whole line by level for console output.
    """
    COLORS = {
        'DEBUG': '\033[94m',  # Blue
        'INFO': '\033[94m',   # Blue
        'WARNING': '\033[93m',  # Yellow
        'ERROR': '\033[91m',  # Red
        'CRITICAL': '\033[91m\033[1m'  # Bold Red
    }
    RESET = '\033[0m'

    def format(self, record):
        log_message = super().format(record)
        color = self.COLORS.get(record.levelname, self.RESET)
        return f"{color}{log_message}{self.RESET}"


# Console output goes to stderr so CLI stdout stays clean for piping
console_handler = logging.StreamHandler(sys.stderr)
console_handler.setLevel(log_level)
console_handler.setFormatter(ColoredFormatter(log_format) if sys.stderr.isatty() else formatter)
logger.addHandler(console_handler)

logger.debug(f"Logger initialized at level {logging.getLevelName(log_level)}")


def start_phase(phase_name: str) -> None:
    """
    Start timing a daemon startup phase.

    Args:
        phase_name: Name of the startup phase to begin timing
    """
    global _startup_current_phase
    _startup_current_phase = phase_name
    _startup_phase_start_times[phase_name] = time.time()
    logger.info(f"=== STARTING PHASE: {phase_name} ===")


def end_phase(phase_name: Optional[str] = None) -> None:
    """
    End timing a startup phase and log its duration.

    Args:
        phase_name: Name of the phase to end (defaults to the current phase)
    """
    if phase_name is None:
        phase_name = _startup_current_phase

    if phase_name in _startup_phase_start_times:
        duration = time.time() - _startup_phase_start_times[phase_name]
        logger.info(f"=== COMPLETED PHASE: {phase_name} in {duration:.2f}s ===")
    else:
        logger.warning(f"Attempted to end unknown phase: {phase_name}")


def structured_log(level: str, message: str, **kwargs) -> None:
    """
    Create a JSON log entry with additional context.

    Args:
        level: Log level ('debug', 'info', 'warning', 'error', 'critical')
        message: Main log message
        **kwargs: Additional context data to include
    """
    context = {
        'timestamp': datetime.now(timezone.utc).isoformat(),
        'message': message
    }
    if kwargs:
        context.update(kwargs)

    log_method = getattr(logger, level, logger.info)
    log_method(json.dumps(context, default=str, sort_keys=True))


# Dedicated functions for different log levels
def debug(message: str, **kwargs) -> None:
    """Log a debug message, structured when context is given."""
    if kwargs:
        structured_log('debug', message, **kwargs)
    else:
        logger.debug(message)


def info(message: str, **kwargs) -> None:
    """Log an info message, structured when context is given."""
    if kwargs:
        structured_log('info', message, **kwargs)
    else:
        logger.info(message)


def warning(message: str, **kwargs) -> None:
    """Log a warning message, structured when context is given."""
    if kwargs:
        structured_log('warning', message, **kwargs)
    else:
        logger.warning(message)


def error(message: str, **kwargs) -> None:
    """Log an error message, structured when context is given."""
    if kwargs:
        structured_log('error', message, **kwargs)
    else:
        logger.error(message)


def critical(message: str, **kwargs) -> None:
    """Log a critical message, structured when context is given."""
    if kwargs:
        structured_log('critical', message, **kwargs)
    else:
        logger.critical(message)


def log_config_summary(config: Dict[str, Any]) -> None:
    """
    Log a sanitized summary of the configuration.

    Values whose key looks like a credential are replaced before logging.

    Args:
        config: Dictionary of configuration values to log
    """
    safe_config = dict(config)
    sensitive_keys = ['key', 'password', 'secret', 'token']
    for key in safe_config:
        if any(sensitive in key.lower() for sensitive in sensitive_keys):
            safe_config[key] = '***REDACTED***'

    info("Configuration summary:", config=safe_config)


def log_frame(direction: str, source: str, target: str, frame: bytes) -> None:
    """
    Log one federation frame at DEBUG.

    Args:
        direction: 'send' or 'recv'
        source: cc_id of the sender
        target: cc_id of the receiver
        frame: Encoded frame bytes
    """
    get_logger('federation').debug(
        f"{direction} {source} -> {target}: {frame.decode('utf-8', errors='replace').rstrip()}"
    )


_shutdown_handler_registered = False


def register_shutdown_handler(callback: Callable) -> None:
    """
    Register a function to run when the daemon shuts down.

    The callback runs on normal interpreter exit, SIGTERM and SIGINT. It is
    registered at most once per process.

    Args:
        callback: Function to call on shutdown; accepts optional (sig, frame)
    """
    global _shutdown_handler_registered
    if _shutdown_handler_registered:
        return

    import atexit
    import signal

    atexit.register(callback)

    def sigint_handler(sig, frame):
        callback(sig, frame)
        sys.exit(0)

    signal.signal(signal.SIGTERM, callback)
    if hasattr(signal, 'SIGINT'):
        signal.signal(signal.SIGINT, sigint_handler)

    _shutdown_handler_registered = True


def get_logger(module_name: str) -> logging.Logger:
    """
    Get a logger for a module.

    Args:
        module_name: Short module name, e.g. 'matcher'

    Returns:
        The 'caremesh.<module_name>' child logger
    """
    return logging.getLogger(f"caremesh.{module_name}")


def log_exception(exception: Exception, module: str) -> None:
    """
    Log an exception with traceback.

    Args:
        exception: Exception object to log
        module: Module name where the exception occurred
    """
    exc_logger = get_logger(module)
    exc_logger.error(
        f"Exception occurred in {module}: {type(exception).__name__}: {exception}\n"
        f"Traceback:\n{traceback.format_exc()}"
    )
