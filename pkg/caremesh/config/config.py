import os
import json
import logging
from typing import Dict, Any, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

# Load environment variables from .env file if it exists
if os.path.exists('.env'):
    load_dotenv()

_CONFIG_VALIDATION_ERRORS: List[str] = []  # Stores configuration validation errors

_PACKAGE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes")


class Config:
    """
    Configuration settings for caremesh.

    All settings come from environment variables with defaults. Command-line
    flags override a handful of them for a single run (see caremesh.cli).
    """

    #######################################################################
    # LOGGING SETTINGS
    #######################################################################

    LOG_DIR = os.getenv("LOG_DIR", os.path.join(os.path.dirname(_PACKAGE_DIR), 'logs'))
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FORMAT = os.getenv("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    LOG_MAX_SIZE = int(os.getenv("LOG_MAX_SIZE", "10485760"))  # 10 MB
    LOG_BACKUP_COUNT = int(os.getenv("LOG_BACKUP_COUNT", "5"))
    LOG_TO_FILE = _env_bool("LOG_TO_FILE", "false")

    #######################################################################
    # MATCHING AND FEDERATION SETTINGS
    #######################################################################

    HOP_LIMIT = int(os.getenv("HOP_LIMIT", "4"))  # federation forwarding budget
    ALLOW_NARROWER = _env_bool("ALLOW_NARROWER", "false")  # admit offers narrower than the request
    LENIENT_FORMAT = _env_bool("LENIENT_FORMAT", "false")  # ignore unknown raw keys instead of rejecting
    DEFAULT_HORIZON_MINUTES = int(os.getenv("DEFAULT_HORIZON_MINUTES", "1440"))
    TAXONOMY_FALLBACK_CODE = os.getenv("TAXONOMY_FALLBACK_CODE", "999999")

    #######################################################################
    # DAEMON SETTINGS
    #######################################################################

    DAEMON_HOST = os.getenv("DAEMON_HOST", "127.0.0.1")
    DAEMON_PORT = int(os.getenv("DAEMON_PORT", "8700"))
    TRANSPORT_TIMEOUT = float(os.getenv("TRANSPORT_TIMEOUT", "10"))  # seconds per federation link
    MAX_FRAME_BYTES = int(os.getenv("MAX_FRAME_BYTES", "1048576"))

    #######################################################################
    # DATA
    #######################################################################

    BUNDLED_DATA_DIR = os.getenv("BUNDLED_DATA_DIR", os.path.join(_PACKAGE_DIR, 'data'))

    #######################################################################
    # METHODS FOR ACCESSING CONFIGURATION
    #######################################################################

    @staticmethod
    def get_log_level() -> int:
        """
        Convert the LOG_LEVEL environment value to a logging constant.

        Read at call time so tests and the CLI can change it after import.
        Unknown names fall back to INFO.
        """
        level_name = os.getenv("LOG_LEVEL", Config.LOG_LEVEL).upper()
        level_map = {
            "DEBUG": logging.DEBUG,
            "INFO": logging.INFO,
            "WARNING": logging.WARNING,
            "ERROR": logging.ERROR,
            "CRITICAL": logging.CRITICAL
        }
        return level_map.get(level_name, logging.INFO)

    @staticmethod
    def get_as_dict() -> Dict[str, Any]:
        """Configuration as a plain dictionary, for logging or inspection."""
        config_dict = {}
        for key in dir(Config):
            if key.isupper() and not key.startswith('_'):
                config_dict[key] = getattr(Config, key)
        return config_dict

    @staticmethod
    def get_bundled_path(kind: str, name: str) -> str:
        """
        Path of a bundled data file.

        Args:
            kind: Sub-directory under the data dir ('scenarios', 'ontology', 'taxonomy')
            name: File name inside it

        Returns:
            Absolute path (the file is not required to exist)
        """
        return os.path.join(Config.BUNDLED_DATA_DIR, kind, name)

    #######################################################################
    # CONFIGURATION VALIDATION
    #######################################################################

    @staticmethod
    def validate_configuration() -> List[str]:
        """
        Validate settings that would otherwise fail late.

        Validates:
        - Hop limit and horizon are non-negative
        - Taxonomy fallback code is a 6-digit string
        - Log directory can be created and written when file logging is on

        Returns:
            List of validation errors (empty if all validations pass)
        """
        global _CONFIG_VALIDATION_ERRORS
        errors = []

        if Config.HOP_LIMIT < 0:
            errors.append(f"HOP_LIMIT must be >= 0, got {Config.HOP_LIMIT}.")

        if Config.DEFAULT_HORIZON_MINUTES <= 0:
            errors.append(f"DEFAULT_HORIZON_MINUTES must be positive, got {Config.DEFAULT_HORIZON_MINUTES}.")

        code = Config.TAXONOMY_FALLBACK_CODE
        if len(code) != 6 or not code.isdigit():
            errors.append(f"TAXONOMY_FALLBACK_CODE must be 6 digits, got {code!r}.")

        if Config.LOG_TO_FILE:
            if not os.path.exists(Config.LOG_DIR):
                try:
                    os.makedirs(Config.LOG_DIR, exist_ok=True)
                except OSError as e:
                    errors.append(f"Log directory {Config.LOG_DIR} cannot be created: {e}")
            elif not os.access(Config.LOG_DIR, os.W_OK):
                errors.append(f"Log directory {Config.LOG_DIR} is not writeable.")

        _CONFIG_VALIDATION_ERRORS = errors
        return errors

    @staticmethod
    def get_validation_errors() -> List[str]:
        """Validation errors detected so far; runs validation on first use."""
        if not _CONFIG_VALIDATION_ERRORS:
            Config.validate_configuration()
        return _CONFIG_VALIDATION_ERRORS


#######################################################################
# DAEMON CONFIGURATION FILE
#######################################################################

class LinkConfig(BaseModel):
    """Address of a neighbouring coordination center daemon."""
    model_config = ConfigDict(extra='forbid')

    cc_id: str = Field(min_length=1)
    url: str = Field(min_length=1)


class DaemonConfig(BaseModel):
    """Contents of the file passed to `caremeshd --config`."""
    model_config = ConfigDict(extra='forbid')

    cc_id: str = Field(min_length=1)
    level: str
    ontology: str
    taxonomy: Optional[str] = None
    registry_dump: Optional[str] = None
    parent: Optional[LinkConfig] = None
    peers: List[LinkConfig] = Field(default_factory=list)
    # further daemons that may answer forwarded requests; used to bind there
    directory: List[LinkConfig] = Field(default_factory=list)
    hop_limit: int = Field(default_factory=lambda: Config.HOP_LIMIT, ge=0)

    @field_validator('level')
    @classmethod
    def _known_level(cls, value: str) -> str:
        if value not in ('house', 'community'):
            raise ValueError("level must be 'house' or 'community'")
        return value


def load_daemon_config(path: str) -> DaemonConfig:
    """
    Load and validate a daemon configuration file.

    Relative file references inside the config are resolved against the
    config file's directory.

    Raises:
        ValueError: with a path-qualified message when the file is invalid
    """
    with open(path, 'r') as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e

    try:
        config = DaemonConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first['loc'])
        raise ValueError(f"{path}: {location}: {first['msg']}") from e

    base_dir = os.path.dirname(os.path.abspath(path))
    updates = {}
    for key in ('ontology', 'taxonomy', 'registry_dump'):
        value = getattr(config, key)
        if value and not os.path.isabs(value):
            updates[key] = os.path.join(base_dir, value)
    return config.model_copy(update=updates)


# Run initial validation on module import
Config.validate_configuration()
