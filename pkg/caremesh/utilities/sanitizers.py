import re
import logging
from typing import Optional

# Identifiers: lowercase token, starting with a letter or digit
TOKEN_PATTERN = re.compile(r'^[a-z0-9][a-z0-9._-]*$')

# Request, record and contract ids may also carry '@', '/' and ':' (e.g. 'ap-1@100/rq1')
IDENTIFIER_PATTERN = re.compile(r'^[a-z0-9][a-z0-9._@/:-]*$')


def sanitize_input(value: Optional[str]) -> Optional[str]:
    """Clean a raw text value from a description or scenario file.

    Removes NULL bytes and surrounding whitespace. Non-string values are
    returned unchanged.

    Args:
        value: The input value to sanitize

    Returns:
        Sanitized value
    """
    if value is None or not isinstance(value, str):
        return value

    if '\0' in value:
        logging.getLogger('caremesh.sanitizers').warning(f"NULL byte detected in input: {value!r}")
        value = value.replace('\0', '')

    return value.strip()


def normalize_id(value: str) -> str:
    """Case-normalize an identifier (concept ids, cc ids, provider ids)."""
    return sanitize_input(value).lower()


def is_token(value: str) -> bool:
    """True when value is already a normalized identifier token."""
    return bool(TOKEN_PATTERN.match(value))


def is_identifier(value: str) -> bool:
    """True when value is a valid provider, requester or request id."""
    return bool(IDENTIFIER_PATTERN.match(value))
