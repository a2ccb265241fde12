"""
Helper Utilities Module
======================

Small pure functions shared across caremesh:
- Canonical JSON (sorted keys, compact separators) for frames and log lines
- Parsing and rendering of the flat text forms used in raw descriptions
  (integers, grid points, interval lists, comma lists)
- Deterministic id formatting

None of these touch application state, so they are safe to call from any
module and from concurrent daemon requests.
"""
import json
import re
from typing import Any, Iterable, List

from caremesh.models.common import Interval, Point

_INTERVAL_PATTERN = re.compile(r'^\[\s*(-?\d+)\s*,\s*(-?\d+)\s*\]$')


def canonical_json(data: Any) -> str:
    """
    Serialize data to canonical JSON: sorted keys, no insignificant whitespace.

    Equal values always serialize to identical text, which is what makes
    event logs and frames byte-reproducible.
    """
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def format_sequence_id(prefix: str, counter: int) -> str:
    """Deterministic id such as 'r-0001' or 'c-0012'."""
    return f"{prefix}-{counter:04d}"


def parse_int(text: str) -> int:
    """
    Parse a decimal integer written as text.

    Raises:
        ValueError: If the text is not an integer literal
    """
    text = text.strip()
    if not re.fullmatch(r'[+-]?\d+', text):
        raise ValueError(f"not an integer: {text!r}")
    return int(text)


def parse_number(text: str) -> float:
    """Parse a finite decimal number written as text."""
    value = float(text.strip())
    if value != value or value in (float('inf'), float('-inf')):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def parse_point(text: str) -> Point:
    """Parse 'x,y' into a grid Point."""
    parts = text.split(',')
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {text!r}")
    return Point(parse_int(parts[0]), parse_int(parts[1]))


def format_point(point: Point) -> str:
    return f"{point.x},{point.y}"


def parse_interval(text: str) -> Interval:
    """Parse '[start,end]' into an Interval."""
    match = _INTERVAL_PATTERN.match(text.strip())
    if not match:
        raise ValueError(f"expected '[start,end]', got {text!r}")
    return Interval(int(match.group(1)), int(match.group(2)))


def parse_intervals(text: str) -> List[Interval]:
    """Parse '[0,480];[600,700]' into a list of Intervals (input order kept)."""
    pieces = [piece for piece in text.split(';') if piece.strip()]
    if not pieces:
        raise ValueError("empty interval list")
    return [parse_interval(piece) for piece in pieces]


def format_intervals(intervals: Iterable[Interval]) -> str:
    return ";".join(f"[{i.start},{i.end}]" for i in intervals)


def parse_list(text: str) -> List[str]:
    """Split a comma list, dropping blanks."""
    return [item.strip() for item in text.split(',') if item.strip()]


def format_number(value: float) -> str:
    """Shortest text that parses back to the same float ('2' for 2.0)."""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))
