"""
Federation wire codec.

One message per frame; a frame is the canonical JSON form of the message
(sorted keys, compact separators) followed by a newline, so equal messages
always encode to identical bytes. Decoding validates the message schema and
its invariants and reports failures with the byte offset where they were
detected.
"""
import json
from enum import Enum
from typing import Any, Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError

from caremesh.config.config import Config
from caremesh.errors import DecodeError
from caremesh.utilities.helpers import canonical_json

FRAME_TERMINATOR = b"\n"


class MessageType(str, Enum):
    MATCH_REQUEST = "MATCH_REQUEST"
    MATCH_RESPONSE = "MATCH_RESPONSE"
    NO_MATCH = "NO_MATCH"


class FederationMessage(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    type: MessageType
    request_id: str = Field(min_length=1)
    origin_cc: str = Field(min_length=1)
    visited: Tuple[str, ...] = ()
    hops_remaining: int = Field(ge=0)
    payload: Dict[str, Any] = Field(default_factory=dict)

    @field_validator('visited')
    @classmethod
    def _unique_visited(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        seen = set()
        for cc_id in value:
            if cc_id in seen:
                raise ValueError(f"cc {cc_id!r} appears twice in visited")
            seen.add(cc_id)
        return value


def encode_message(message: FederationMessage) -> bytes:
    """Canonical frame for a message, newline included."""
    return canonical_json(message.model_dump(mode='json')).encode('utf-8') + FRAME_TERMINATOR


def _decode_frame(frame: bytes, base: int) -> FederationMessage:
    body = frame[:-1]
    try:
        text = body.decode('utf-8')
    except UnicodeDecodeError as e:
        raise DecodeError(f"invalid UTF-8: {e.reason}", base + e.start) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise DecodeError(e.msg, base + len(text[:e.pos].encode('utf-8'))) from None
    if not isinstance(data, dict):
        raise DecodeError("frame is not a JSON object", base)
    try:
        return FederationMessage.model_validate(data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first['loc']) or "message"
        raise DecodeError(f"{location}: {first['msg']}", base) from None


def decode_message(data: bytes) -> FederationMessage:
    """
    Decode exactly one frame.

    Raises:
        DecodeError: truncated frame, trailing data, bad JSON or a message
            that violates the schema (offset 0 for schema violations)
    """
    if len(data) > Config.MAX_FRAME_BYTES:
        raise DecodeError(f"frame exceeds {Config.MAX_FRAME_BYTES} bytes", Config.MAX_FRAME_BYTES)
    if not data.endswith(FRAME_TERMINATOR):
        raise DecodeError("truncated frame: missing newline terminator", len(data))
    inner = data.find(FRAME_TERMINATOR)
    if inner != len(data) - 1:
        raise DecodeError("more than one frame", inner + 1)
    return _decode_frame(data, 0)


def decode_stream(data: bytes) -> List[FederationMessage]:
    """Decode a newline-delimited sequence of frames; offsets are relative to data."""
    messages = []
    offset = 0
    while offset < len(data):
        end = data.find(FRAME_TERMINATOR, offset)
        if end < 0:
            raise DecodeError("truncated frame: missing newline terminator", len(data))
        frame = data[offset:end + 1]
        if len(frame) > Config.MAX_FRAME_BYTES:
            raise DecodeError(f"frame exceeds {Config.MAX_FRAME_BYTES} bytes", offset)
        messages.append(_decode_frame(frame, offset))
        offset = end + 1
    return messages
