"""
Descriptions Module
===================

The format service: turns raw request and offer documents (flat text maps
coming from people filling in forms or from device profiles) into validated
ServiceRequest / ServiceOffer values bound to knowledge base concepts.

The canonical field names and text formats are listed in docs/formats.md.
Formatting is pure: the same raw map against the same KB version always
yields an equal value, and request_to_raw / offer_to_raw give back a raw map
that formats to the identical value again.

Devices can also raise requests on their own: a ContextTrigger turns a sensor
reading that crosses a threshold into a device_profile RawDescription.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from caremesh.config.config import Config
from caremesh.errors import (
    FormatError, InvariantViolation, MalformedField, MissingField, UnknownConcept, UnknownField
)
from caremesh.models.common import ALL_PROVIDER_TYPES, Interval, Point, Priority, ProviderType
from caremesh.models.knowledge_base import KnowledgeBase
from caremesh.utilities.helpers import (
    format_intervals, format_number, format_point, parse_int, parse_intervals, parse_list,
    parse_number, parse_point
)
from caremesh.utilities.logger import warning
from caremesh.utilities.sanitizers import is_identifier, normalize_id, sanitize_input

WEIGHT_TOLERANCE = 1e-9

REQUEST_REQUIRED = ("service_type", "requester", "window_start", "window_end")
REQUEST_OPTIONAL = (
    "id", "auth_token", "duration", "priority", "location", "max_price", "min_quality",
    "provider_types", "max_distance", "w_quality", "w_price", "w_distance", "requeued",
)
OFFER_REQUIRED = ("service_type", "provider", "provider_type")
OFFER_OPTIONAL = ("id", "price", "quality", "availability", "location", "capacity", "endpoint")
WEIGHT_KEYS = ("w_quality", "w_price", "w_distance")


class SourceKind(str, Enum):
    HUMAN_FORM = "human_form"
    DEVICE_PROFILE = "device_profile"


@dataclass(frozen=True)
class RawDescription:
    """Flat key -> text document as submitted by a person or a device."""
    source_kind: SourceKind
    fields: Mapping[str, str]

    def __post_init__(self):
        try:
            object.__setattr__(self, 'source_kind', SourceKind(self.source_kind))
        except ValueError:
            raise FormatError(f"unknown source kind {self.source_kind!r}", "source_kind") from None
        object.__setattr__(self, 'fields', dict(self.fields))

    @classmethod
    def from_pairs(cls, source_kind: SourceKind, pairs: Iterable[Tuple[str, str]]) -> "RawDescription":
        """Build from ordered (key, value) pairs; repeated keys are rejected."""
        fields: Dict[str, str] = {}
        for key, value in pairs:
            if key in fields:
                raise MalformedField("key appears more than once", key)
            fields[key] = value
        return cls(source_kind, fields)

    def get(self, key: str) -> Optional[str]:
        return self.fields.get(key)


@dataclass(frozen=True)
class Constraints:
    max_price: Optional[int] = None
    min_quality: Optional[int] = None
    allowed_provider_types: FrozenSet[ProviderType] = ALL_PROVIDER_TYPES
    max_distance: Optional[float] = None


@dataclass(frozen=True)
class Preferences:
    w_quality: float = 1 / 3
    w_price: float = 1 / 3
    w_distance: float = 1 / 3

    def __post_init__(self):
        weights = (self.w_quality, self.w_price, self.w_distance)
        if any(w < 0 for w in weights):
            raise ValueError("preference weights must be non-negative")
        if abs(sum(weights) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"preference weights must sum to 1, got {sum(weights)!r}")


@dataclass(frozen=True)
class ServiceRequest:
    id: str
    requester: str
    concept: str
    window: Interval
    estimated_duration: int
    auth_token: str = ""
    priority: Priority = Priority.ROUTINE
    location: Point = Point()
    constraints: Constraints = Constraints()
    preferences: Preferences = Preferences()
    requeued: bool = False

    def __post_init__(self):
        if not 0 < self.estimated_duration <= self.window.length:
            raise ValueError("estimated_duration must be positive and fit the window")


@dataclass(frozen=True)
class ServiceOffer:
    id: str
    provider: str
    provider_type: ProviderType
    concept: str
    price: int = 0
    quality: int = 3
    availability: Tuple[Interval, ...] = field(default_factory=tuple)
    location: Point = Point()
    capacity: int = 1
    invocation_endpoint: Optional[str] = None

    @property
    def is_device(self) -> bool:
        return self.provider_type is ProviderType.DEVICE


#######################################################################
# FIELD PARSING
#######################################################################

class _Fields:
    """Reads typed values out of a raw map, raising field-qualified errors."""

    def __init__(self, raw: RawDescription, known: Sequence[str], lenient: bool):
        self.values: Dict[str, str] = {}
        for key, value in raw.fields.items():
            key = normalize_id(str(key))
            if key not in known:
                if lenient:
                    warning(f"Ignoring unknown field {key!r} in {raw.source_kind.value} description")
                    continue
                raise UnknownField(key)
            self.values[key] = sanitize_input(str(value))

    def has(self, key: str) -> bool:
        return bool(self.values.get(key))

    def text(self, key: str, default: Optional[str] = None) -> Optional[str]:
        value = self.values.get(key)
        return value if value else default

    def required(self, key: str) -> str:
        value = self.values.get(key)
        if not value:
            raise MissingField(key)
        return value

    def identifier(self, key: str, value: Optional[str] = None) -> str:
        value = normalize_id(value if value is not None else self.required(key))
        if not is_identifier(value):
            raise MalformedField(f"{value!r} is not a valid identifier", key)
        return value

    def integer(self, key: str, default: Optional[int] = None, minimum: Optional[int] = None,
                maximum: Optional[int] = None) -> Optional[int]:
        if not self.has(key):
            return default
        try:
            value = parse_int(self.values[key])
        except ValueError as e:
            raise MalformedField(str(e), key) from None
        if minimum is not None and value < minimum:
            raise MalformedField(f"{value} is below {minimum}", key)
        if maximum is not None and value > maximum:
            raise MalformedField(f"{value} is above {maximum}", key)
        return value

    def number(self, key: str, default: Optional[float] = None) -> Optional[float]:
        if not self.has(key):
            return default
        try:
            value = parse_number(self.values[key])
        except ValueError as e:
            raise MalformedField(str(e), key) from None
        if value < 0:
            raise MalformedField(f"{value} is negative", key)
        return value

    def point(self, key: str) -> Point:
        if not self.has(key):
            return Point()
        try:
            return parse_point(self.values[key])
        except ValueError as e:
            raise MalformedField(str(e), key) from None

    def concept(self, kb: KnowledgeBase, key: str = "service_type") -> str:
        concept = normalize_id(self.required(key))
        if concept not in kb:
            raise UnknownConcept(concept, key)
        return concept


def _parse_priority(fields: _Fields) -> Priority:
    text = fields.text("priority")
    if text is None:
        return Priority.ROUTINE
    try:
        return Priority[text.upper()]
    except KeyError:
        raise MalformedField(f"unknown priority {text!r}", "priority") from None


def _parse_provider_type(text: str, key: str) -> ProviderType:
    try:
        return ProviderType(normalize_id(text))
    except ValueError:
        raise MalformedField(f"unknown provider type {text!r}", key) from None


def _parse_preferences(fields: _Fields) -> Preferences:
    given = [key for key in WEIGHT_KEYS if fields.has(key)]
    if not given:
        return Preferences()
    if len(given) != len(WEIGHT_KEYS):
        missing = next(key for key in WEIGHT_KEYS if key not in given)
        raise MissingField(missing)
    weights = {key: fields.number(key) for key in WEIGHT_KEYS}
    try:
        return Preferences(**weights)
    except ValueError as e:
        raise MalformedField(str(e), "w_quality") from None


def _parse_flag(fields: _Fields, key: str) -> bool:
    text = fields.text(key, "false").lower()
    if text not in ("true", "false"):
        raise MalformedField(f"expected true or false, got {text!r}", key)
    return text == "true"


#######################################################################
# FORMAT SERVICE
#######################################################################

def format_request(raw: RawDescription, kb: KnowledgeBase, *, lenient: bool = False) -> ServiceRequest:
    """
    Convert a raw request into a ServiceRequest bound to a KB concept.

    Missing optional fields get defaults: priority ROUTINE, uniform weights,
    no constraints, all provider types allowed, duration = the whole window
    and id = '<requester>@<window_start>'.

    Raises:
        MissingField, MalformedField, UnknownConcept, UnknownField
    """
    fields = _Fields(raw, REQUEST_REQUIRED + REQUEST_OPTIONAL, lenient)
    for key in REQUEST_REQUIRED:
        fields.required(key)

    concept = fields.concept(kb)
    requester = fields.identifier("requester")
    start = fields.integer("window_start")
    end = fields.integer("window_end")
    if start >= end:
        raise MalformedField(f"window_start {start} must be before window_end {end}", "window_end")
    window = Interval(start, end)

    duration = fields.integer("duration", default=window.length, minimum=1)
    if duration > window.length:
        raise MalformedField(f"duration {duration} does not fit window of {window.length}", "duration")

    allowed = ALL_PROVIDER_TYPES
    if fields.has("provider_types"):
        types = parse_list(fields.text("provider_types"))
        if not types:
            raise MalformedField("no provider types listed", "provider_types")
        allowed = frozenset(_parse_provider_type(t, "provider_types") for t in types)

    constraints = Constraints(
        max_price=fields.integer("max_price", minimum=0),
        min_quality=fields.integer("min_quality", minimum=1, maximum=5),
        allowed_provider_types=allowed,
        max_distance=fields.number("max_distance"),
    )

    request_id = fields.identifier("id", fields.text("id", f"{requester}@{start}"))
    return ServiceRequest(
        id=request_id,
        requester=requester,
        concept=concept,
        window=window,
        estimated_duration=duration,
        auth_token=fields.text("auth_token", ""),
        priority=_parse_priority(fields),
        location=fields.point("location"),
        constraints=constraints,
        preferences=_parse_preferences(fields),
        requeued=_parse_flag(fields, "requeued"),
    )


def format_offer(raw: RawDescription, kb: KnowledgeBase, *,
                 horizon: int = Config.DEFAULT_HORIZON_MINUTES, lenient: bool = False) -> ServiceOffer:
    """
    Convert a raw offer (provider form or device profile) into a ServiceOffer.

    Defaults: price 0, quality 3, capacity 1, availability [0, horizon),
    id '<provider>/<service_type>'.

    Raises:
        MissingField, MalformedField, UnknownConcept, UnknownField, InvariantViolation
    """
    fields = _Fields(raw, OFFER_REQUIRED + OFFER_OPTIONAL, lenient)
    for key in OFFER_REQUIRED:
        fields.required(key)

    concept = fields.concept(kb)
    provider = fields.identifier("provider")
    provider_type = _parse_provider_type(fields.required("provider_type"), "provider_type")

    if fields.has("availability"):
        try:
            availability = sorted(parse_intervals(fields.text("availability")))
        except ValueError as e:
            raise MalformedField(str(e), "availability") from None
        for earlier, later in zip(availability, availability[1:]):
            if earlier.overlaps(later):
                raise InvariantViolation(f"availability intervals {earlier.as_list()} and "
                                         f"{later.as_list()} overlap", "availability")
    else:
        availability = [Interval(0, horizon)]

    endpoint = fields.text("endpoint")
    if provider_type is ProviderType.DEVICE and not endpoint:
        raise InvariantViolation("device offers need an invocation endpoint", "endpoint")
    if provider_type is not ProviderType.DEVICE and endpoint:
        raise InvariantViolation(f"{provider_type.value} offers cannot carry an endpoint", "endpoint")

    return ServiceOffer(
        id=fields.identifier("id", fields.text("id", f"{provider}/{concept}")),
        provider=provider,
        provider_type=provider_type,
        concept=concept,
        price=fields.integer("price", default=0, minimum=0),
        quality=fields.integer("quality", default=3, minimum=1, maximum=5),
        availability=tuple(availability),
        location=fields.point("location"),
        capacity=fields.integer("capacity", default=1, minimum=1),
        invocation_endpoint=endpoint,
    )


#######################################################################
# CANONICAL SERIALIZATION
#######################################################################

def request_to_raw(request: ServiceRequest,
                   source_kind: SourceKind = SourceKind.HUMAN_FORM) -> RawDescription:
    """Raw form of a request with every field spelled out."""
    c = request.constraints
    fields = {
        "id": request.id,
        "service_type": request.concept,
        "requester": request.requester,
        "window_start": str(request.window.start),
        "window_end": str(request.window.end),
        "duration": str(request.estimated_duration),
        "priority": request.priority.name,
        "location": format_point(request.location),
        "provider_types": ",".join(sorted(t.value for t in c.allowed_provider_types)),
        "w_quality": format_number(request.preferences.w_quality),
        "w_price": format_number(request.preferences.w_price),
        "w_distance": format_number(request.preferences.w_distance),
    }
    if request.auth_token:
        fields["auth_token"] = request.auth_token
    if c.max_price is not None:
        fields["max_price"] = str(c.max_price)
    if c.min_quality is not None:
        fields["min_quality"] = str(c.min_quality)
    if c.max_distance is not None:
        fields["max_distance"] = format_number(c.max_distance)
    if request.requeued:
        fields["requeued"] = "true"
    return RawDescription(source_kind, fields)


def offer_to_raw(offer: ServiceOffer) -> RawDescription:
    """Raw form of an offer with every field spelled out."""
    fields = {
        "id": offer.id,
        "service_type": offer.concept,
        "provider": offer.provider,
        "provider_type": offer.provider_type.value,
        "price": str(offer.price),
        "quality": str(offer.quality),
        "availability": format_intervals(offer.availability),
        "location": format_point(offer.location),
        "capacity": str(offer.capacity),
    }
    if offer.invocation_endpoint:
        fields["endpoint"] = offer.invocation_endpoint
    kind = SourceKind.DEVICE_PROFILE if offer.is_device else SourceKind.HUMAN_FORM
    return RawDescription(kind, fields)


def offer_to_summary(offer: ServiceOffer) -> Dict[str, Any]:
    """JSON-ready by-value copy of an offer, as carried in federation responses."""
    return {
        "id": offer.id,
        "provider": offer.provider,
        "provider_type": offer.provider_type.value,
        "concept": offer.concept,
        "price": offer.price,
        "quality": offer.quality,
        "availability": [i.as_list() for i in offer.availability],
        "location": list(offer.location.as_tuple()),
        "capacity": offer.capacity,
        "endpoint": offer.invocation_endpoint,
    }


def offer_from_summary(summary: Mapping[str, Any]) -> ServiceOffer:
    """Inverse of offer_to_summary. No KB lookup: the concept belongs to the remote CC."""
    try:
        return ServiceOffer(
            id=summary["id"],
            provider=summary["provider"],
            provider_type=ProviderType(summary["provider_type"]),
            concept=summary["concept"],
            price=int(summary["price"]),
            quality=int(summary["quality"]),
            availability=tuple(Interval(int(s), int(e)) for s, e in summary["availability"]),
            location=Point(*[int(v) for v in summary["location"]]),
            capacity=int(summary["capacity"]),
            invocation_endpoint=summary.get("endpoint"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedField(f"bad offer summary: {e}") from e


#######################################################################
# DEVICE-RAISED REQUESTS
#######################################################################

@dataclass(frozen=True)
class ContextTrigger:
    """
    Raises a request when a sensor value crosses a threshold.

    Exactly one of above / below is set.
    """
    sensor: str
    service_type: str
    above: Optional[float] = None
    below: Optional[float] = None
    priority: Priority = Priority.EMERGENCY
    window_minutes: int = 60
    duration: int = 30

    def __post_init__(self):
        if (self.above is None) == (self.below is None):
            raise ValueError(f"trigger on {self.sensor!r} needs exactly one of above/below")
        if not 0 < self.duration <= self.window_minutes:
            raise ValueError("trigger duration must be positive and fit its window")

    def fires(self, value: float) -> bool:
        if self.above is not None:
            return value > self.above
        return value < self.below


@dataclass(frozen=True)
class SensorReading:
    device: str
    sensor: str
    value: float
    time: int
    requester: str
    location: Point = Point()


def raise_device_request(reading: SensorReading,
                         triggers: Sequence[ContextTrigger]) -> Optional[RawDescription]:
    """
    Raw request raised by a device for the first trigger the reading fires.

    Returns None when no trigger on that sensor fires.
    """
    for trigger in triggers:
        if trigger.sensor != reading.sensor or not trigger.fires(reading.value):
            continue
        return RawDescription(SourceKind.DEVICE_PROFILE, {
            "id": f"{reading.device}@{reading.time}",
            "service_type": trigger.service_type,
            "requester": reading.requester,
            "window_start": str(reading.time),
            "window_end": str(reading.time + trigger.window_minutes),
            "duration": str(trigger.duration),
            "priority": trigger.priority.name,
            "location": format_point(reading.location),
        })
    return None


def triggers_from_dicts(entries: Iterable[Mapping[str, Any]]) -> List[ContextTrigger]:
    """Build ContextTriggers from their scenario-file form."""
    triggers = []
    for entry in entries:
        values = dict(entry)
        if "priority" in values:
            values["priority"] = Priority[str(values["priority"]).upper()]
        values["service_type"] = normalize_id(values["service_type"])
        triggers.append(ContextTrigger(**values))
    return triggers
