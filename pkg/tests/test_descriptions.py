import pytest

from caremesh.errors import FormatError, InvariantViolation, MalformedField, MissingField, UnknownConcept, UnknownField
from caremesh.models.common import ALL_PROVIDER_TYPES, Interval, Point, Priority, ProviderType
from caremesh.models.descriptions import (
    ContextTrigger, Preferences, RawDescription, SensorReading, SourceKind, format_offer, format_request,
    offer_from_summary, offer_to_raw, offer_to_summary, raise_device_request, request_to_raw,
    triggers_from_dicts
)


def _request(community_kb, lenient=False, **fields):
    raw = {"service_type": "watering-flowers", "requester": "ap-1", "window_start": "100", "window_end": "200"}
    raw.update(fields)
    return format_request(RawDescription(SourceKind.HUMAN_FORM, raw), community_kb, lenient=lenient)


def _offer(community_kb, **fields):
    return format_offer(RawDescription(SourceKind.HUMAN_FORM, fields), community_kb)


def test_format_request_defaults(community_kb):
    """A minimal request gets ROUTINE priority, uniform weights and no constraints."""
    request = _request(community_kb)
    assert request.concept == "watering-flowers"
    assert request.requester == "ap-1"
    assert request.window == Interval(100, 200)
    assert request.estimated_duration == 100
    assert request.priority is Priority.ROUTINE
    assert request.preferences == Preferences()
    assert request.constraints.max_price is None
    assert request.constraints.allowed_provider_types == ALL_PROVIDER_TYPES
    assert request.location == Point(0, 0)
    assert request.id == "ap-1@100"


def test_format_request_unknown_concept(community_kb):
    with pytest.raises(UnknownConcept) as excinfo:
        _request(community_kb, service_type="teleportation")
    assert excinfo.value.field == "service_type"


def test_format_request_priority_and_price(community_kb):
    request = _request(community_kb, priority="EMERGENCY", max_price="5000")
    assert request.priority is Priority.EMERGENCY
    assert request.constraints.max_price == 5000


def test_format_request_all_fields(community_kb):
    request = _request(community_kb, id="Q-7", duration="30", priority="elevated", location="3,-4",
                       min_quality="4", provider_types="informal, device", max_distance="12.5",
                       w_quality="0.5", w_price="0.25", w_distance="0.25", auth_token="secret")
    assert request.id == "q-7"
    assert request.estimated_duration == 30
    assert request.priority is Priority.ELEVATED
    assert request.location == Point(3, -4)
    assert request.constraints.min_quality == 4
    assert request.constraints.allowed_provider_types == frozenset({ProviderType.INFORMAL, ProviderType.DEVICE})
    assert request.constraints.max_distance == 12.5
    assert request.preferences == Preferences(0.5, 0.25, 0.25)
    assert request.auth_token == "secret"


def test_concept_lookup_is_case_insensitive(community_kb):
    assert _request(community_kb, service_type="Watering-Flowers").concept == "watering-flowers"


@pytest.mark.parametrize("fields, error, field", [
    ({"window_start": "abc"}, MalformedField, "window_start"),
    ({"window_start": "300"}, MalformedField, "window_end"),
    ({"duration": "101"}, MalformedField, "duration"),
    ({"duration": "0"}, MalformedField, "duration"),
    ({"priority": "urgent"}, MalformedField, "priority"),
    ({"min_quality": "6"}, MalformedField, "min_quality"),
    ({"location": "1;2"}, MalformedField, "location"),
    ({"provider_types": "robot"}, MalformedField, "provider_types"),
    ({"max_distance": "-1"}, MalformedField, "max_distance"),
    ({"w_quality": "0.5", "w_price": "0.5"}, MissingField, "w_distance"),
    ({"w_quality": "0.5", "w_price": "0.5", "w_distance": "0.5"}, MalformedField, "w_quality"),
    ({"requester": ""}, MissingField, "requester"),
    ({"requester": "ap 1"}, MalformedField, "requester"),
])
def test_format_request_errors(community_kb, fields, error, field):
    with pytest.raises(error) as excinfo:
        _request(community_kb, **fields)
    assert excinfo.value.field == field


def test_missing_required_field(community_kb):
    raw = RawDescription(SourceKind.HUMAN_FORM, {"service_type": "reminder", "requester": "ap-1",
                                                 "window_start": "0"})
    with pytest.raises(MissingField) as excinfo:
        format_request(raw, community_kb)
    assert excinfo.value.field == "window_end"


def test_unknown_field_strict_and_lenient(community_kb, caplog):
    with pytest.raises(UnknownField):
        _request(community_kb, colour="blue")
    request = _request(community_kb, lenient=True, colour="blue")
    assert request.concept == "watering-flowers"
    assert "colour" in caplog.text


def test_duplicate_raw_keys_rejected():
    with pytest.raises(MalformedField):
        RawDescription.from_pairs(SourceKind.HUMAN_FORM, [("requester", "a"), ("requester", "b")])


def test_unknown_source_kind_rejected():
    """A raw description from an unknown source is a format error."""
    with pytest.raises(FormatError) as excinfo:
        RawDescription("robot", {"service_type": "reminder"})
    assert excinfo.value.field == "source_kind"
    assert "'robot'" in str(excinfo.value)
    assert RawDescription("device_profile", {}).source_kind is SourceKind.DEVICE_PROFILE


def test_format_offer_smart_tv(community_kb):
    offer = _offer(community_kb, service_type="text-display", provider="tv-1", provider_type="device",
                   endpoint="local://tv-1")
    assert offer.concept == "text-display"
    assert offer.provider_type is ProviderType.DEVICE
    assert offer.invocation_endpoint == "local://tv-1"
    assert offer.is_device
    assert offer.id == "tv-1/text-display"


def test_format_offer_volunteer(community_kb):
    offer = _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
                   availability="[0,480]")
    assert offer.provider_type is ProviderType.INFORMAL
    assert offer.availability == (Interval(0, 480),)
    assert offer.price == 0
    assert offer.quality == 3
    assert offer.capacity == 1


def test_format_offer_default_availability_is_horizon(community_kb):
    raw = RawDescription(SourceKind.HUMAN_FORM, {"service_type": "gardening", "provider": "vol-7",
                                                 "provider_type": "informal"})
    assert format_offer(raw, community_kb, horizon=600).availability == (Interval(0, 600),)


def test_format_offer_sorts_availability(community_kb):
    offer = _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
                   availability="[600,700];[0,100]")
    assert offer.availability == (Interval(0, 100), Interval(600, 700))


def test_format_offer_invariant_violations(community_kb):
    with pytest.raises(InvariantViolation):
        _offer(community_kb, service_type="text-display", provider="tv-1", provider_type="device")
    with pytest.raises(InvariantViolation):
        _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
               endpoint="local://vol-7")
    with pytest.raises(InvariantViolation):
        _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
               availability="[0,100];[50,150]")


def test_format_offer_malformed_fields(community_kb):
    with pytest.raises(MalformedField):
        _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
               availability="0-100")
    with pytest.raises(MalformedField):
        _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="informal",
               quality="0")
    with pytest.raises(MalformedField):
        _offer(community_kb, service_type="gardening", provider="vol-7", provider_type="volunteer")


def test_request_round_trip(community_kb):
    request = _request(community_kb, priority="EMERGENCY", max_price="5000", min_quality="2",
                       location="5,6", max_distance="2.5", provider_types="professional",
                       w_quality="0.2", w_price="0.3", w_distance="0.5")
    assert format_request(request_to_raw(request), community_kb) == request


def test_offer_round_trip(community_kb):
    offer = _offer(community_kb, service_type="text-display", provider="tv-1", provider_type="device",
                   endpoint="local://tv-1", price="250", availability="[0,60];[120,240]", capacity="2")
    raw = offer_to_raw(offer)
    assert raw.source_kind is SourceKind.DEVICE_PROFILE
    assert format_offer(raw, community_kb) == offer
    assert offer_from_summary(offer_to_summary(offer)) == offer


def test_offer_summary_rejects_garbage():
    with pytest.raises(MalformedField):
        offer_from_summary({"id": "x"})


def test_formatting_is_pure(community_kb):
    assert _request(community_kb) == _request(community_kb)


def test_context_trigger_fires_above_threshold():
    trigger = ContextTrigger(sensor="systolic", service_type="emergency-medical-care", above=160)
    assert trigger.fires(170)
    assert not trigger.fires(160)

    low = ContextTrigger(sensor="glucose", service_type="medical-care", below=70)
    assert low.fires(60)
    assert not low.fires(90)

    with pytest.raises(ValueError):
        ContextTrigger(sensor="systolic", service_type="medical-care")
    with pytest.raises(ValueError):
        ContextTrigger(sensor="systolic", service_type="medical-care", above=1, duration=90)


def test_raise_device_request(community_kb):
    """A dangerous blood pressure reading raises an emergency medical care request."""
    triggers = triggers_from_dicts([{"sensor": "systolic", "above": 160,
                                     "service_type": "Emergency-Medical-Care", "priority": "emergency"}])
    reading = SensorReading(device="bp-monitor", sensor="systolic", value=185, time=300,
                            requester="ap-1", location=Point(2, 3))
    raw = raise_device_request(reading, triggers)
    assert raw.source_kind is SourceKind.DEVICE_PROFILE

    request = format_request(raw, community_kb)
    assert request.id == "bp-monitor@300"
    assert request.concept == "emergency-medical-care"
    assert request.priority is Priority.EMERGENCY
    assert request.window == Interval(300, 360)
    assert request.estimated_duration == 30
    assert request.location == Point(2, 3)

    calm = SensorReading(device="bp-monitor", sensor="systolic", value=120, time=300, requester="ap-1")
    assert raise_device_request(calm, triggers) is None
    other = SensorReading(device="scale", sensor="weight", value=500, time=300, requester="ap-1")
    assert raise_device_request(other, triggers) is None
