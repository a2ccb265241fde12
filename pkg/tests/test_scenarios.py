import copy
import json

import pytest

from caremesh.errors import ParseError, ValidationError
from caremesh.harness.generator import generate_scenario, write_scenario
from caremesh.harness.replay import replay_contracts, replay_registries
from caremesh.harness.runner import METRIC_KEYS, RunOptions, run_scenario
from caremesh.harness.scenario import EventKind, load_scenario, scenario_from_dict
from caremesh.utilities.event_log import read_event_log
from caremesh.config.config import Config

pytestmark = pytest.mark.integration

INLINE_ONTOLOGY = {
    "concepts": [
        {"id": "gardening", "domain": "household"},
        {"id": "watering-flowers", "domain": "household"},
    ],
    "isa": [{"child": "watering-flowers", "parent": "gardening"}],
}


def _run(name, **options):
    return run_scenario(load_scenario(Config.get_bundled_path("scenarios", name)), RunOptions(**options))


def _minimal_document(**overrides):
    document = {
        "horizon": 600,
        "ontology": copy.deepcopy(INLINE_ONTOLOGY),
        "topology": {"ccs": [{"id": "community-1", "level": "community"}]},
        "events": [
            {"time": 0, "seq": 1, "kind": "register", "cc": "community-1", "payload": {
                "fields": {"service_type": "gardening", "provider": "vol-7", "provider_type": "informal"}}},
            {"time": 5, "seq": 2, "kind": "request", "cc": "community-1", "payload": {
                "fields": {"service_type": "watering-flowers", "requester": "ap-1",
                           "window_start": "10", "window_end": "70", "duration": "30"}}},
        ],
    }
    document.update(overrides)
    return document


def test_reminder_with_tv_stays_in_the_house():
    """Two displays can serve the reminder; the TV has the better quality."""
    report = _run("reminder_with_tv.scn")
    log = report.event_log

    match = log.of_kind("match")[0]
    assert match["cc"] == "house-1"
    assert match["outcome"] == "LOCAL"
    assert [(c["record_id"], c["degree"]) for c in match["candidates"]] == [("r-0001", "RULE"), ("r-0002", "RULE")]

    bind = log.of_kind("bind")[0]
    assert bind["cc"] == "house-1"
    assert bind["contract"]["provider"] == "smart-tv"
    assert bind["contract"]["interval"] == [480, 485]
    invoke = log.of_kind("invoke")[0]
    assert invoke["invocation"]["endpoint"] == "upnp://house-1/smart-tv/display"

    assert log.of_kind("frame") == []
    assert report.metrics["matched_local"] == 1
    assert report.metrics["community_cost_cents"] == 0


def test_reminder_without_devices_goes_to_the_community():
    report = _run("reminder_no_devices.scn")
    log = report.event_log

    match = log.of_kind("match")[0]
    assert match["outcome"] == "FORWARDED"
    assert match["responder"] == "community-1"
    assert [f["type"] for f in log.of_kind("frame")] == ["MATCH_REQUEST", "MATCH_RESPONSE"]

    bind = log.of_kind("bind")[0]
    assert bind["cc"] == "community-1"
    assert bind["contract"]["provider"] == "telephone-company"
    assert bind["contract"]["requester"] == "ap-1"
    assert report.metrics["matched_forwarded"] == 1
    assert report.metrics["community_cost_cents"] == 150


def test_gardening_finds_broader_volunteer():
    report = _run("gardening.scn")
    match = report.event_log.of_kind("match")[0]
    assert match["candidates"] == [{"record_id": "r-0001", "registered_at": 0, "degree": "SUBSUMING",
                                    "isa_hops": 1}]
    assert report.event_log.of_kind("bind")[0]["contract"]["interval"] == [600, 645]
    assert report.metrics["unmatched"] == 0
    assert report.metrics["mean_wait_minutes"] == 570.0


def test_gardening_syntactic_only_misses_volunteer():
    report = _run("gardening.scn", syntactic_only=True)
    assert report.metrics["unmatched"] == 1
    assert report.metrics["matched_local"] == 0
    assert report.event_log.of_kind("unmatched")[0]["request_id"] == "water-the-flowers"


def test_emergency_doctor_preempts_and_requeues():
    """The emergency takes the near doctor; the displaced routine check is rebooked after it."""
    report = _run("emergency_doctor.scn")
    log = report.event_log

    binds = [(e["contract"]["contract_id"], e["contract"]["request_id"], e["contract"]["provider"],
              e["contract"]["interval"]) for e in log.of_kind("bind")]
    assert binds == [
        ("c-0001", "check-ap-2", "doctor-near", [60, 120]),
        ("c-0002", "check-ap-3", "doctor-far", [60, 120]),
        ("c-0003", "fall-ap-1", "doctor-near", [60, 120]),
        ("c-0004", "check-ap-2/rq1", "doctor-near", [120, 180]),
    ]
    preempt = log.of_kind("preempt")[0]
    assert preempt["contract"]["contract_id"] == "c-0001"
    assert preempt["contract"]["status"] == "PREEMPTED"
    assert log.of_kind("requeue")[0]["request_id"] == "check-ap-2/rq1"

    assert report.metrics == {
        "requests_total": 4,
        "matched_local": 4,
        "matched_forwarded": 0,
        "unmatched": 0,
        "preemptions": 1,
        "requeues": 1,
        "mean_wait_minutes": 53.75,
        "community_cost_cents": 18000,
    }


def test_peer_communities():
    report = _run("peer_communities.scn")
    log = report.event_log

    matches = log.of_kind("match")
    assert [(m["request_id"], m["outcome"], m["responder"]) for m in matches] == [
        ("weekly-shopping", "FORWARDED", "community-2"),
        ("bp-monitor@200", "FORWARDED", "community-2"),
    ]
    assert matches[0]["candidates"][0]["degree"] == "SUBSUMING"
    assert matches[1]["candidates"][0]["degree"] == "EXACT"
    assert [r["fired"] for r in log.of_kind("reading")] == [False, True]
    assert len(log.of_kind("frame")) == 8

    binds = log.of_kind("bind")
    assert [b["contract"]["interval"] for b in binds] == [[600, 690], [200, 230]]
    assert binds[1]["contract"]["priority"] == "EMERGENCY"
    assert report.metrics["matched_forwarded"] == 2
    assert report.metrics["community_cost_cents"] == 20500


def test_peer_communities_without_hops():
    report = _run("peer_communities.scn", hop_limit=0)
    assert report.metrics["unmatched"] == 2
    assert report.event_log.of_kind("frame") == []


@pytest.mark.parametrize("name", [
    "reminder_with_tv.scn", "reminder_no_devices.scn", "gardening.scn", "emergency_doctor.scn",
    "peer_communities.scn",
])
def test_runs_are_deterministic(name):
    first = _run(name)
    second = _run(name)
    assert first.event_log.text() == second.event_log.text()
    assert first.metrics == second.metrics
    assert list(first.metrics) == list(METRIC_KEYS)


@pytest.mark.parametrize("name", ["reminder_with_tv.scn", "emergency_doctor.scn", "peer_communities.scn"])
def test_event_log_replays_end_state(name, tmp_path):
    report = _run(name)
    path = tmp_path / "events.ndjson"
    report.event_log.write(str(path))
    entries = read_event_log(str(path))
    assert entries == report.event_log.entries

    registries = replay_registries(entries)
    for cc_id, registry in report.registries().items():
        if len(registry.history):
            assert registries[cc_id].same_state(registry)

    contracts = replay_contracts(entries)
    for cc_id, book in report.contracts().items():
        assert {cid: c.to_dict() for cid, c in book.items()} == contracts.get(cc_id, {})


def test_every_contract_completes_by_the_horizon():
    report = _run("emergency_doctor.scn")
    statuses = {cid: c.status.value for cid, c in report.contracts()["community-1"].items()}
    assert statuses == {"c-0001": "PREEMPTED", "c-0002": "COMPLETED", "c-0003": "COMPLETED",
                        "c-0004": "COMPLETED"}
    assert report.event_log.entries[-1]["kind"] == "end"


def test_bad_events_are_rejected_not_fatal():
    document = _minimal_document()
    document["events"].insert(1, {"time": 1, "seq": 3, "kind": "unregister", "cc": "community-1",
                                  "payload": {"record_id": "r-0042"}})
    document["events"][2]["seq"] = 4
    report = run_scenario(scenario_from_dict(document))
    rejected = report.event_log.of_kind("rejected")
    assert len(rejected) == 1
    assert "r-0042" in rejected[0]["error"]
    assert report.metrics["matched_local"] == 1


def test_unregister_cancels_contracts():
    document = _minimal_document()
    document["events"].append({"time": 20, "seq": 3, "kind": "unregister", "cc": "community-1",
                               "payload": {"record_id": "r-0001"}})
    report = run_scenario(scenario_from_dict(document))
    notice = report.event_log.of_kind("cancellation_notice")[0]
    assert notice["contract"]["status"] == "CANCELLED"
    assert notice["contract"]["audit"][-1] == [20, "provider unregistered"]


def test_window_elapsed_requests_are_unmatched():
    document = _minimal_document()
    document["events"][1]["time"] = 50
    report = run_scenario(scenario_from_dict(document))
    assert report.event_log.of_kind("unmatched")[0]["reason"] == "window elapsed"


def test_settle_and_cancel_events():
    document = _minimal_document()
    document["events"] += [
        {"time": 20, "seq": 3, "kind": "cancel", "cc": "community-1",
         "payload": {"contract_id": "c-0001", "actor": "requester"}},
        {"time": 21, "seq": 4, "kind": "settle", "cc": "community-1",
         "payload": {"contract_id": "c-0001", "outcome": "COMPLETED"}},
    ]
    report = run_scenario(scenario_from_dict(document))
    settled = report.event_log.of_kind("settle")
    assert settled[0]["contract"]["audit"][-1] == [20, "cancelled by requester"]
    assert len(report.event_log.of_kind("rejected")) == 1


def test_load_scenario_reports_unknown_concept():
    document = _minimal_document()
    document["events"][1]["payload"]["fields"]["service_type"] = "teleportation"
    with pytest.raises(ValidationError) as excinfo:
        scenario_from_dict(document, source="bad.scn")
    assert str(excinfo.value).startswith("bad.scn: events[1].payload.fields.service_type: ")
    assert "teleportation" in str(excinfo.value)


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d["events"][1].update(time=0, seq=0), "events[1]"),
    (lambda d: d["events"][1].update(seq=1), "events[1]"),
    (lambda d: d["events"][1].update(cc="house-9"), "events[1].cc"),
    (lambda d: d["events"][0]["payload"].pop("fields"), "events[0].payload"),
    (lambda d: d["events"][1]["payload"].update(source_kind="robot"), "events[1].payload.source_kind"),
    (lambda d: d["topology"]["ccs"].append({"id": "house-1", "level": "house"}), "topology.ccs[1]"),
    (lambda d: d.update(horizon=0), "horizon"),
    (lambda d: d.update(colour="blue"), "colour"),
    (lambda d: d.update(triggers=[{"sensor": "systolic", "service_type": "lawn-mowing", "above": 1}]),
     "triggers[0].service_type"),
])
def test_load_scenario_validation_errors(mutate, where):
    document = _minimal_document()
    mutate(document)
    with pytest.raises(ValidationError) as excinfo:
        scenario_from_dict(document, source="bad.scn")
    assert f"bad.scn: {where}" in str(excinfo.value)


def test_load_scenario_parse_errors(tmp_path):
    path = tmp_path / "broken.scn"
    path.write_text('{"horizon": 10,,}')
    with pytest.raises(ParseError) as excinfo:
        load_scenario(str(path))
    assert str(excinfo.value).startswith(f"{path}:1:")

    with pytest.raises(ParseError):
        load_scenario(str(tmp_path / "missing.scn"))


def test_bundled_scenarios_load():
    scenario = load_scenario(Config.get_bundled_path("scenarios", "peer_communities.scn"))
    assert scenario.name == "peer_communities"
    assert [c.cc_id for c in scenario.ccs] == ["community-1", "community-2", "house-1"]
    assert len(scenario.events_of(EventKind.READING)) == 2
    assert scenario.taxonomy.code_for("gardening") == "561730"


def test_bundled_reminder_scenario_shape():
    """Two displays in the house, the telephone company at the community, one request."""
    scenario = load_scenario(Config.get_bundled_path("scenarios", "reminder_with_tv.scn"))
    assert scenario.name == "reminder_with_tv"
    assert scenario.horizon == 1440
    assert [(c.cc_id, c.level, c.parent) for c in scenario.ccs] == [
        ("community-1", "community", None), ("house-1", "house", "community-1")]
    assert len(scenario.events) == 4

    registrations = scenario.events_of(EventKind.REGISTER)
    assert [(e.cc, e.payload.get("source_kind"), e.payload["fields"]["provider"]) for e in registrations] == [
        ("house-1", "device_profile", "smart-tv"),
        ("house-1", "device_profile", "smart-phone"),
        ("community-1", None, "telephone-company"),
    ]
    [request] = scenario.events_of(EventKind.REQUEST)
    assert (request.time, request.cc) == (10, "house-1")
    assert request.payload["fields"]["service_type"] == "reminder"

    report = run_scenario(scenario)
    assert report.metrics == {
        "requests_total": 1, "matched_local": 1, "matched_forwarded": 0, "unmatched": 0,
        "preemptions": 0, "requeues": 0, "mean_wait_minutes": 470.0, "community_cost_cents": 0,
    }


def test_generated_scenarios_are_valid_and_reproducible(tmp_path):
    assert generate_scenario(7) == generate_scenario(7)
    assert generate_scenario(7) != generate_scenario(8)

    path = tmp_path / "generated.scn"
    write_scenario(generate_scenario(7), str(path))
    with open(path, 'r', encoding='utf-8') as f:
        assert json.load(f)["name"] == "generated-7"

    first = run_scenario(load_scenario(str(path)))
    second = run_scenario(load_scenario(str(path)))
    assert first.event_log.text() == second.event_log.text()
