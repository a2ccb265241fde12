"""
Scenario runner.

Applies a scenario's events in (time, seq) order to a federation of CCs and
drives each request through the whole pipeline:

    format -> local match / forward -> schedule -> bind

Contracts that end are completed automatically before the next event at or
after their end, and all still-active contracts complete at the horizon.
Contracts displaced by an emergency are re-enqueued right away as fresh
requests (id '<original>/rq<n>', requeued flag set) at the CC that raised
them.

Everything that happens goes to the run's EventLog as canonical entries, so
two runs of one scenario with the same options give byte-identical logs and
metrics. The runner is single threaded.
"""
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Deque, Dict, List, Optional, Tuple

from caremesh.config.config import Config
from caremesh.errors import BindingError, CaremeshError
from caremesh.models.common import Interval, Point
from caremesh.models.descriptions import (
    RawDescription, SensorReading, ServiceRequest, SourceKind, format_offer, format_request,
    offer_to_summary, raise_device_request, request_to_raw
)
from caremesh.services.binding import CancelActor, Contract, ContractStatus
from caremesh.services.federation import CoordinationCenter, Federation, FrameRecord, candidate_to_summary
from caremesh.services.matcher import Forwarded, LocalCandidates, MatchOptions, MatchOutcome, NoMatch
from caremesh.harness.scenario import EventKind, Scenario, ScenarioEvent
from caremesh.utilities.event_log import EventLog
from caremesh.utilities.helpers import parse_point
from caremesh.utilities.logger import info, warning

METRIC_KEYS = (
    "requests_total", "matched_local", "matched_forwarded", "unmatched",
    "preemptions", "requeues", "mean_wait_minutes", "community_cost_cents",
)


@dataclass(frozen=True)
class RunOptions:
    syntactic_only: bool = False
    hop_limit: int = Config.HOP_LIMIT
    lenient: bool = Config.LENIENT_FORMAT
    allow_narrower: bool = Config.ALLOW_NARROWER

    def match_options(self) -> MatchOptions:
        return MatchOptions(allow_narrower=self.allow_narrower, syntactic_only=self.syntactic_only)


@dataclass
class RunReport:
    event_log: EventLog
    metrics: Dict[str, Any]
    federation: Federation = field(repr=False)

    def registries(self):
        return {cc_id: cc.registry for cc_id, cc in self.federation.ccs.items()}

    def contracts(self) -> Dict[str, Dict[str, Contract]]:
        return {cc_id: cc.contracts.contracts_map() for cc_id, cc in self.federation.ccs.items()}


@dataclass
class _Pending:
    request: ServiceRequest
    cc_id: str
    submitted_at: int


class ScenarioRunner:
    """One run of one scenario. Use run_scenario() unless you need the pieces."""

    def __init__(self, scenario: Scenario, options: Optional[RunOptions] = None):
        self.scenario = scenario
        self.options = options or RunOptions()
        self.federation = Federation(scenario.kb, scenario.ccs, faults=scenario.fresh_faults(),
                                     options=self.options.match_options(), lenient=self.options.lenient)
        self.log = EventLog()
        self.now = 0
        self.counts = {key: 0 for key in METRIC_KEYS if key not in ("mean_wait_minutes", "community_cost_cents")}
        self._waits: List[int] = []
        self._requeue: Deque[_Pending] = deque()
        self._requeue_counter: Dict[str, int] = {}
        self.federation.listeners.append(self._log_frame)

    #######################################################################
    # LOG HELPERS
    #######################################################################

    def _log_frame(self, frame: FrameRecord) -> None:
        self.log.append(self.now, "frame", type=frame.type, source=frame.source, target=frame.target,
                        request_id=frame.request_id, hops_remaining=frame.hops_remaining)

    def _log_contract(self, kind: str, cc_id: str, contract: Contract) -> None:
        self.log.append(self.now, kind, cc=cc_id, contract=contract.to_dict())

    def _reject(self, event: ScenarioEvent, error: CaremeshError) -> None:
        warning(f"Event seq {event.seq} ({event.kind.value}) rejected: {error}")
        self.log.append(self.now, "rejected", cc=event.cc, event_seq=event.seq,
                        event_kind=event.kind.value, error=str(error))

    #######################################################################
    # MAIN LOOP
    #######################################################################

    def run(self) -> RunReport:
        info(f"Running scenario {self.scenario.name!r} with {len(self.scenario.events)} events")
        for event in self.scenario.events:
            self._advance(event.time)
            self._apply(event)
            self._drain_requeue()
        self._advance(max(self.scenario.horizon, self.now))
        self._close_horizon()
        self.log.append(self.now, "end", metrics=self.metrics())
        return RunReport(self.log, self.metrics(), self.federation)

    def _advance(self, time: int) -> None:
        self.now = time
        for cc_id in sorted(self.federation.ccs):
            for contract in self.federation.ccs[cc_id].contracts.complete_due(time):
                self._log_contract("complete", cc_id, contract)

    def _close_horizon(self) -> None:
        for cc_id in sorted(self.federation.ccs):
            for contract in self.federation.ccs[cc_id].contracts.complete_remaining(self.now):
                self._log_contract("complete", cc_id, contract)

    def _apply(self, event: ScenarioEvent) -> None:
        cc = self.federation.ccs[event.cc]
        handlers = {
            EventKind.REGISTER: self._on_register,
            EventKind.UNREGISTER: self._on_unregister,
            EventKind.SUSPEND: self._on_status,
            EventKind.RESUME: self._on_status,
            EventKind.REQUEST: self._on_request,
            EventKind.READING: self._on_reading,
            EventKind.SETTLE: self._on_settle,
            EventKind.CANCEL: self._on_settle,
        }
        try:
            handlers[event.kind](cc, event)
        except CaremeshError as e:
            self._reject(event, e)

    #######################################################################
    # EVENT HANDLERS
    #######################################################################

    def _raw(self, event: ScenarioEvent, default_kind: SourceKind) -> RawDescription:
        kind = event.payload.get("source_kind", default_kind.value)
        return RawDescription(kind, {str(k): str(v) for k, v in event.payload["fields"].items()})

    def _on_register(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        offer = format_offer(self._raw(event, SourceKind.HUMAN_FORM), cc.kb,
                             horizon=self.scenario.horizon, lenient=self.options.lenient)
        record_id = cc.registry.register(offer, self.now)
        self.log.append(self.now, "register", cc=cc.cc_id, record_id=record_id, offer=offer_to_summary(offer))

    def _on_unregister(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        record_id = event.payload["record_id"]
        cc.registry.unregister(record_id, self.now)
        self.log.append(self.now, "unregister", cc=cc.cc_id, record_id=record_id)
        for contract in cc.contracts.cancel_for_record(record_id, self.now):
            self._log_contract("cancellation_notice", cc.cc_id, contract)

    def _on_status(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        record_id = event.payload["record_id"]
        if event.kind is EventKind.SUSPEND:
            cc.registry.suspend(record_id, self.now)
        else:
            cc.registry.resume(record_id, self.now)
        self.log.append(self.now, event.kind.value, cc=cc.cc_id, record_id=record_id)

    def _on_settle(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        contract_id = event.payload["contract_id"]
        try:
            if event.kind is EventKind.CANCEL:
                contract = cc.contracts.cancel(contract_id, CancelActor(event.payload["actor"]), self.now)
            else:
                contract = cc.contracts.settle(contract_id, ContractStatus(event.payload["outcome"]), self.now)
        except ValueError as e:
            raise BindingError(str(e)) from e
        self._log_contract("settle", cc.cc_id, contract)

    def _on_request(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        request = format_request(self._raw(event, SourceKind.HUMAN_FORM), cc.kb, lenient=self.options.lenient)
        self._resolve(_Pending(request, cc.cc_id, self.now))

    def _on_reading(self, cc: CoordinationCenter, event: ScenarioEvent) -> None:
        payload = event.payload
        try:
            reading = SensorReading(
                device=str(payload["device"]),
                sensor=str(payload["sensor"]),
                value=float(payload["value"]),
                time=self.now,
                requester=str(payload["requester"]),
                location=parse_point(payload["location"]) if "location" in payload else Point(),
            )
        except (TypeError, ValueError) as e:
            raise BindingError(f"bad sensor reading: {e}") from e
        raw = raise_device_request(reading, self.scenario.triggers)
        self.log.append(self.now, "reading", cc=cc.cc_id, device=reading.device, sensor=reading.sensor,
                        value=reading.value, fired=raw is not None)
        if raw is not None:
            request = format_request(raw, cc.kb, lenient=self.options.lenient)
            self._resolve(_Pending(request, cc.cc_id, self.now))

    #######################################################################
    # REQUEST PIPELINE
    #######################################################################

    def _effective(self, request: ServiceRequest) -> Optional[ServiceRequest]:
        """The request with its window clipped to start no earlier than now."""
        if request.window.start >= self.now:
            return request
        if self.now + request.estimated_duration > request.window.end:
            return None
        return replace(request, window=Interval(self.now, request.window.end))

    def _unmatched(self, pending: _Pending, reason: str) -> None:
        self.counts["unmatched"] += 1
        self.log.append(self.now, "unmatched", cc=pending.cc_id, request_id=pending.request.id, reason=reason)

    def _resolve(self, pending: _Pending) -> None:
        request = pending.request
        cc = self.federation.ccs[pending.cc_id]
        self.counts["requests_total"] += 1
        self.log.append(self.now, "request", cc=cc.cc_id, request=dict(request_to_raw(request).fields))

        effective = self._effective(request)
        if effective is None:
            self._unmatched(pending, "window elapsed")
            return

        outcome = cc.handle_request(effective, self.options.hop_limit)
        self._log_outcome(cc.cc_id, effective, outcome)
        if isinstance(outcome, NoMatch):
            self._unmatched(pending, outcome.reason)
            return

        responder = cc if isinstance(outcome, LocalCandidates) else self.federation.ccs[outcome.responder_cc]
        bound = self._schedule_and_bind(responder, effective, outcome, pending)
        if bound is None:
            self._unmatched(pending, "no feasible slot")
            return
        key = "matched_local" if isinstance(outcome, LocalCandidates) else "matched_forwarded"
        self.counts[key] += 1
        self._waits.append(bound.interval.start - pending.submitted_at)

    def _log_outcome(self, cc_id: str, request: ServiceRequest, outcome: MatchOutcome) -> None:
        if isinstance(outcome, NoMatch):
            self.log.append(self.now, "match", cc=cc_id, request_id=request.id, outcome="NO_MATCH",
                            visited=list(outcome.visited))
            return
        responder = outcome.responder_cc if isinstance(outcome, Forwarded) else cc_id
        self.log.append(self.now, "match", cc=cc_id, request_id=request.id,
                        outcome="LOCAL" if isinstance(outcome, LocalCandidates) else "FORWARDED",
                        responder=responder,
                        candidates=[{k: v for k, v in candidate_to_summary(c).items() if k != "offer"}
                                    for c in outcome.candidates])

    def _schedule_and_bind(self, responder: CoordinationCenter, request: ServiceRequest,
                           outcome: MatchOutcome, pending: _Pending) -> Optional[Contract]:
        bound = responder.bind_candidates(request, outcome.candidates, self.now, origin_cc=pending.cc_id)
        if bound is None:
            return None
        contract, reference, selection = bound
        book = responder.contracts
        self._log_contract("bind", responder.cc_id, contract)
        if reference is not None:
            self.log.append(self.now, "invoke", cc=responder.cc_id, invocation=reference.to_dict())
        if selection.preempted:
            self.counts["preemptions"] += 1
            victim = book.get(selection.preempted)
            self._log_contract("preempt", responder.cc_id, victim)
            self._enqueue_requeue(book.request_for(victim.contract_id))
        return contract

    def _enqueue_requeue(self, bound: Tuple[ServiceRequest, str]) -> None:
        request, origin = bound
        base = request.id.split("/rq")[0]
        n = self._requeue_counter.get(base, 0) + 1
        self._requeue_counter[base] = n
        requeued = replace(request, id=f"{base}/rq{n}", requeued=True)
        self.counts["requeues"] += 1
        self.log.append(self.now, "requeue", cc=origin, request_id=requeued.id, original=request.id)
        self._requeue.append(_Pending(requeued, origin, self.now))

    def _drain_requeue(self) -> None:
        while self._requeue:
            self._resolve(self._requeue.popleft())

    #######################################################################
    # METRICS
    #######################################################################

    def metrics(self) -> Dict[str, Any]:
        metrics: Dict[str, Any] = dict(self.counts)
        metrics["mean_wait_minutes"] = round(sum(self._waits) / len(self._waits), 6) if self._waits else 0.0
        metrics["community_cost_cents"] = sum(cc.contracts.community_cost() for cc in self.federation.ccs.values())
        return {key: metrics[key] for key in METRIC_KEYS}


def run_scenario(scenario: Scenario, options: Optional[RunOptions] = None) -> RunReport:
    """
    Run a validated scenario and return its event log and metrics.

    Per-event problems (a malformed offer, an unknown record id) are logged as
    'rejected' entries; they never abort the run.
    """
    return ScenarioRunner(scenario, options).run()
