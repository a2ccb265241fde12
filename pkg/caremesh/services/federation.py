"""
Federation of coordination centers.

House CCs sit under a community CC; community CCs may link to peer
communities. A request is matched locally first. Only when nothing local fits
does a house forward it to its parent, and a community fan out to its peers,
one at a time in cc_id order, until one answers with candidates.

Every forward is a MATCH_REQUEST frame sent through a Transport and answered
by a MATCH_RESPONSE or NO_MATCH frame. The hop budget drops by one per
forward and the visited list grows, so no CC handles the same request twice
and every resolution terminates, whatever cycles the peer links form. NO_MATCH
answers carry back the visited list of the subtree that was searched.

Registrations are never copied between CCs; remote candidates travel by
value in the MATCH_RESPONSE. The origin then asks the responder, through
Transport.bind, to schedule and bind them in the responder's own book.
"""
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import requests

from caremesh.config.config import Config
from caremesh.errors import DecodeError, FormatError, StaleSelection, TopologyError, TransportError, UnknownConcept
from caremesh.models.descriptions import (
    RawDescription, ServiceRequest, SourceKind, format_request, offer_from_summary, offer_to_summary,
    request_to_raw
)
from caremesh.models.knowledge_base import KbOp, KnowledgeBase, KnowledgeBaseStore
from caremesh.models.registry import RecordStatus, Registry, RegistryRecord
from caremesh.services.binding import Contract, ContractBook, InvocationRef
from caremesh.services.matcher import (
    Forwarded, MatchCandidate, MatchDegree, MatchOptions, MatchOutcome, NoMatch,
    match_or_forward, match_request
)
from caremesh.services.scheduler import Selection, select_with_preemption
from caremesh.utilities.codec import FederationMessage, MessageType, decode_message, encode_message
from caremesh.utilities.logger import debug, info, log_frame, warning

HOUSE = "house"
COMMUNITY = "community"

BIND_ATTEMPTS = 2

Binding = Tuple[Contract, Optional[InvocationRef], Selection]


#######################################################################
# CANDIDATE SUMMARIES
#######################################################################

def candidate_to_summary(candidate: MatchCandidate) -> Dict:
    record = candidate.record
    return {
        "record_id": record.record_id,
        "registered_at": record.registered_at,
        "degree": candidate.degree.name,
        "isa_hops": candidate.isa_hops,
        "offer": offer_to_summary(record.offer),
    }


def candidate_from_summary(summary: Dict) -> MatchCandidate:
    try:
        record = RegistryRecord(summary["record_id"], offer_from_summary(summary["offer"]),
                                int(summary["registered_at"]), RecordStatus.ACTIVE)
        return MatchCandidate(record, MatchDegree[summary["degree"]], int(summary["isa_hops"]))
    except (KeyError, TypeError, ValueError, FormatError) as e:
        raise DecodeError(f"bad candidate summary: {e}", 0) from e


def _merge_visited(visited: Sequence[str], more: Iterable[str]) -> Tuple[str, ...]:
    merged = list(visited)
    for cc_id in more:
        if cc_id not in merged:
            merged.append(cc_id)
    return tuple(merged)


#######################################################################
# TRANSPORTS
#######################################################################

class Transport(ABC):
    """Delivers frames and binding requests to other CCs."""

    @abstractmethod
    def send(self, source: str, target: str, frame: bytes) -> bytes:
        """Deliver one frame to target and return its answer frame."""

    @abstractmethod
    def bind(self, source: str, target: str, body: Dict) -> Dict:
        """Ask target to bind a request it answered with candidates; returns the binding result."""


@dataclass
class LinkFault:
    """Drop frames on the source -> target link; count=None drops all of them."""
    source: str
    target: str
    count: Optional[int] = None
    dropped: int = 0

    def should_drop(self) -> bool:
        if self.count is None or self.dropped < self.count:
            self.dropped += 1
            return True
        return False


@dataclass(frozen=True)
class FrameRecord:
    source: str
    target: str
    type: str
    request_id: str
    hops_remaining: int


class InProcessTransport(Transport):
    """Transport between CC objects living in one process, with scripted drop faults."""

    def __init__(self, federation: "Federation", faults: Iterable[LinkFault] = ()):
        self.federation = federation
        self.faults = list(faults)

    def send(self, source: str, target: str, frame: bytes) -> bytes:
        for fault in self.faults:
            if fault.source == source and fault.target == target and fault.should_drop():
                raise TransportError(source, target, "frame dropped")
        cc = self.federation.ccs.get(target)
        if cc is None:
            raise TransportError(source, target, "no such coordination center")
        return cc.receive_frame(frame)

    def bind(self, source: str, target: str, body: Dict) -> Dict:
        cc = self.federation.ccs.get(target)
        if cc is None:
            raise TransportError(source, target, "no such coordination center")
        return cc.accept_binding(body)


class HttpTransport(Transport):
    """Transport to CC daemons: frames go to <url>/federation/frames, bindings to <url>/contracts."""

    def __init__(self, urls: Dict[str, str], timeout: float = Config.TRANSPORT_TIMEOUT):
        self.urls = dict(urls)
        self.timeout = timeout

    def send(self, source: str, target: str, frame: bytes) -> bytes:
        url = self.urls.get(target)
        if url is None:
            raise TransportError(source, target, "no address configured")
        try:
            response = requests.post(f"{url.rstrip('/')}/federation/frames", data=frame,
                                     headers={"Content-Type": "application/x-ndjson"},
                                     timeout=self.timeout)
            response.raise_for_status()
        except requests.RequestException as e:
            raise TransportError(source, target, str(e)) from e
        return response.content

    def bind(self, source: str, target: str, body: Dict) -> Dict:
        url = self.urls.get(target)
        if url is None:
            raise TransportError(source, target, "no address configured")
        try:
            response = requests.post(f"{url.rstrip('/')}/contracts", json=body, timeout=self.timeout)
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, ValueError) as e:
            raise TransportError(source, target, str(e)) from e


#######################################################################
# COORDINATION CENTER
#######################################################################

class CoordinationCenter:
    """Registry, matching, contracts and federation links of one house or community."""

    def __init__(self, cc_id: str, level: str, kb: KnowledgeBase, *,
                 parent: Optional[str] = None, peers: Sequence[str] = (),
                 registry: Optional[Registry] = None, options: Optional[MatchOptions] = None,
                 lenient: bool = Config.LENIENT_FORMAT, transport: Optional[Transport] = None):
        self.cc_id = cc_id
        self.level = level
        self.kb_store = KnowledgeBaseStore(kb)
        self.parent = parent
        self.peers = sorted(peers)
        self.registry = registry if registry is not None else Registry(cc_id)
        self.contracts = ContractBook(cc_id)
        self.options = options or MatchOptions()
        self.lenient = lenient
        self.transport = transport
        self.on_frame: Optional[Callable[[FrameRecord], None]] = None
        self._resolving: set = set()
        self._resolving_lock = threading.Lock()

    def __repr__(self) -> str:
        return f"CoordinationCenter({self.cc_id!r}, {self.level})"

    @property
    def kb(self) -> KnowledgeBase:
        return self.kb_store.snapshot()

    def mutate_kb(self, op: Union[KbOp, str], payload: Any) -> KnowledgeBase:
        """Apply one ontology change; concepts that registered offers still use stay put."""
        kb = self.kb_store.mutate(op, payload, in_use=self.registry.uses_concept)
        info(f"[{self.cc_id}] knowledge base {KbOp(op).value} -> version {kb.version}")
        return kb

    def validate(self) -> None:
        """Check the per-CC topology rules."""
        if self.level not in (HOUSE, COMMUNITY):
            raise TopologyError(f"{self.cc_id}: unknown level {self.level!r}")
        if self.level == HOUSE:
            if not self.parent:
                raise TopologyError(f"{self.cc_id}: house CCs need a parent community")
            if self.peers:
                raise TopologyError(f"{self.cc_id}: house CCs cannot have peers")
        elif self.parent:
            raise TopologyError(f"{self.cc_id}: community CCs have no parent")
        if self.parent == self.cc_id or self.cc_id in self.peers:
            raise TopologyError(f"{self.cc_id}: links to itself")

    def has_links(self) -> bool:
        return bool(self.parent or self.peers)

    def match_local(self, request: ServiceRequest) -> List[MatchCandidate]:
        return match_request(self.kb, self.registry.active_records(), request, self.options)

    def bind_candidates(self, request: ServiceRequest, candidates: Sequence[MatchCandidate], now: int,
                        origin_cc: Optional[str] = None) -> Optional[Binding]:
        """
        Schedule request over candidates and bind the selection in this CC's book.

        A selection that went stale before binding is recomputed, up to
        BIND_ATTEMPTS times.

        Returns:
            (contract, invocation reference or None, selection), or None when
            no candidate can be scheduled
        """
        book = self.contracts
        for _ in range(BIND_ATTEMPTS):
            selection = select_with_preemption(candidates, request, book.bookings(), book.contracts_map(),
                                               book.version)
            if selection is None:
                return None
            try:
                contract, reference = book.bind(request, selection, now, origin_cc=origin_cc)
            except StaleSelection:
                continue
            return contract, reference, selection
        warning(f"[{self.cc_id}] gave up binding {request.id} after {BIND_ATTEMPTS} stale selections")
        return None

    def accept_binding(self, body: Dict) -> Dict:
        """
        Bind a request this CC answered for another CC.

        body holds the request payload plus record_ids (the candidates the
        origin was sent), origin_cc and now. The records are matched again
        here, so a record withdrawn since the answer is never bound.
        """
        record_ids = body.get("record_ids")
        now = body.get("now", 0)
        if not isinstance(record_ids, list):
            raise FormatError("record_ids must be a list", "record_ids")
        if not isinstance(now, int) or now < 0:
            raise FormatError("now must be a non-negative integer", "now")
        request = format_request(_raw_from_payload(body), self.kb, lenient=True)
        candidates = [c for c in self.match_local(request) if c.record_id in record_ids]

        bound = self.bind_candidates(request, candidates, now, origin_cc=body.get("origin_cc"))
        if bound is None:
            return {"contract": None, "invocation": None, "reason": "no feasible slot"}
        contract, reference, selection = bound
        debug(f"[{self.cc_id}] bound {contract.contract_id} for {request.id} from {body.get('origin_cc')}")
        return {
            "contract": contract.to_dict(),
            "invocation": reference.to_dict() if reference else None,
            "preempted": selection.preempted,
        }

    def bind_remote(self, responder_cc: str, request: ServiceRequest, candidates: Sequence[MatchCandidate],
                    now: int) -> Dict:
        """
        Ask the CC that answered a forwarded request to bind it.

        Raises:
            TransportError: the responder cannot be reached
        """
        if self.transport is None:
            raise TransportError(self.cc_id, responder_cc, "no transport attached")
        body = {
            **_request_payload(request),
            "record_ids": [c.record_id for c in candidates],
            "origin_cc": self.cc_id,
            "now": now,
        }
        return self.transport.bind(self.cc_id, responder_cc, body)

    def handle_request(self, request: ServiceRequest, hop_budget: Optional[int] = None) -> MatchOutcome:
        """Resolve a request raised at this CC: local match, then federation."""
        budget = Config.HOP_LIMIT if hop_budget is None else hop_budget
        with self._resolving_lock:
            self._resolving.add(request.id)
        try:
            return match_or_forward(self, request, budget)
        finally:
            with self._resolving_lock:
                self._resolving.discard(request.id)

    def forward(self, request: ServiceRequest, hop_budget: int) -> MatchOutcome:
        """Forward an unmatched local request to the parent (house) or the peers (community)."""
        message = FederationMessage(
            type=MessageType.MATCH_REQUEST,
            request_id=request.id,
            origin_cc=self.cc_id,
            visited=(),
            hops_remaining=hop_budget,
            payload=_request_payload(request),
        )
        if self.level == HOUSE:
            return self._query(self.parent, message, (self.cc_id,))
        return peer_fanout(self, message)

    def _query(self, target: str, message: FederationMessage, visited: Tuple[str, ...]) -> MatchOutcome:
        """Send one MATCH_REQUEST with one hop less and interpret the answer."""
        outbound = message.model_copy(update={
            "visited": visited,
            "hops_remaining": message.hops_remaining - 1,
        })
        if self.transport is None:
            raise TransportError(self.cc_id, target, "no transport attached")
        frame = encode_message(outbound)
        self._record(self.cc_id, target, outbound)
        log_frame("send", self.cc_id, target, frame)
        answer = decode_message(self.transport.send(self.cc_id, target, frame))
        log_frame("recv", target, self.cc_id, encode_message(answer))
        self._record(target, self.cc_id, answer)

        if answer.type is MessageType.MATCH_RESPONSE:
            candidates = [candidate_from_summary(s) for s in answer.payload.get("candidates", [])]
            if candidates:
                return Forwarded(answer.payload.get("responder", target), candidates)
        if answer.payload.get("reason") == "unknown concept":
            warning(f"[{self.cc_id}] {target} does not know concept "
                    f"{message.payload.get('fields', {}).get('service_type')!r}; ontologies are incompatible")
        return NoMatch(answer.payload.get("reason", "no match"), _merge_visited(visited, answer.visited))

    def _record(self, source: str, target: str, message: FederationMessage) -> None:
        if self.on_frame is not None:
            self.on_frame(FrameRecord(source, target, message.type.value, message.request_id,
                                      message.hops_remaining))

    def receive_frame(self, frame: bytes) -> bytes:
        """Answer one inbound frame (MATCH_REQUEST) with one outbound frame."""
        message = decode_message(frame)
        return encode_message(self.handle_message(message))

    def handle_message(self, message: FederationMessage) -> FederationMessage:
        """Resolve a MATCH_REQUEST that arrived from another CC."""
        visited = _merge_visited(message.visited, [self.cc_id])

        def reply(kind: MessageType, payload: Dict, seen: Tuple[str, ...] = visited) -> FederationMessage:
            return FederationMessage(type=kind, request_id=message.request_id, origin_cc=message.origin_cc,
                                     visited=seen, hops_remaining=message.hops_remaining, payload=payload)

        if message.type is not MessageType.MATCH_REQUEST:
            return reply(MessageType.NO_MATCH, {"reason": f"unexpected {message.type.value}"})

        with self._resolving_lock:
            if self.cc_id in message.visited or message.request_id in self._resolving:
                debug(f"[{self.cc_id}] already handling {message.request_id}")
                return reply(MessageType.NO_MATCH, {"reason": "already visited"}, message.visited)
            self._resolving.add(message.request_id)
        try:
            try:
                request = format_request(_raw_from_payload(message.payload), self.kb, lenient=True)
            except UnknownConcept as e:
                warning(f"[{self.cc_id}] incompatible request {message.request_id} from {message.origin_cc}: {e}")
                return reply(MessageType.NO_MATCH, {"reason": "unknown concept"})
            except FormatError as e:
                warning(f"[{self.cc_id}] unreadable request {message.request_id}: {e}")
                return reply(MessageType.NO_MATCH, {"reason": "malformed request"})

            local = self.match_local(request)
            if local:
                return reply(MessageType.MATCH_RESPONSE, {
                    "responder": self.cc_id,
                    "candidates": [candidate_to_summary(c) for c in local],
                })
            if self.level == COMMUNITY and message.hops_remaining > 0:
                outcome = peer_fanout(self, message)
                if isinstance(outcome, Forwarded):
                    return reply(MessageType.MATCH_RESPONSE, {
                        "responder": outcome.responder_cc,
                        "candidates": [candidate_to_summary(c) for c in outcome.candidates],
                    })
                return reply(MessageType.NO_MATCH, {"reason": outcome.reason},
                             _merge_visited(visited, outcome.visited))
            return reply(MessageType.NO_MATCH, {"reason": "no match"})
        finally:
            with self._resolving_lock:
                self._resolving.discard(message.request_id)


def _request_payload(request: ServiceRequest) -> Dict:
    raw = request_to_raw(request)
    return {"source_kind": raw.source_kind.value, "fields": dict(raw.fields)}


def _raw_from_payload(payload: Dict) -> RawDescription:
    fields = payload.get("fields")
    if not isinstance(fields, dict):
        raise FormatError("payload carries no request fields")
    return RawDescription(payload.get("source_kind", SourceKind.HUMAN_FORM.value),
                          {str(k): str(v) for k, v in fields.items()})


def peer_fanout(cc: CoordinationCenter, message: FederationMessage) -> MatchOutcome:
    """
    Query cc's peers one at a time, in cc_id order, skipping visited ones.

    Each peer gets the request with one hop less and cc added to visited. The
    first peer answering with candidates wins; link failures skip the peer.
    """
    visited = _merge_visited(message.visited, [cc.cc_id])
    if message.hops_remaining <= 0:
        return NoMatch("hop budget exhausted", visited)
    reason = "no match"
    for peer in cc.peers:
        if peer in visited:
            continue
        try:
            outcome = cc._query(peer, message, visited)
        except (TransportError, DecodeError) as e:
            warning(f"[{cc.cc_id}] skipping peer {peer}: {e}")
            continue
        if isinstance(outcome, Forwarded):
            return outcome
        visited = _merge_visited(visited, outcome.visited)
        reason = outcome.reason
    return NoMatch(reason, visited)


def handle_request(cc: CoordinationCenter, request: ServiceRequest,
                   hop_budget: Optional[int] = None) -> MatchOutcome:
    return cc.handle_request(request, hop_budget)


#######################################################################
# FEDERATION
#######################################################################

@dataclass(frozen=True)
class CcSpec:
    cc_id: str
    level: str
    parent: Optional[str] = None
    peers: Tuple[str, ...] = ()


class Federation:
    """All CCs of one run, wired together by an in-process transport."""

    def __init__(self, kb: KnowledgeBase, specs: Sequence[CcSpec], *,
                 faults: Iterable[LinkFault] = (), options: Optional[MatchOptions] = None,
                 lenient: bool = Config.LENIENT_FORMAT):
        self.ccs: Dict[str, CoordinationCenter] = {}
        self.frames: List[FrameRecord] = []
        self.listeners: List[Callable[[FrameRecord], None]] = []
        self.transport = InProcessTransport(self, faults)
        for spec in specs:
            if spec.cc_id in self.ccs:
                raise TopologyError(f"{spec.cc_id}: defined twice")
            cc = CoordinationCenter(spec.cc_id, spec.level, kb, parent=spec.parent, peers=spec.peers,
                                    options=options, lenient=lenient, transport=self.transport)
            cc.on_frame = self._on_frame
            self.ccs[spec.cc_id] = cc
        validate_topology(self.ccs.values())

    def __getitem__(self, cc_id: str) -> CoordinationCenter:
        return self.ccs[cc_id]

    def _on_frame(self, record: FrameRecord) -> None:
        self.frames.append(record)
        for listener in self.listeners:
            listener(record)

    def count(self, message_type: MessageType) -> int:
        return sum(1 for f in self.frames if f.type == message_type.value)


def validate_topology(ccs: Iterable[CoordinationCenter]) -> None:
    """
    Raises:
        TopologyError: a CC breaks the house/community rules or links to an
            unknown or wrong-level CC
    """
    by_id = {cc.cc_id: cc for cc in ccs}
    for cc in by_id.values():
        cc.validate()
        if cc.parent is not None:
            parent = by_id.get(cc.parent)
            if parent is None or parent.level != COMMUNITY:
                raise TopologyError(f"{cc.cc_id}: parent {cc.parent!r} is not a known community")
        for peer in cc.peers:
            other = by_id.get(peer)
            if other is None or other.level != COMMUNITY:
                raise TopologyError(f"{cc.cc_id}: peer {peer!r} is not a known community")
