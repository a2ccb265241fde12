"""
Binding service: contracts between a requester and the selected provider.

A ContractBook belongs to one coordination center. It owns that center's
bookings, so the scheduler reads its booking snapshot from here and bind()
applies a selection atomically with the booking change. The book keeps a
version counter; a selection computed against an older version is refused
with StaleSelection and the caller rematches.

Contract lifecycle: ACTIVE -> COMPLETED | CANCELLED | PREEMPTED, nothing
else. Every contract keeps an append-only, time-ordered audit trail.
"""
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from caremesh.errors import InvalidTransition, StaleSelection, UnknownContract
from caremesh.models.common import Interval, Priority
from caremesh.models.descriptions import ServiceRequest
from caremesh.services.scheduler import Booking, Selection
from caremesh.utilities.helpers import format_sequence_id
from caremesh.utilities.logger import info, warning


class ContractStatus(str, Enum):
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    CANCELLED = "CANCELLED"
    PREEMPTED = "PREEMPTED"


TERMINAL_STATUSES = frozenset({ContractStatus.COMPLETED, ContractStatus.CANCELLED, ContractStatus.PREEMPTED})


class CancelActor(str, Enum):
    REQUESTER = "requester"
    PROVIDER = "provider"
    CC = "cc"


CANCEL_AUDIT = {
    CancelActor.REQUESTER: "cancelled by requester",
    CancelActor.PROVIDER: "cancelled by provider",
    CancelActor.CC: "cancelled by coordination center",
}
PROVIDER_UNREGISTERED = "provider unregistered"


@dataclass
class Contract:
    contract_id: str
    request_id: str
    record_id: str
    provider: str
    requester: str
    concept: str
    interval: Interval
    price: int
    priority: Priority
    status: ContractStatus = ContractStatus.ACTIVE
    audit: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def is_active(self) -> bool:
        return self.status is ContractStatus.ACTIVE

    def _append(self, time: int, text: str) -> None:
        if self.audit and time < self.audit[-1][0]:
            time = self.audit[-1][0]
        self.audit.append((time, text))

    def _transition(self, target: ContractStatus, time: int, text: str) -> None:
        if not self.is_active or target is ContractStatus.ACTIVE:
            raise InvalidTransition(self.contract_id, self.status.value, target.value)
        self.status = target
        self._append(time, text)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "contract_id": self.contract_id,
            "request_id": self.request_id,
            "record_id": self.record_id,
            "provider": self.provider,
            "requester": self.requester,
            "concept": self.concept,
            "interval": self.interval.as_list(),
            "price": self.price,
            "priority": self.priority.name,
            "status": self.status.value,
            "audit": [[t, text] for t, text in self.audit],
        }


@dataclass(frozen=True)
class InvocationRef:
    contract_id: str
    endpoint: str
    method_hint: str

    def to_dict(self) -> Dict[str, str]:
        return {"contract_id": self.contract_id, "endpoint": self.endpoint, "method_hint": self.method_hint}


class ContractBook:
    """Contracts and bookings of one coordination center."""

    def __init__(self, cc_id: str = ""):
        self.cc_id = cc_id
        self._contracts: Dict[str, Contract] = {}
        self._bookings: List[Booking] = []
        self._requests: Dict[str, Tuple[ServiceRequest, str]] = {}
        self._counter = 0
        self._version = 0
        self._lock = threading.RLock()

    @property
    def version(self) -> int:
        return self._version

    def bookings(self) -> List[Booking]:
        with self._lock:
            return list(self._bookings)

    def contracts(self) -> List[Contract]:
        with self._lock:
            return list(self._contracts.values())

    def contracts_map(self) -> Dict[str, Contract]:
        with self._lock:
            return dict(self._contracts)

    def get(self, contract_id: str) -> Contract:
        contract = self._contracts.get(contract_id)
        if contract is None:
            raise UnknownContract(contract_id)
        return contract

    def request_for(self, contract_id: str) -> Tuple[ServiceRequest, str]:
        """The request a contract was bound for and the cc that raised it."""
        self.get(contract_id)
        return self._requests[contract_id]

    def _release(self, contract_id: str, now: int) -> None:
        """Give back the part of the contract's booking from now onward."""
        kept = []
        for booking in self._bookings:
            if booking.contract_id != contract_id or now >= booking.interval.end:
                kept.append(booking)
            elif now > booking.interval.start:
                kept.append(Booking(booking.contract_id, booking.record_id,
                                    Interval(booking.interval.start, now), booking.priority))
        self._bookings = kept
        self._version += 1

    def bind(self, request: ServiceRequest, selection: Selection, now: int,
             origin_cc: Optional[str] = None) -> Tuple[Contract, Optional[InvocationRef]]:
        """
        Turn a selection into an ACTIVE contract and record its booking.

        Returns:
            (contract, invocation reference for device offers or None)

        Raises:
            StaleSelection: bookings changed since the selection was computed,
                or the contract to preempt is no longer ACTIVE
        """
        with self._lock:
            if selection.booking_version != self._version:
                warning(f"[{self.cc_id}] stale selection for {request.id}: "
                        f"version {selection.booking_version}, book at {self._version}")
                raise StaleSelection(f"bookings changed since selection for {request.id}")
            victim = None
            if selection.preempted:
                victim = self._contracts.get(selection.preempted)
                if victim is None or not victim.is_active:
                    raise StaleSelection(f"contract {selection.preempted} is no longer active")

            self._counter += 1
            contract_id = format_sequence_id("c", self._counter)
            offer = selection.candidate.offer
            contract = Contract(
                contract_id=contract_id,
                request_id=request.id,
                record_id=selection.candidate.record_id,
                provider=offer.provider,
                requester=request.requester,
                concept=offer.concept,
                interval=selection.interval,
                price=offer.price,
                priority=request.priority,
            )
            contract._append(now, f"bound at {now}")

            if victim is not None:
                victim._transition(ContractStatus.PREEMPTED, now, f"preempted by {contract_id}")
                self._bookings = [b for b in self._bookings if b.contract_id != victim.contract_id]
                contract._append(now, f"preempted {victim.contract_id}")
                info(f"[{self.cc_id}] {contract_id} preempted {victim.contract_id}")

            self._contracts[contract_id] = contract
            self._requests[contract_id] = (request, origin_cc or self.cc_id)
            self._bookings.append(Booking(contract_id, contract.record_id, selection.interval, request.priority))
            self._version += 1

        reference = None
        if offer.invocation_endpoint:
            reference = InvocationRef(contract_id, offer.invocation_endpoint, f"invoke:{offer.concept}")
        info(f"[{self.cc_id}] bound {contract_id}: {request.id} -> {contract.record_id} "
             f"[{selection.interval.start},{selection.interval.end})")
        return contract, reference

    def settle(self, contract_id: str, outcome: ContractStatus, now: int,
               actor: CancelActor = CancelActor.CC, reason: Optional[str] = None) -> Contract:
        """
        Complete or cancel an ACTIVE contract and release its booking from now on.

        Raises:
            UnknownContract, InvalidTransition
        """
        outcome = ContractStatus(outcome)
        if outcome not in (ContractStatus.COMPLETED, ContractStatus.CANCELLED):
            raise InvalidTransition(contract_id, "settle", outcome.value)
        with self._lock:
            contract = self.get(contract_id)
            if outcome is ContractStatus.COMPLETED:
                text = f"completed at {now}"
            else:
                text = reason or CANCEL_AUDIT[CancelActor(actor)]
            contract._transition(outcome, now, text)
            self._release(contract_id, now)
        return contract

    def cancel(self, contract_id: str, actor: CancelActor, now: int) -> Contract:
        return self.settle(contract_id, ContractStatus.CANCELLED, now, actor=actor)

    def cancel_for_record(self, record_id: str, now: int) -> List[Contract]:
        """Cancel every ACTIVE contract on a record whose provider just unregistered."""
        with self._lock:
            affected = [c for c in self._contracts.values() if c.record_id == record_id and c.is_active]
            for contract in affected:
                self.settle(contract.contract_id, ContractStatus.CANCELLED, now, reason=PROVIDER_UNREGISTERED)
        return affected

    def complete_due(self, now: int) -> List[Contract]:
        """Auto-complete ACTIVE contracts whose interval has ended by now."""
        with self._lock:
            due = [c for c in self._contracts.values() if c.is_active and c.interval.end <= now]
            for contract in due:
                self.settle(contract.contract_id, ContractStatus.COMPLETED, contract.interval.end)
        return due

    def complete_remaining(self, now: int) -> List[Contract]:
        """Complete every still-ACTIVE contract at now, in contract id order."""
        with self._lock:
            remaining = sorted((c for c in self._contracts.values() if c.is_active),
                               key=lambda c: c.contract_id)
            for contract in remaining:
                self.settle(contract.contract_id, ContractStatus.COMPLETED, now)
        return remaining

    def community_cost(self) -> int:
        """Sum of prices over COMPLETED contracts, in cents."""
        with self._lock:
            return sum(c.price for c in self._contracts.values() if c.status is ContractStatus.COMPLETED)
