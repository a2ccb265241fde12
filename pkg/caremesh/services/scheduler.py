"""
Scheduler: picks one provider among the ranked match candidates.

A candidate is usable when it has a free slot of the request's duration
inside both the request window and one of the offer's availability
intervals, with fewer than `capacity` bookings overlapping at every moment.
Among usable candidates the best is the minimum of
(-degree, -score, interval start, record_id).

Scores weight quality, price and distance after min-max normalization over
the candidate cohort; a criterion that is constant across the cohort
normalizes to 0.

EMERGENCY requests that find no free slot may displace one booking of lower
priority (the lowest priority, then latest starting, overlapping booking).
"""
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Sequence, Tuple

from caremesh.models.common import Interval, Priority
from caremesh.models.descriptions import ServiceRequest
from caremesh.services.matcher import MatchCandidate
from caremesh.utilities.logger import info


@dataclass(frozen=True)
class Booking:
    contract_id: str
    record_id: str
    interval: Interval
    priority: Priority


@dataclass(frozen=True)
class Selection:
    candidate: MatchCandidate
    interval: Interval
    preempted: Optional[str] = None
    booking_version: int = 0


def _fits(start: int, duration: int, bookings: Sequence[Booking], capacity: int) -> bool:
    """Booking depth stays below capacity over [start, start + duration)."""
    end = start + duration
    overlapping = [b.interval for b in bookings if b.interval.start < end and start < b.interval.end]
    if len(overlapping) < capacity:
        return True
    # depth only rises at booking starts, so check those points
    for point in {start} | {i.start for i in overlapping if i.start > start}:
        if sum(1 for i in overlapping if i.start <= point < i.end) >= capacity:
            return False
    return True


def feasible(candidate: MatchCandidate, request: ServiceRequest,
             bookings: Sequence[Booking]) -> Optional[Interval]:
    """
    Earliest slot of request.estimated_duration for this candidate.

    Only bookings on the candidate's record are considered.
    """
    offer = candidate.offer
    duration = request.estimated_duration
    own = [b for b in bookings if b.record_id == candidate.record_id]
    for available in sorted(offer.availability):
        lo = max(available.start, request.window.start)
        hi = min(available.end, request.window.end)
        if hi - lo < duration:
            continue
        # the earliest free start is the range start or the end of some booking
        starts = sorted({lo} | {b.interval.end for b in own if lo < b.interval.end <= hi - duration})
        for start in starts:
            if _fits(start, duration, own, offer.capacity):
                return Interval(start, start + duration)
    return None


def _normalized(values: Sequence[float]) -> List[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


def score_cohort(cohort: Sequence[MatchCandidate], request: ServiceRequest) -> List[float]:
    """Scores of every cohort member, in cohort order."""
    if not cohort:
        return []
    w = request.preferences
    nq = _normalized([c.offer.quality for c in cohort])
    np_ = _normalized([c.offer.price for c in cohort])
    nd = _normalized([request.location.distance_to(c.offer.location) for c in cohort])
    return [
        w.w_quality * q + w.w_price * (1 - p) + w.w_distance * (1 - d)
        for q, p, d in zip(nq, np_, nd)
    ]


def score(candidate: MatchCandidate, request: ServiceRequest, cohort: Sequence[MatchCandidate]) -> float:
    """Preference score of candidate within cohort, in [0, 1]."""
    for member, value in zip(cohort, score_cohort(cohort, request)):
        if member.record_id == candidate.record_id:
            return value
    raise ValueError(f"candidate {candidate.record_id} is not in the cohort")


def _selection_key(option: Tuple[MatchCandidate, Interval, Optional[str]]) -> Tuple:
    candidate, interval, _ = option
    return (-int(candidate.degree), -candidate.score, interval.start, candidate.record_id)


def _victim(candidate: MatchCandidate, request: ServiceRequest, bookings: Sequence[Booking],
            contracts: Optional[Mapping[str, object]]) -> Optional[Booking]:
    eligible = [
        b for b in bookings
        if b.record_id == candidate.record_id
        and b.priority < Priority.EMERGENCY
        and b.interval.overlaps(request.window)
        and (contracts is None or getattr(contracts.get(b.contract_id), "is_active", False))
    ]
    if not eligible:
        return None
    return min(eligible, key=lambda b: (int(b.priority), -b.interval.start, b.contract_id))


def select_with_preemption(candidates: Sequence[MatchCandidate], request: ServiceRequest,
                           bookings: Sequence[Booking], contracts: Optional[Mapping[str, object]] = None,
                           booking_version: int = 0) -> Optional[Selection]:
    """
    Choose the candidate and slot to bind.

    Args:
        candidates: Ranked output of the matcher
        request: The request being scheduled
        bookings: Current bookings of the scheduling coordination center
        contracts: contract_id -> Contract; when given, only ACTIVE contracts
            can be preempted
        booking_version: Version of the booking set, carried into the
            Selection so binding can detect stale state

    Returns:
        Selection, or None when no candidate can be scheduled
    """
    if not candidates:
        return None
    scores = score_cohort(candidates, request)
    scored = [replace(c, score=s) for c, s in zip(candidates, scores)]

    options = []
    for candidate in scored:
        interval = feasible(candidate, request, bookings)
        if interval is not None:
            options.append((candidate, interval, None))

    if not options and request.priority is Priority.EMERGENCY:
        for candidate in scored:
            victim = _victim(candidate, request, bookings, contracts)
            if victim is None:
                continue
            remaining = [b for b in bookings if b is not victim]
            interval = feasible(candidate, request, remaining)
            if interval is not None:
                options.append((candidate, interval, victim.contract_id))

    if not options:
        return None
    candidate, interval, preempted = min(options, key=_selection_key)
    if preempted:
        info(f"Emergency request {request.id} preempts {preempted} on {candidate.record_id}")
    return Selection(candidate, interval, preempted, booking_version)
