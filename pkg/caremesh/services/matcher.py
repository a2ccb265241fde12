"""
Semantic match service.

Grades how well each registered offer's concept serves a request's concept
using the knowledge base, drops candidates that break the request's hard
constraints, and ranks the rest. Requests with no local candidate are handed
to the federation layer through match_or_forward.

Degrees, best first: EXACT, SUBSUMING (provider registered for a broader
concept), RULE (a fulfillment rule applies) and, only when allow_narrower is
set, NARROWER (provider registered for a more specific concept).
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, List, Optional, Tuple, Union

from caremesh.config.config import Config
from caremesh.errors import FederationError, UnknownId
from caremesh.models.descriptions import ServiceRequest
from caremesh.models.knowledge_base import KnowledgeBase, derive_fulfills, is_subconcept, isa_distance
from caremesh.models.registry import RegistryRecord
from caremesh.utilities.logger import debug, warning


class MatchDegree(IntEnum):
    NARROWER = 0
    RULE = 1
    SUBSUMING = 2
    EXACT = 3


@dataclass(frozen=True)
class MatchOptions:
    allow_narrower: bool = Config.ALLOW_NARROWER
    syntactic_only: bool = False


@dataclass(frozen=True)
class MatchCandidate:
    record: RegistryRecord
    degree: MatchDegree
    isa_hops: int = 0
    score: float = 0.0

    def __post_init__(self):
        if self.degree is MatchDegree.EXACT and self.isa_hops != 0:
            raise ValueError("exact matches have no is-a hops")

    @property
    def record_id(self) -> str:
        return self.record.record_id

    @property
    def offer(self):
        return self.record.offer

    def rank_key(self) -> Tuple[int, int, str]:
        return (-int(self.degree), self.isa_hops, self.record.record_id)


@dataclass(frozen=True)
class LocalCandidates:
    candidates: List[MatchCandidate]


@dataclass(frozen=True)
class Forwarded:
    responder_cc: str
    candidates: List[MatchCandidate]


@dataclass(frozen=True)
class NoMatch:
    reason: str = "no match"
    visited: Tuple[str, ...] = field(default_factory=tuple)


MatchOutcome = Union[LocalCandidates, Forwarded, NoMatch]


def functional_match(kb: KnowledgeBase, request_concept: str, offer_concept: str,
                     allow_narrower: bool = False) -> Optional[Tuple[MatchDegree, int]]:
    """
    Grade an offer concept against a request concept.

    Returns:
        (degree, isa_hops), or None when the offer cannot serve the request

    Raises:
        UnknownId: either concept is missing from the KB
    """
    kb.require(request_concept)
    kb.require(offer_concept)
    if request_concept == offer_concept:
        return MatchDegree.EXACT, 0
    if is_subconcept(kb, request_concept, offer_concept):
        return MatchDegree.SUBSUMING, isa_distance(kb, request_concept, offer_concept)
    if derive_fulfills(kb, offer_concept, request_concept):
        return MatchDegree.RULE, 0
    if allow_narrower and is_subconcept(kb, offer_concept, request_concept):
        return MatchDegree.NARROWER, isa_distance(kb, offer_concept, request_concept)
    return None


def filter_constraints(candidates: Iterable[MatchCandidate], request: ServiceRequest) -> List[MatchCandidate]:
    """Keep the candidates whose offer satisfies every hard constraint, in order."""
    c = request.constraints
    kept = []
    for candidate in candidates:
        offer = candidate.offer
        if c.max_price is not None and offer.price > c.max_price:
            continue
        if c.min_quality is not None and offer.quality < c.min_quality:
            continue
        if offer.provider_type not in c.allowed_provider_types:
            continue
        if c.max_distance is not None and request.location.distance_to(offer.location) > c.max_distance:
            continue
        kept.append(candidate)
    return kept


def match_request(kb: KnowledgeBase, records: Iterable[RegistryRecord], request: ServiceRequest,
                  options: Optional[MatchOptions] = None) -> List[MatchCandidate]:
    """
    Rank the ACTIVE records that can serve the request.

    Order: degree (best first), then is-a hops, then record_id. Scores are
    left at 0 for the scheduler to fill.
    """
    options = options or MatchOptions()
    candidates = []
    for record in records:
        if not record.is_active:
            continue
        if options.syntactic_only:
            if record.offer.concept == request.concept:
                candidates.append(MatchCandidate(record, MatchDegree.EXACT, 0))
            continue
        try:
            graded = functional_match(kb, request.concept, record.offer.concept, options.allow_narrower)
        except UnknownId as e:
            debug(f"Skipping {record.record_id} during match: {e}")
            continue
        if graded is not None:
            candidates.append(MatchCandidate(record, graded[0], graded[1]))

    ranked = filter_constraints(candidates, request)
    ranked.sort(key=MatchCandidate.rank_key)
    return ranked


def match_or_forward(cc, request: ServiceRequest, hop_budget: int) -> MatchOutcome:
    """
    Local match first; forward through the federation only when nothing local fits.

    Args:
        cc: CoordinationCenter handling the request
        request: Formatted request
        hop_budget: Remaining federation forwards (>= 0)

    Returns:
        LocalCandidates, Forwarded or NoMatch
    """
    if hop_budget < 0:
        raise ValueError("hop_budget must be >= 0")

    local = cc.match_local(request)
    if local:
        return LocalCandidates(local)
    if hop_budget == 0 or not cc.has_links():
        return NoMatch("no local match", (cc.cc_id,))
    try:
        return cc.forward(request, hop_budget)
    except FederationError as e:
        warning(f"[{cc.cc_id}] forwarding {request.id} failed: {e}")
        return NoMatch(f"federation failure: {e}", (cc.cc_id,))
