"""
Knowledge Base Module
=====================

Domain ontologies (concepts linked by Is-a into one DAG) plus fulfillment
rules, and the reasoning the matcher needs on top of them:

- is_subconcept: reflexive-transitive Is-a closure
- isa_distance: shortest Is-a path length
- derive_fulfills: rule fulfillment closed under specialization on both sides

A KnowledgeBase is an immutable snapshot. kb_mutate returns a new snapshot
with a higher version and leaves the input untouched, so readers can keep
querying an old snapshot while a writer publishes a new one through
KnowledgeBaseStore.

Is-a edges point from child to parent in the underlying networkx DiGraph, so
the networkx "descendants" of a node are its Is-a ancestors.
"""
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from caremesh.errors import (
    ConceptInUse, CycleDetected, DuplicateId, KnowledgeBaseError, OntologyFileError, UnknownId
)
from caremesh.utilities.logger import debug, warning
from caremesh.utilities.sanitizers import is_token, normalize_id


@dataclass(frozen=True)
class Concept:
    id: str
    label: str
    domain: str


@dataclass(frozen=True, order=True)
class IsaEdge:
    child: str
    parent: str


@dataclass(frozen=True, order=True)
class FulfillmentRule:
    provider_concept: str
    request_concept: str
    rationale: str = field(default="", compare=False)

    @property
    def key(self) -> Tuple[str, str]:
        return (self.provider_concept, self.request_concept)


class KbOp(str, Enum):
    ADD_CONCEPT = "add_concept"
    REMOVE_CONCEPT = "remove_concept"
    ADD_ISA = "add_isa"
    REMOVE_ISA = "remove_isa"
    ADD_RULE = "add_rule"
    REMOVE_RULE = "remove_rule"


class KnowledgeBase:
    """
    Immutable snapshot of concepts, Is-a edges and fulfillment rules.

    Build one with knowledge_base_from_dict / load_knowledge_base, or start
    from KnowledgeBase() and apply kb_mutate.
    """

    def __init__(self, domains: Optional[Iterable[str]] = None):
        self._concepts: Dict[str, Concept] = {}
        self._graph = nx.DiGraph()
        self._rules: Dict[Tuple[str, str], FulfillmentRule] = {}
        self._version = 0
        self._domains: Optional[FrozenSet[str]] = (
            frozenset(normalize_id(d) for d in domains) if domains is not None else None
        )
        self._ancestor_cache: Dict[str, FrozenSet[str]] = {}

    @property
    def version(self) -> int:
        return self._version

    @property
    def concepts(self) -> Mapping[str, Concept]:
        return MappingProxyType(self._concepts)

    @property
    def isa_edges(self) -> Tuple[IsaEdge, ...]:
        return tuple(sorted(IsaEdge(c, p) for c, p in self._graph.edges))

    @property
    def rules(self) -> Tuple[FulfillmentRule, ...]:
        return tuple(self._rules[key] for key in sorted(self._rules))

    @property
    def domains(self) -> FrozenSet[str]:
        """Declared domains, or the domains in use when none were declared."""
        if self._domains is not None:
            return self._domains
        return frozenset(c.domain for c in self._concepts.values())

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self._concepts

    def __len__(self) -> int:
        return len(self._concepts)

    def __repr__(self) -> str:
        return (f"KnowledgeBase(version={self._version}, concepts={len(self._concepts)}, "
                f"isa={self._graph.number_of_edges()}, rules={len(self._rules)})")

    def _copy(self) -> "KnowledgeBase":
        clone = KnowledgeBase.__new__(KnowledgeBase)
        clone._concepts = dict(self._concepts)
        clone._graph = self._graph.copy()
        clone._rules = dict(self._rules)
        clone._version = self._version
        clone._domains = self._domains
        clone._ancestor_cache = {}
        return clone

    def require(self, concept_id: str) -> str:
        """Return concept_id if it exists, else raise UnknownId."""
        if concept_id not in self._concepts:
            raise UnknownId(concept_id)
        return concept_id

    def ancestors_or_self(self, concept_id: str) -> FrozenSet[str]:
        self.require(concept_id)
        cached = self._ancestor_cache.get(concept_id)
        if cached is None:
            cached = frozenset(nx.descendants(self._graph, concept_id)) | {concept_id}
            self._ancestor_cache[concept_id] = cached
        return cached

    # Mutation steps. Only ever called on a private copy inside kb_mutate or the loader.

    def _add_concept(self, concept: Concept) -> None:
        if not concept.id or not is_token(concept.id):
            raise KnowledgeBaseError(f"concept id {concept.id!r} is not a lowercase token")
        if concept.id in self._concepts:
            raise DuplicateId(f"concept {concept.id!r} already exists")
        if self._domains is not None and concept.domain not in self._domains:
            raise UnknownId(concept.domain, kind="domain")
        self._concepts[concept.id] = concept
        self._graph.add_node(concept.id)

    def _remove_concept(self, concept_id: str, in_use: Optional[Callable[[str], bool]]) -> None:
        self.require(concept_id)
        if self._graph.degree(concept_id) > 0:
            raise ConceptInUse(concept_id, "is-a edges")
        if any(concept_id in key for key in self._rules):
            raise ConceptInUse(concept_id, "fulfillment rules")
        if in_use is not None and in_use(concept_id):
            raise ConceptInUse(concept_id, "live registry records")
        del self._concepts[concept_id]
        self._graph.remove_node(concept_id)

    def _add_isa(self, edge: IsaEdge) -> None:
        self.require(edge.child)
        self.require(edge.parent)
        if edge.child == edge.parent:
            raise CycleDetected(edge.child, edge.parent)
        if self._graph.has_edge(edge.child, edge.parent):
            raise DuplicateId(f"is-a edge {edge.child!r} -> {edge.parent!r} already exists")
        if nx.has_path(self._graph, edge.parent, edge.child):
            raise CycleDetected(edge.child, edge.parent)
        self._graph.add_edge(edge.child, edge.parent)

    def _remove_isa(self, edge: IsaEdge) -> None:
        if not self._graph.has_edge(edge.child, edge.parent):
            raise UnknownId(f"{edge.child}->{edge.parent}", kind="is-a edge")
        self._graph.remove_edge(edge.child, edge.parent)

    def _add_rule(self, rule: FulfillmentRule) -> None:
        self.require(rule.provider_concept)
        self.require(rule.request_concept)
        if rule.key in self._rules:
            raise DuplicateId(f"rule {rule.provider_concept!r} fulfills {rule.request_concept!r} already exists")
        self._rules[rule.key] = rule

    def _remove_rule(self, rule: FulfillmentRule) -> None:
        if rule.key not in self._rules:
            raise UnknownId(f"{rule.provider_concept}=>{rule.request_concept}", kind="rule")
        del self._rules[rule.key]


#######################################################################
# PAYLOAD COERCION
#######################################################################

def _as_concept(payload: Any) -> Concept:
    if isinstance(payload, Concept):
        return Concept(normalize_id(payload.id), payload.label, normalize_id(payload.domain))
    if isinstance(payload, Mapping):
        return Concept(normalize_id(str(payload['id'])),
                       str(payload.get('label', payload['id'])),
                       normalize_id(str(payload['domain'])))
    raise KnowledgeBaseError(f"cannot read a concept from {payload!r}")


def _as_edge(payload: Any) -> IsaEdge:
    if isinstance(payload, IsaEdge):
        child, parent = payload.child, payload.parent
    elif isinstance(payload, Mapping):
        child, parent = payload['child'], payload['parent']
    else:
        child, parent = payload
    return IsaEdge(normalize_id(child), normalize_id(parent))


def _as_rule(payload: Any) -> FulfillmentRule:
    if isinstance(payload, FulfillmentRule):
        provider, request, rationale = payload.provider_concept, payload.request_concept, payload.rationale
    elif isinstance(payload, Mapping):
        provider = payload.get('provider', payload.get('provider_concept'))
        request = payload.get('request', payload.get('request_concept'))
        rationale = payload.get('rationale', '')
    else:
        provider, request = payload[0], payload[1]
        rationale = payload[2] if len(payload) > 2 else ''
    return FulfillmentRule(normalize_id(provider), normalize_id(request), rationale)


#######################################################################
# OPERATIONS
#######################################################################

def kb_mutate(kb: KnowledgeBase, op: Union[KbOp, str], payload: Any,
              in_use: Optional[Callable[[str], bool]] = None) -> KnowledgeBase:
    """
    Apply one mutation and return the new snapshot.

    The input snapshot is never modified; on error nothing changes and the
    exception propagates.

    Args:
        kb: Current snapshot
        op: One of KbOp (or its string value)
        payload: Concept / concept id / IsaEdge / FulfillmentRule, or the
            equivalent mapping or tuple form
        in_use: Reference check for remove_concept; returns True when live
            registry records still use the concept

    Returns:
        New KnowledgeBase with version + 1

    Raises:
        CycleDetected, ConceptInUse, UnknownId, DuplicateId, or
        KnowledgeBaseError for an unknown op or a malformed payload
    """
    try:
        op = KbOp(op)
    except ValueError:
        raise KnowledgeBaseError(f"unknown mutation {op!r}") from None

    try:
        if op is KbOp.ADD_CONCEPT:
            target = _as_concept(payload)
        elif op is KbOp.REMOVE_CONCEPT:
            target = normalize_id(str(payload))
        elif op in (KbOp.ADD_ISA, KbOp.REMOVE_ISA):
            target = _as_edge(payload)
        else:
            target = _as_rule(payload)
    except (KeyError, IndexError, TypeError, ValueError, AttributeError) as e:
        raise KnowledgeBaseError(f"malformed {op.value} payload {payload!r}: {type(e).__name__} {e}") from None

    updated = kb._copy()
    try:
        if op is KbOp.ADD_CONCEPT:
            updated._add_concept(target)
        elif op is KbOp.REMOVE_CONCEPT:
            updated._remove_concept(target, in_use)
        elif op is KbOp.ADD_ISA:
            updated._add_isa(target)
        elif op is KbOp.REMOVE_ISA:
            updated._remove_isa(target)
        elif op is KbOp.ADD_RULE:
            updated._add_rule(target)
        elif op is KbOp.REMOVE_RULE:
            updated._remove_rule(target)
    except KnowledgeBaseError as e:
        debug(f"KB mutation {op.value} rejected at version {kb.version}: {e}")
        raise

    updated._version = kb.version + 1
    return updated


def is_subconcept(kb: KnowledgeBase, a: str, b: str) -> bool:
    """True iff a = b or b is reachable from a along Is-a edges."""
    kb.require(b)
    return b in kb.ancestors_or_self(a)


def isa_distance(kb: KnowledgeBase, a: str, b: str) -> Optional[int]:
    """Shortest Is-a path length from a to b; None when a is not a subconcept of b."""
    if not is_subconcept(kb, a, b):
        return None
    return nx.shortest_path_length(kb._graph, a, b)


def derive_fulfills(kb: KnowledgeBase, provider_c: str, request_c: str) -> bool:
    """
    True iff some rule (p, r) has provider_c is-a* p and request_c is-a* r.
    """
    provider_up = kb.ancestors_or_self(provider_c)
    request_up = kb.ancestors_or_self(request_c)
    return any(p in provider_up and r in request_up for p, r in kb._rules)


def ancestors(kb: KnowledgeBase, a: str) -> List[str]:
    """Strict Is-a ancestors of a, sorted."""
    return sorted(kb.ancestors_or_self(a) - {a})


def descendants(kb: KnowledgeBase, a: str) -> List[str]:
    """Strict Is-a descendants (specializations) of a, sorted."""
    kb.require(a)
    return sorted(nx.ancestors(kb._graph, a))


#######################################################################
# ONTOLOGY FILES
#######################################################################

class _ConceptEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    id: str = Field(min_length=1)
    label: Optional[str] = None
    domain: str = Field(min_length=1)


class _IsaEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    child: str
    parent: str


class _RuleEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    provider: str
    request: str
    rationale: str = ""


class OntologyDocument(BaseModel):
    """Schema of an ontology definition file."""
    model_config = ConfigDict(extra='forbid')

    domains: Optional[List[str]] = None
    concepts: List[_ConceptEntry] = Field(default_factory=list)
    isa: List[_IsaEntry] = Field(default_factory=list)
    rules: List[_RuleEntry] = Field(default_factory=list)


def knowledge_base_from_dict(data: Mapping[str, Any], source: str = "<ontology>") -> KnowledgeBase:
    """
    Build a KnowledgeBase from the ontology-file structure.

    The result has version 1. Every violation is reported with the JSON path
    of the offending entry, e.g. "isa[4]: is-a edge 'a' -> 'c' would create a cycle".

    Raises:
        OntologyFileError
    """
    try:
        document = OntologyDocument.model_validate(data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first['loc'])
        raise OntologyFileError(f"{source}: {location}: {first['msg']}") from e

    kb = KnowledgeBase(domains=document.domains)
    sections = (
        ('concepts', document.concepts,
         lambda entry: kb._add_concept(_as_concept({'id': entry.id, 'label': entry.label or entry.id,
                                                    'domain': entry.domain}))),
        ('isa', document.isa, lambda entry: kb._add_isa(_as_edge((entry.child, entry.parent)))),
        ('rules', document.rules,
         lambda entry: kb._add_rule(_as_rule((entry.provider, entry.request, entry.rationale)))),
    )
    for section, entries, apply in sections:
        for index, entry in enumerate(entries):
            try:
                apply(entry)
            except KnowledgeBaseError as e:
                raise OntologyFileError(f"{source}: {section}[{index}]: {e}") from e

    kb._version = 1
    return kb


def load_knowledge_base(path: str) -> KnowledgeBase:
    """
    Load an ontology definition file (JSON).

    Raises:
        OntologyFileError: with line information for JSON syntax errors and
            a path-qualified message for invariant violations
    """
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise OntologyFileError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except OSError as e:
        raise OntologyFileError(f"{path}: {e.strerror}") from e

    kb = knowledge_base_from_dict(data, source=path)
    if not kb.rules:
        warning(f"Ontology {path} declares no fulfillment rules; only exact and is-a matches are possible")
    return kb


def dump_knowledge_base(kb: KnowledgeBase) -> Dict[str, Any]:
    """Ontology-file form of a snapshot (inverse of knowledge_base_from_dict)."""
    document: Dict[str, Any] = {
        'concepts': [
            {'id': c.id, 'label': c.label, 'domain': c.domain}
            for c in (kb.concepts[cid] for cid in sorted(kb.concepts))
        ],
        'isa': [{'child': e.child, 'parent': e.parent} for e in kb.isa_edges],
        'rules': [
            {'provider': r.provider_concept, 'request': r.request_concept, 'rationale': r.rationale}
            for r in kb.rules
        ],
    }
    if kb._domains is not None:
        document['domains'] = sorted(kb._domains)
    return document


class KnowledgeBaseStore:
    """
    Holder of the current KnowledgeBase snapshot.

    Readers take snapshot() and query it without locking. Writers go through
    mutate(), which serializes mutations and publishes the new snapshot.
    """

    def __init__(self, kb: Optional[KnowledgeBase] = None):
        self._kb = kb if kb is not None else KnowledgeBase()
        self._lock = threading.Lock()

    def snapshot(self) -> KnowledgeBase:
        return self._kb

    def mutate(self, op: Union[KbOp, str], payload: Any,
               in_use: Optional[Callable[[str], bool]] = None) -> KnowledgeBase:
        with self._lock:
            self._kb = kb_mutate(self._kb, op, payload, in_use=in_use)
            return self._kb
