"""
Exception hierarchy for caremesh.

Every error raised on purpose by the library derives from CaremeshError so the
CLI and the daemon can map failures to exit codes and HTTP statuses in one place.
"""
from typing import Optional


class CaremeshError(Exception):
    """Base class for all caremesh errors."""


#######################################################################
# KNOWLEDGE BASE
#######################################################################

class KnowledgeBaseError(CaremeshError):
    """A knowledge base query or mutation was rejected."""


class UnknownId(KnowledgeBaseError):
    def __init__(self, identifier: str, kind: str = "concept"):
        super().__init__(f"unknown {kind} id {identifier!r}")
        self.identifier = identifier
        self.kind = kind


class CycleDetected(KnowledgeBaseError):
    def __init__(self, child: str, parent: str):
        super().__init__(f"is-a edge {child!r} -> {parent!r} would create a cycle")
        self.child = child
        self.parent = parent


class ConceptInUse(KnowledgeBaseError):
    def __init__(self, concept: str, reason: str):
        super().__init__(f"concept {concept!r} is still referenced: {reason}")
        self.concept = concept
        self.reason = reason


class DuplicateId(KnowledgeBaseError):
    """The concept, edge or rule being added already exists."""


class OntologyFileError(KnowledgeBaseError):
    """An ontology definition file is unreadable or violates KB invariants."""


#######################################################################
# FORMAT SERVICE
#######################################################################

class FormatError(CaremeshError):
    """A raw description could not be turned into a semantic description."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class MissingField(FormatError):
    def __init__(self, field: str):
        super().__init__("required field is missing", field)


class MalformedField(FormatError):
    pass


class UnknownConcept(FormatError):
    def __init__(self, concept: str, field: str = "service_type"):
        super().__init__(f"unknown concept {concept!r}", field)
        self.concept = concept


class UnknownField(FormatError):
    def __init__(self, field: str):
        super().__init__("unknown field (use lenient mode to ignore)", field)


class InvariantViolation(FormatError):
    pass


#######################################################################
# REGISTRY
#######################################################################

class RegistryError(CaremeshError):
    """A registry operation was rejected."""


class UnknownRecord(RegistryError):
    def __init__(self, record_id: str):
        super().__init__(f"unknown record {record_id!r}")
        self.record_id = record_id


class DuplicateOffer(RegistryError):
    def __init__(self, provider: str, concept: str, existing: str):
        super().__init__(
            f"provider {provider!r} already offers {concept!r} as {existing}; update that record instead"
        )
        self.provider = provider
        self.concept = concept
        self.existing = existing


class TaxonomyFileError(RegistryError):
    """A taxonomy table file is unreadable or holds malformed codes."""


#######################################################################
# BINDING
#######################################################################

class BindingError(CaremeshError):
    """A contract operation was rejected."""


class UnknownContract(BindingError):
    def __init__(self, contract_id: str):
        super().__init__(f"unknown contract {contract_id!r}")
        self.contract_id = contract_id


class InvalidTransition(BindingError):
    def __init__(self, contract_id: str, current: str, target: str):
        super().__init__(f"contract {contract_id!r} cannot move from {current} to {target}")
        self.contract_id = contract_id


class StaleSelection(BindingError):
    """Booking state changed between selection and binding; the caller must rematch."""


#######################################################################
# FEDERATION
#######################################################################

class FederationError(CaremeshError):
    """Federation topology or protocol failure."""


class TransportError(FederationError):
    def __init__(self, source: str, target: str, reason: str):
        super().__init__(f"link {source} -> {target} failed: {reason}")
        self.source = source
        self.target = target


class DecodeError(FederationError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class TopologyError(FederationError):
    """Coordination center links violate the topology invariants."""


#######################################################################
# SCENARIOS
#######################################################################

class ScenarioError(CaremeshError):
    """A scenario file could not be loaded."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass
