"""
Scenario files.

A scenario is a JSON document (bundled ones use the .scn extension) holding
the horizon, the ontology and taxonomy (file references relative to the
scenario, or inline objects), the CC topology with optional link faults,
device context triggers and the timed event list.

load_scenario validates everything up front: schema, event order, topology
rules and every concept the events mention. Problems are reported with the
JSON path of the offending value, e.g.
"events[3].payload.fields.service_type: unknown concept 'teleportation'".
"""
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from caremesh.config.config import Config
from caremesh.errors import (
    KnowledgeBaseError, ParseError, RegistryError, ValidationError
)
from caremesh.models.descriptions import ContextTrigger, SourceKind, triggers_from_dicts
from caremesh.models.knowledge_base import KnowledgeBase, knowledge_base_from_dict, load_knowledge_base
from caremesh.models.registry import TaxonomyTable, load_taxonomy_table, taxonomy_table_from_dict
from caremesh.services.federation import COMMUNITY, HOUSE, CcSpec, LinkFault
from caremesh.utilities.logger import debug
from caremesh.utilities.sanitizers import normalize_id


class EventKind(str, Enum):
    REGISTER = "register"
    UNREGISTER = "unregister"
    REQUEST = "request"
    SETTLE = "settle"
    CANCEL = "cancel"
    SUSPEND = "suspend"
    RESUME = "resume"
    READING = "reading"


# Payload keys each event kind needs
_PAYLOAD_KEYS = {
    EventKind.REGISTER: ("fields",),
    EventKind.REQUEST: ("fields",),
    EventKind.UNREGISTER: ("record_id",),
    EventKind.SUSPEND: ("record_id",),
    EventKind.RESUME: ("record_id",),
    EventKind.SETTLE: ("contract_id", "outcome"),
    EventKind.CANCEL: ("contract_id", "actor"),
    EventKind.READING: ("device", "sensor", "value", "requester"),
}


class _CcEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    id: str = Field(min_length=1)
    level: Literal["house", "community"]
    parent: Optional[str] = None
    peers: List[str] = Field(default_factory=list)


class _FaultEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    source: str
    target: str
    kind: Literal["drop"] = "drop"
    count: Optional[int] = Field(default=None, ge=1)


class _TopologyEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    ccs: List[_CcEntry] = Field(min_length=1)
    faults: List[_FaultEntry] = Field(default_factory=list)


class _TriggerEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    sensor: str
    service_type: str
    above: Optional[float] = None
    below: Optional[float] = None
    priority: str = "EMERGENCY"
    window_minutes: int = Field(default=60, gt=0)
    duration: int = Field(default=30, gt=0)


class _EventEntry(BaseModel):
    model_config = ConfigDict(extra='forbid')
    time: int = Field(ge=0)
    seq: int
    kind: EventKind
    cc: str = Field(min_length=1)
    payload: Dict[str, Any] = Field(default_factory=dict)


class ScenarioDocument(BaseModel):
    """Schema of a scenario file."""
    model_config = ConfigDict(extra='forbid')

    name: Optional[str] = None
    description: Optional[str] = None
    horizon: int = Field(default_factory=lambda: Config.DEFAULT_HORIZON_MINUTES, gt=0)
    ontology: Union[str, Dict[str, Any]]
    taxonomy: Optional[Union[str, Dict[str, Any]]] = None
    topology: _TopologyEntry
    triggers: List[_TriggerEntry] = Field(default_factory=list)
    events: List[_EventEntry] = Field(default_factory=list)


@dataclass(frozen=True)
class ScenarioEvent:
    time: int
    seq: int
    kind: EventKind
    cc: str
    payload: Dict[str, Any]


@dataclass
class Scenario:
    horizon: int
    kb: KnowledgeBase
    taxonomy: Optional[TaxonomyTable]
    ccs: List[CcSpec]
    faults: List[LinkFault]
    triggers: List[ContextTrigger]
    events: List[ScenarioEvent]
    name: str = ""
    source: Optional[str] = None
    document: Dict[str, Any] = field(default_factory=dict, repr=False)

    def fresh_faults(self) -> List[LinkFault]:
        """Fault list with drop counters reset, so each run starts from the script."""
        return [LinkFault(f.source, f.target, f.count) for f in self.faults]

    def events_of(self, kind: EventKind) -> List[ScenarioEvent]:
        return [e for e in self.events if e.kind is kind]


def _json_path(loc: Tuple[Any, ...]) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path or "<root>"


def _resolve(base_dir: str, ref: str) -> str:
    return ref if os.path.isabs(ref) else os.path.normpath(os.path.join(base_dir, ref))


def _load_ontology(document: ScenarioDocument, base_dir: str, source: str) -> KnowledgeBase:
    try:
        if isinstance(document.ontology, str):
            return load_knowledge_base(_resolve(base_dir, document.ontology))
        return knowledge_base_from_dict(document.ontology, source="inline")
    except KnowledgeBaseError as e:
        raise ValidationError(str(e), f"{source}: ontology") from e


def _load_taxonomy(document: ScenarioDocument, base_dir: str, source: str) -> Optional[TaxonomyTable]:
    if document.taxonomy is None:
        return None
    try:
        if isinstance(document.taxonomy, str):
            return load_taxonomy_table(_resolve(base_dir, document.taxonomy))
        return taxonomy_table_from_dict(document.taxonomy, source="inline")
    except RegistryError as e:
        raise ValidationError(str(e), f"{source}: taxonomy") from e


def _check_topology(document: ScenarioDocument, source: str) -> List[CcSpec]:
    specs = []
    levels = {}
    for index, entry in enumerate(document.topology.ccs):
        cc_id = normalize_id(entry.id)
        where = f"{source}: topology.ccs[{index}]"
        if cc_id in levels:
            raise ValidationError(f"cc {cc_id!r} defined twice", where)
        levels[cc_id] = entry.level
        specs.append(CcSpec(cc_id, entry.level,
                            normalize_id(entry.parent) if entry.parent else None,
                            tuple(sorted(normalize_id(p) for p in entry.peers))))

    for index, spec in enumerate(specs):
        where = f"{source}: topology.ccs[{index}]"
        if spec.level == HOUSE and (not spec.parent or spec.peers):
            raise ValidationError("house CCs need a parent and no peers", where)
        if spec.level == COMMUNITY and spec.parent:
            raise ValidationError("community CCs have no parent", where)
        links = ([spec.parent] if spec.parent else []) + list(spec.peers)
        for link in links:
            if link == spec.cc_id:
                raise ValidationError(f"{spec.cc_id!r} links to itself", where)
            if levels.get(link) != COMMUNITY:
                raise ValidationError(f"link target {link!r} is not a community CC", where)

    for index, fault in enumerate(document.topology.faults):
        for end in (fault.source, fault.target):
            if normalize_id(end) not in levels:
                raise ValidationError(f"unknown cc {end!r}", f"{source}: topology.faults[{index}]")
    return specs


def _check_events(document: ScenarioDocument, kb: KnowledgeBase, ccs: Dict[str, str],
                  source: str) -> List[ScenarioEvent]:
    events = []
    seen_seq = set()
    previous = None
    for index, entry in enumerate(document.events):
        where = f"{source}: events[{index}]"
        key = (entry.time, entry.seq)
        if entry.seq in seen_seq:
            raise ValidationError(f"seq {entry.seq} is not unique", where)
        if previous is not None and key < previous:
            raise ValidationError(f"(time, seq) = {key} comes after {previous}", where)
        seen_seq.add(entry.seq)
        previous = key

        cc = normalize_id(entry.cc)
        if cc not in ccs:
            raise ValidationError(f"unknown cc {entry.cc!r}", f"{where}.cc")
        for required in _PAYLOAD_KEYS[entry.kind]:
            if required not in entry.payload:
                raise ValidationError(f"missing {required!r}", f"{where}.payload")

        if entry.kind in (EventKind.REGISTER, EventKind.REQUEST):
            fields = entry.payload["fields"]
            if not isinstance(fields, dict):
                raise ValidationError("fields must be an object", f"{where}.payload.fields")
            concept = fields.get("service_type")
            if concept is not None and normalize_id(str(concept)) not in kb:
                raise ValidationError(f"unknown concept {concept!r}", f"{where}.payload.fields.service_type")
            kind = entry.payload.get("source_kind")
            if kind is not None and kind not in [k.value for k in SourceKind]:
                raise ValidationError(f"unknown source kind {kind!r}", f"{where}.payload.source_kind")

        events.append(ScenarioEvent(entry.time, entry.seq, entry.kind, cc, dict(entry.payload)))
    return events


def scenario_from_dict(data: Dict[str, Any], source: str = "<scenario>",
                       base_dir: Optional[str] = None) -> Scenario:
    """
    Validate a parsed scenario document.

    Raises:
        ValidationError: with the JSON path of the first problem
    """
    base_dir = base_dir or os.getcwd()
    try:
        document = ScenarioDocument.model_validate(data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise ValidationError(first['msg'], f"{source}: {_json_path(first['loc'])}") from e

    kb = _load_ontology(document, base_dir, source)
    taxonomy = _load_taxonomy(document, base_dir, source)
    specs = _check_topology(document, source)

    try:
        triggers = triggers_from_dicts(t.model_dump(exclude_none=True) for t in document.triggers)
    except (ValueError, KeyError) as e:
        raise ValidationError(str(e), f"{source}: triggers") from e
    for index, trigger in enumerate(triggers):
        if trigger.service_type not in kb:
            raise ValidationError(f"unknown concept {trigger.service_type!r}",
                                  f"{source}: triggers[{index}].service_type")

    events = _check_events(document, kb, {s.cc_id: s.level for s in specs}, source)
    faults = [LinkFault(normalize_id(f.source), normalize_id(f.target), f.count)
              for f in document.topology.faults]

    debug(f"Loaded scenario {source}: {len(specs)} CCs, {len(events)} events")
    return Scenario(
        horizon=document.horizon,
        kb=kb,
        taxonomy=taxonomy,
        ccs=specs,
        faults=faults,
        triggers=triggers,
        events=events,
        name=document.name or os.path.splitext(os.path.basename(source))[0],
        source=source,
        document=dict(data),
    )


def load_scenario(path: str) -> Scenario:
    """
    Load and fully validate a scenario file.

    Raises:
        ParseError: the file is missing or is not valid JSON
        ValidationError: the document breaks a schema or scenario rule
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, f"{path}:{e.lineno}:{e.colno}") from e
    except OSError as e:
        raise ParseError(e.strerror or str(e), path) from e
    if not isinstance(data, dict):
        raise ParseError("a scenario is a JSON object", path)
    return scenario_from_dict(data, source=path, base_dir=os.path.dirname(os.path.abspath(path)))
