"""
Registry Module
===============

Per coordination center service registry. Stores RegistryRecords (a
formatted ServiceOffer plus bookkeeping), answers exact-concept lookups and
exports flat taxonomy-coded records.

Record ids are 'r-' plus a zero-padded insertion counter and are never
reused. Every change is appended to the registry history, and replaying
that history in order rebuilds an identical registry. Dumps are JSON arrays
of records in insertion order.

Writers take an exclusive lock; readers get list snapshots, so a lookup never
observes a half-applied change.
"""
import json
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence

from caremesh.config.config import Config
from caremesh.errors import DuplicateOffer, RegistryError, TaxonomyFileError, UnknownRecord
from caremesh.models.descriptions import ServiceOffer, offer_from_summary, offer_to_summary
from caremesh.utilities.helpers import format_sequence_id
from caremesh.utilities.logger import debug, info

_CODE_PATTERN = re.compile(r'^\d{6}$')
FALLBACK_KEY = "_fallback"


class RecordStatus(str, Enum):
    ACTIVE = "ACTIVE"
    SUSPENDED = "SUSPENDED"


@dataclass(frozen=True)
class RegistryRecord:
    record_id: str
    offer: ServiceOffer
    registered_at: int
    status: RecordStatus = RecordStatus.ACTIVE

    @property
    def is_active(self) -> bool:
        return self.status is RecordStatus.ACTIVE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "record_id": self.record_id,
            "registered_at": self.registered_at,
            "status": self.status.value,
            "offer": offer_to_summary(self.offer),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RegistryRecord":
        try:
            return cls(
                record_id=data["record_id"],
                offer=offer_from_summary(data["offer"]),
                registered_at=int(data["registered_at"]),
                status=RecordStatus(data.get("status", RecordStatus.ACTIVE.value)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise RegistryError(f"bad registry record: {e}") from e


@dataclass(frozen=True)
class RegistryChange:
    """One history entry. offer is set for register and update."""
    kind: str
    record_id: str
    time: int
    offer: Optional[ServiceOffer] = None


class Registry:
    """Service registry of one coordination center."""

    def __init__(self, cc_id: str = ""):
        self.cc_id = cc_id
        self._records: Dict[str, RegistryRecord] = {}
        self._counter = 0
        self._history: List[RegistryChange] = []
        self._lock = threading.RLock()

    @contextmanager
    def _write(self) -> Iterator[None]:
        with self._lock:
            yield

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    @property
    def history(self) -> List[RegistryChange]:
        return list(self._history)

    def _require(self, record_id: str) -> RegistryRecord:
        record = self._records.get(record_id)
        if record is None:
            raise UnknownRecord(record_id)
        return record

    def _check_duplicate(self, offer: ServiceOffer, ignore: Optional[str] = None) -> None:
        for record in self._records.values():
            if (record.record_id != ignore and record.is_active
                    and record.offer.provider == offer.provider and record.offer.concept == offer.concept):
                raise DuplicateOffer(offer.provider, offer.concept, record.record_id)

    def register(self, offer: ServiceOffer, now: int) -> str:
        """
        Add a new ACTIVE record.

        Raises:
            DuplicateOffer: the provider already has an ACTIVE record for this concept
        """
        with self._write():
            self._check_duplicate(offer)
            self._counter += 1
            record_id = format_sequence_id("r", self._counter)
            self._records[record_id] = RegistryRecord(record_id, offer, now)
            self._history.append(RegistryChange("register", record_id, now, offer))
        info(f"[{self.cc_id}] registered {record_id}: {offer.provider} offers {offer.concept}")
        return record_id

    def unregister(self, record_id: str, now: int = 0) -> RegistryRecord:
        """Remove a record. Contracts that reference it are the binding module's concern."""
        with self._write():
            record = self._require(record_id)
            del self._records[record_id]
            self._history.append(RegistryChange("unregister", record_id, now))
        info(f"[{self.cc_id}] unregistered {record_id}")
        return record

    def update(self, record_id: str, offer: ServiceOffer, now: int = 0) -> RegistryRecord:
        """Replace the offer of an existing record, keeping its id and status."""
        with self._write():
            record = self._require(record_id)
            if record.is_active:
                self._check_duplicate(offer, ignore=record_id)
            updated = replace(record, offer=offer)
            self._records[record_id] = updated
            self._history.append(RegistryChange("update", record_id, now, offer))
        debug(f"[{self.cc_id}] updated {record_id}")
        return updated

    def _set_status(self, kind: str, record_id: str, status: RecordStatus, now: int) -> RegistryRecord:
        with self._write():
            record = self._require(record_id)
            if record.status is status:
                return record
            if status is RecordStatus.ACTIVE:
                self._check_duplicate(record.offer, ignore=record_id)
            updated = replace(record, status=status)
            self._records[record_id] = updated
            self._history.append(RegistryChange(kind, record_id, now))
        debug(f"[{self.cc_id}] {kind} {record_id}")
        return updated

    def suspend(self, record_id: str, now: int = 0) -> RegistryRecord:
        """Hide a record from lookups without losing it."""
        return self._set_status("suspend", record_id, RecordStatus.SUSPENDED, now)

    def resume(self, record_id: str, now: int = 0) -> RegistryRecord:
        return self._set_status("resume", record_id, RecordStatus.ACTIVE, now)

    def get(self, record_id: str) -> RegistryRecord:
        return self._require(record_id)

    def records(self) -> List[RegistryRecord]:
        """All records (any status) in insertion order."""
        with self._lock:
            return list(self._records.values())

    def active_records(self) -> List[RegistryRecord]:
        """Snapshot of the ACTIVE records in record_id order."""
        with self._lock:
            return [r for r in self._records.values() if r.is_active]

    def lookup_syntactic(self, concept: str) -> List[RegistryRecord]:
        """ACTIVE records whose offer concept equals concept exactly."""
        return [r for r in self.active_records() if r.offer.concept == concept]

    def uses_concept(self, concept: str) -> bool:
        """Reference check for knowledge base concept removal."""
        with self._lock:
            return any(r.offer.concept == concept for r in self._records.values())

    def dump(self) -> List[Dict[str, Any]]:
        with self._lock:
            return [r.to_dict() for r in self._records.values()]

    @classmethod
    def restore(cls, records: Sequence[Mapping[str, Any]], cc_id: str = "") -> "Registry":
        """
        Rebuild a registry from a dump. The id counter continues after the
        highest restored id so new ids never collide with old ones.
        """
        registry = cls(cc_id)
        for data in records:
            record = RegistryRecord.from_dict(data)
            if record.record_id in registry._records:
                raise RegistryError(f"record {record.record_id!r} appears twice in dump")
            registry._records[record.record_id] = record
            registry._history.append(RegistryChange("register", record.record_id,
                                                    record.registered_at, record.offer))
            if record.status is RecordStatus.SUSPENDED:
                registry._history.append(RegistryChange("suspend", record.record_id, record.registered_at))
            try:
                registry._counter = max(registry._counter, int(record.record_id.split("-", 1)[1]))
            except (IndexError, ValueError):
                raise RegistryError(f"record id {record.record_id!r} is not of the form r-NNNN") from None
        return registry

    @classmethod
    def replay(cls, history: Sequence[RegistryChange], cc_id: str = "") -> "Registry":
        """Apply a history in order to an empty registry."""
        registry = cls(cc_id)
        for change in history:
            if change.kind == "register":
                record_id = registry.register(change.offer, change.time)
                if record_id != change.record_id:
                    raise RegistryError(f"replay produced {record_id}, history says {change.record_id}")
            elif change.kind == "unregister":
                registry.unregister(change.record_id, change.time)
            elif change.kind == "update":
                registry.update(change.record_id, change.offer, change.time)
            elif change.kind == "suspend":
                registry.suspend(change.record_id, change.time)
            elif change.kind == "resume":
                registry.resume(change.record_id, change.time)
            else:
                raise RegistryError(f"unknown registry change {change.kind!r}")
        return registry

    def same_state(self, other: "Registry") -> bool:
        return self._counter == other._counter and self.records() == other.records()


def save_registry(registry: Registry, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(registry.dump(), f, indent=2, sort_keys=True)


def load_registry(path: str, cc_id: str = "") -> Registry:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise RegistryError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except OSError as e:
        raise RegistryError(f"{path}: {e.strerror}") from e
    if not isinstance(data, list):
        raise RegistryError(f"{path}: a registry dump is a JSON array of records")
    return Registry.restore(data, cc_id)


#######################################################################
# TAXONOMY EXPORT
#######################################################################

@dataclass(frozen=True)
class TaxonomyTable:
    """Concept id -> 6-digit industry code, supplied with each scenario."""
    entries: Mapping[str, str]
    fallback_code: str = Config.TAXONOMY_FALLBACK_CODE

    def __post_init__(self):
        for concept, code in list(self.entries.items()) + [(FALLBACK_KEY, self.fallback_code)]:
            if not _CODE_PATTERN.match(str(code)):
                raise TaxonomyFileError(f"{concept}: code {code!r} is not six digits")

    def code_for(self, concept: str) -> str:
        return self.entries.get(concept, self.fallback_code)


def taxonomy_table_from_dict(data: Mapping[str, Any], source: str = "<taxonomy>") -> TaxonomyTable:
    if not isinstance(data, Mapping):
        raise TaxonomyFileError(f"{source}: a taxonomy table is a JSON object")
    entries = {str(k).lower(): str(v) for k, v in data.items() if k != FALLBACK_KEY}
    fallback = str(data.get(FALLBACK_KEY, Config.TAXONOMY_FALLBACK_CODE))
    try:
        return TaxonomyTable(entries, fallback)
    except TaxonomyFileError as e:
        raise TaxonomyFileError(f"{source}: {e}") from e


def load_taxonomy_table(path: str) -> TaxonomyTable:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise TaxonomyFileError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except OSError as e:
        raise TaxonomyFileError(f"{path}: {e.strerror}") from e
    return taxonomy_table_from_dict(data, source=path)


def export_taxonomy_record(registry: Registry, record_id: str, table: TaxonomyTable) -> Dict[str, str]:
    """
    Flat record for one registry entry, with the concept translated to its
    taxonomy code (or the table's fallback code).

    Field names follow the offer raw form, so the functional fields can be
    fed back through format_offer.

    Raises:
        UnknownRecord
    """
    record = registry.get(record_id)
    offer = record.offer
    flat = {
        "record_id": record.record_id,
        "provider": offer.provider,
        "service_type": offer.concept,
        "taxonomy_code": table.code_for(offer.concept),
        "price": str(offer.price),
        "quality": str(offer.quality),
        "provider_type": offer.provider_type.value,
    }
    if offer.invocation_endpoint:
        flat["endpoint"] = offer.invocation_endpoint
    return flat
