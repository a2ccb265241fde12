"""
Rebuild end states from a run's event log.

Registries are replayed from register / unregister / suspend / resume
entries; contracts take the state written by the last entry that carries
them. Used to check that a log fully describes a run.
"""
from typing import Any, Dict, Iterable, List, Mapping

from caremesh.models.descriptions import offer_from_summary
from caremesh.models.registry import Registry, RegistryChange

REGISTRY_KINDS = ("register", "unregister", "suspend", "resume")
CONTRACT_KINDS = ("bind", "preempt", "settle", "complete", "cancellation_notice")


def replay_registries(entries: Iterable[Mapping[str, Any]]) -> Dict[str, Registry]:
    """cc_id -> Registry reconstructed from the log."""
    histories: Dict[str, List[RegistryChange]] = {}
    for entry in entries:
        kind = entry["kind"]
        if kind not in REGISTRY_KINDS:
            continue
        offer = offer_from_summary(entry["offer"]) if kind == "register" else None
        histories.setdefault(entry["cc"], []).append(RegistryChange(kind, entry["record_id"], entry["t"], offer))
    return {cc_id: Registry.replay(history, cc_id) for cc_id, history in histories.items()}


def replay_contracts(entries: Iterable[Mapping[str, Any]]) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """cc_id -> contract_id -> contract dict as last written to the log."""
    contracts: Dict[str, Dict[str, Dict[str, Any]]] = {}
    for entry in entries:
        if entry["kind"] in CONTRACT_KINDS:
            contract = entry["contract"]
            contracts.setdefault(entry["cc"], {})[contract["contract_id"]] = contract
    return contracts
