import json
import threading

import pytest

from caremesh.errors import (
    ConceptInUse, CycleDetected, DuplicateId, KnowledgeBaseError, OntologyFileError, UnknownId
)
from caremesh.models.knowledge_base import (
    KbOp, KnowledgeBase, KnowledgeBaseStore, ancestors, derive_fulfills, descendants,
    dump_knowledge_base, is_subconcept, isa_distance, kb_mutate, knowledge_base_from_dict,
    load_knowledge_base
)


def _kb(concepts, isa=(), rules=()):
    return knowledge_base_from_dict({
        "concepts": [{"id": c, "domain": "test"} for c in concepts],
        "isa": [{"child": c, "parent": p} for c, p in isa],
        "rules": [{"provider": p, "request": r} for p, r in rules],
    })


def test_add_isa_makes_subconcept(community_kb):
    """Adding watering-flowers -> gardening on a KB without the edge creates the relation."""
    kb = kb_mutate(community_kb, KbOp.REMOVE_ISA, ("watering-flowers", "gardening"))
    assert not is_subconcept(kb, "watering-flowers", "gardening")

    updated = kb_mutate(kb, "add_isa", {"child": "watering-flowers", "parent": "gardening"})
    assert is_subconcept(updated, "watering-flowers", "gardening")
    assert updated.version == kb.version + 1


def test_add_isa_self_loop_is_a_cycle(small_kb):
    with pytest.raises(CycleDetected):
        kb_mutate(small_kb, KbOp.ADD_ISA, ("a", "a"))


def test_add_isa_closing_a_cycle():
    """On the chain c -> b -> a, adding a -> c would close a cycle."""
    kb = _kb(["a", "b", "c"], isa=[("b", "a"), ("c", "b")])
    with pytest.raises(CycleDetected):
        kb_mutate(kb, KbOp.ADD_ISA, ("a", "c"))


def test_failed_mutation_leaves_snapshot_untouched():
    kb = _kb(["a", "b", "c"], isa=[("b", "a"), ("c", "b")])
    edges_before = kb.isa_edges
    with pytest.raises(CycleDetected):
        kb_mutate(kb, KbOp.ADD_ISA, ("a", "c"))
    assert kb.version == 1
    assert kb.isa_edges == edges_before


def test_mutation_returns_new_snapshot(small_kb):
    updated = kb_mutate(small_kb, KbOp.ADD_CONCEPT, {"id": "f", "domain": "test"})
    assert "f" in updated
    assert "f" not in small_kb
    assert small_kb.version == version
    assert "f" not in small_kb
    assert updated.version == 2


def test_mutation_errors(small_kb):
    with pytest.raises(UnknownId):
        kb_mutate(small_kb, KbOp.ADD_ISA, ("a", "missing"))
    with pytest.raises(DuplicateId):
        kb_mutate(small_kb, KbOp.ADD_CONCEPT, {"id": "a", "domain": "test"})
    with pytest.raises(DuplicateId):
        kb_mutate(small_kb, KbOp.ADD_ISA, ("b", "a"))
    with pytest.raises(UnknownId):
        kb_mutate(small_kb, KbOp.REMOVE_RULE, ("a", "b"))
    with pytest.raises(KnowledgeBaseError):
        kb_mutate(small_kb, "rename_concept", "a")


def test_malformed_mutation_payloads(small_kb):
    """Test the kb_mutate function with payloads of the wrong shape."""
    version = small_kb.version
    bad = [
        (KbOp.ADD_CONCEPT, {"id": "f"}),
        (KbOp.ADD_CONCEPT, {"domain": "test"}),
        (KbOp.ADD_ISA, {"child": "d"}),
        (KbOp.ADD_ISA, ("d", "a", "b")),
        (KbOp.REMOVE_ISA, 7),
        (KbOp.ADD_RULE, ("c",)),
        (KbOp.ADD_RULE, {"provider": "c"}),
    ]
    for op, payload in bad:
        with pytest.raises(KnowledgeBaseError) as excinfo:
            kb_mutate(small_kb, op, payload)
        assert f"malformed {op.value} payload" in str(excinfo.value)
    assert small_kb.version == version
    assert "f" not in small_kb


def test_remove_concept_in_use(small_kb):
    """Concepts referenced by edges, rules or live records cannot be removed."""
    with pytest.raises(ConceptInUse):
        kb_mutate(small_kb, KbOp.REMOVE_CONCEPT, "a")
    with pytest.raises(ConceptInUse):
        kb_mutate(small_kb, KbOp.REMOVE_CONCEPT, "e")

    lonely = kb_mutate(small_kb, KbOp.ADD_CONCEPT, {"id": "f", "domain": "test"})
    with pytest.raises(ConceptInUse) as excinfo:
        kb_mutate(lonely, KbOp.REMOVE_CONCEPT, "f", in_use=lambda concept: concept == "f")
    assert "live registry records" in str(excinfo.value)

    removed = kb_mutate(lonely, KbOp.REMOVE_CONCEPT, "F", in_use=lambda concept: False)
    assert "f" not in removed


def test_concept_ids_are_case_normalized():
    kb = _kb(["Gardening", "WATERING-FLOWERS"], isa=[("Watering-Flowers", "gardening")])
    assert "gardening" in kb
    assert is_subconcept(kb, "watering-flowers", "gardening")


def test_is_subconcept_chain():
    """Chain w -> x -> y -> z."""
    kb = _kb(["w", "x", "y", "z"], isa=[("w", "x"), ("x", "y"), ("y", "z")])
    assert is_subconcept(kb, "w", "z")
    assert not is_subconcept(kb, "z", "w")
    assert is_subconcept(kb, "x", "x")


def test_is_subconcept_unknown_id(small_kb):
    with pytest.raises(UnknownId):
        is_subconcept(small_kb, "a", "nowhere")
    with pytest.raises(UnknownId):
        is_subconcept(small_kb, "nowhere", "a")


def test_isa_distance():
    kb = _kb(["w", "x", "y", "z"], isa=[("w", "x"), ("w", "y"), ("x", "z"), ("y", "z")])
    assert isa_distance(kb, "w", "z") == 2
    assert isa_distance(kb, "w", "x") == 1
    assert isa_distance(kb, "x", "x") == 0
    assert isa_distance(kb, "z", "w") is None
    assert isa_distance(kb, "x", "y") is None


def test_isa_distance_takes_the_shortest_path():
    kb = _kb(["a", "b", "c", "d"], isa=[("d", "c"), ("c", "b"), ("b", "a"), ("d", "a")])
    assert isa_distance(kb, "d", "a") == 1


def test_derive_fulfills_direct_rule(community_kb):
    assert derive_fulfills(community_kb, "text-display", "reminder")
    assert not derive_fulfills(community_kb, "reminder", "text-display")


def test_derive_fulfills_without_rules():
    kb = _kb(["a", "b", "c"])
    assert not derive_fulfills(kb, "a", "b")
    assert not derive_fulfills(kb, "b", "c")


def test_derive_fulfills_closed_under_specialization():
    """Rule (display, reminder) covers text-display and any reminder specialization."""
    kb = _kb(["display", "text-display", "reminder", "medication-reminder"],
             isa=[("text-display", "display"), ("medication-reminder", "reminder")],
             rules=[("display", "reminder")])
    assert derive_fulfills(kb, "text-display", "reminder")
    assert derive_fulfills(kb, "text-display", "medication-reminder")
    assert not derive_fulfills(kb, "display", "text-display")


def test_derive_fulfills_is_monotone(small_kb):
    assert not derive_fulfills(small_kb, "c", "b")
    with_rule = kb_mutate(small_kb, KbOp.ADD_RULE, ("c", "b"))
    assert derive_fulfills(with_rule, "c", "b")
    with_edge = kb_mutate(with_rule, KbOp.ADD_ISA, ("e", "c"))
    assert derive_fulfills(with_edge, "c", "b")
    assert derive_fulfills(with_edge, "e", "d")


def test_ancestors_and_descendants(small_kb):
    assert ancestors(small_kb, "d") == ["a", "b", "c"]
    assert ancestors(small_kb, "a") == []
    assert descendants(small_kb, "a") == ["b", "c", "d"]
    assert descendants(small_kb, "d") == []


def test_declared_domains_are_enforced():
    with pytest.raises(OntologyFileError) as excinfo:
        knowledge_base_from_dict({
            "domains": ["care"],
            "concepts": [{"id": "gardening", "domain": "household"}],
        }, source="bad.json")
    assert "concepts[0]" in str(excinfo.value)

    kb = knowledge_base_from_dict({"concepts": [{"id": "gardening", "domain": "household"}]})
    assert kb.domains == frozenset({"household"})


def test_loader_reports_path_of_bad_entry():
    with pytest.raises(OntologyFileError) as excinfo:
        knowledge_base_from_dict({
            "concepts": [{"id": "a", "domain": "t"}, {"id": "b", "domain": "t"}],
            "isa": [{"child": "a", "parent": "b"}, {"child": "b", "parent": "a"}],
        }, source="loop.json")
    message = str(excinfo.value)
    assert message.startswith("loop.json: isa[1]")
    assert "cycle" in message


def test_loader_rejects_unknown_keys():
    with pytest.raises(OntologyFileError):
        knowledge_base_from_dict({"concepts": [], "edges": []})


def test_load_knowledge_base_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"concepts": [\n  {"id": "a", "domain": "t"},\n]}')
    with pytest.raises(OntologyFileError) as excinfo:
        load_knowledge_base(str(path))
    assert f"{path}:3:" in str(excinfo.value)

    with pytest.raises(OntologyFileError):
        load_knowledge_base(str(tmp_path / "missing.json"))


def test_bundled_ontology(community_kb):
    assert community_kb.version == 1
    assert is_subconcept(community_kb, "watering-flowers", "gardening")
    assert is_subconcept(community_kb, "text-display", "display")
    assert is_subconcept(community_kb, "context-display", "display")
    assert not is_subconcept(community_kb, "text-display", "context-display")


def test_dump_round_trip(small_kb, tmp_path):
    document = dump_knowledge_base(small_kb)
    path = tmp_path / "dumped.json"
    path.write_text(json.dumps(document))
    reloaded = load_knowledge_base(str(path))
    assert dict(reloaded.concepts) == dict(small_kb.concepts)
    assert reloaded.isa_edges == small_kb.isa_edges
    assert reloaded.rules == small_kb.rules


def test_store_serializes_writers(small_kb):
    store = KnowledgeBaseStore(small_kb)
    old = store.snapshot()

    def add(index):
        store.mutate(KbOp.ADD_CONCEPT, {"id": f"n{index}", "domain": "test"})

    threads = [threading.Thread(target=add, args=(i,)) for i in range(10)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    current = store.snapshot()
    assert current.version == old.version + 10
    assert all(f"n{i}" in current for i in range(10))
    assert len(old) == 5


def test_empty_knowledge_base():
    kb = KnowledgeBase()
    assert len(kb) == 0
    assert kb.version == 0
    with pytest.raises(UnknownId):
        kb.require("anything")
