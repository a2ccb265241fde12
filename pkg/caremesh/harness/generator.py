"""
Random scenario generator.

generate_scenario(seed) builds a complete, valid scenario document with an
inline ontology (random Is-a DAG plus rules), an inline taxonomy table, a
random house/community topology with peer links, offers, requests of mixed
priority, sensor readings and unregistrations. The seed is the only source of
randomness: the same seed always yields the same document.
"""
import json
import random
from typing import Any, Dict, List

from caremesh.models.common import ProviderType

PRIORITY_WEIGHTS = (("ROUTINE", 6), ("ELEVATED", 2), ("EMERGENCY", 2))


def _concept_id(index: int) -> str:
    return f"c{index:02d}"


def random_ontology(rng: random.Random, concepts: int, max_edges: int = 120, rules: int = 3) -> Dict[str, Any]:
    """
    Ontology document over c00..cNN. Edges only point from higher to lower
    index, so the Is-a graph is always acyclic.
    """
    ids = [_concept_id(i) for i in range(concepts)]
    pairs = [(ids[c], ids[p]) for c in range(1, concepts) for p in range(c)]
    rng.shuffle(pairs)
    edges = sorted(pairs[:rng.randint(0, min(max_edges, len(pairs)))])
    rule_pairs = set()
    for _ in range(rules if concepts > 1 else 0):
        provider, request = rng.sample(ids, 2)
        rule_pairs.add((provider, request))
    return {
        "concepts": [{"id": cid, "label": cid.upper(), "domain": "care"} for cid in ids],
        "isa": [{"child": c, "parent": p} for c, p in edges],
        "rules": [{"provider": p, "request": r} for p, r in sorted(rule_pairs)],
    }


def _random_topology(rng: random.Random, max_communities: int, max_houses: int) -> List[Dict[str, Any]]:
    communities = [f"community-{i}" for i in range(1, rng.randint(1, max_communities) + 1)]
    peers = {c: set() for c in communities}
    for i, a in enumerate(communities):
        for b in communities[i + 1:]:
            if rng.random() < 0.5:
                peers[a].add(b)
                peers[b].add(a)
    ccs = [{"id": c, "level": "community", "peers": sorted(peers[c])} for c in communities]
    for community in communities:
        for h in range(1, rng.randint(0, max_houses) + 1):
            ccs.append({"id": f"{community.replace('community', 'house')}-{h}", "level": "house",
                        "parent": community})
    return ccs


def _availability(rng: random.Random, horizon: int) -> str:
    cut = rng.randint(horizon // 4, 3 * horizon // 4)
    if rng.random() < 0.5:
        return f"[0,{horizon}]"
    return f"[0,{cut}];[{cut + rng.randint(1, 60)},{horizon}]"


def generate_scenario(seed: int, *, max_concepts: int = 12, offers: int = 12, requests: int = 12,
                      max_communities: int = 3, max_houses: int = 2, horizon: int = 1440) -> Dict[str, Any]:
    """Scenario document for the given seed."""
    rng = random.Random(seed)
    concepts = rng.randint(4, max_concepts)
    ontology = random_ontology(rng, concepts)
    ids = [c["id"] for c in ontology["concepts"]]
    ccs = _random_topology(rng, max_communities, max_houses)
    cc_ids = [cc["id"] for cc in ccs]

    events: List[Dict[str, Any]] = []
    registered: Dict[str, int] = {cc: 0 for cc in cc_ids}
    for i in range(1, offers + 1):
        cc = rng.choice(cc_ids)
        provider_type = rng.choice([t.value for t in ProviderType])
        fields = {
            "service_type": rng.choice(ids),
            "provider": f"p-{i}",
            "provider_type": provider_type,
            "price": str(rng.randint(0, 50) * 100),
            "quality": str(rng.randint(1, 5)),
            "capacity": str(rng.randint(1, 2)),
            "location": f"{rng.randint(0, 20)},{rng.randint(0, 20)}",
            "availability": _availability(rng, horizon),
        }
        if provider_type == ProviderType.DEVICE.value:
            fields["endpoint"] = f"local://p-{i}"
        registered[cc] += 1
        events.append({"time": rng.randint(0, horizon // 4), "kind": "register", "cc": cc,
                       "payload": {"fields": fields}})

    for i in range(1, requests + 1):
        cc = rng.choice(cc_ids)
        time = rng.randint(0, 3 * horizon // 4)
        start = time + rng.randint(0, 60)
        length = rng.randint(30, 240)
        fields = {
            "id": f"q-{i}",
            "service_type": rng.choice(ids),
            "requester": f"ap-{rng.randint(1, 5)}",
            "window_start": str(start),
            "window_end": str(start + length),
            "duration": str(rng.randint(10, length)),
            "priority": rng.choices([p for p, _ in PRIORITY_WEIGHTS], [w for _, w in PRIORITY_WEIGHTS])[0],
            "location": f"{rng.randint(0, 20)},{rng.randint(0, 20)}",
        }
        if rng.random() < 0.3:
            fields["max_price"] = str(rng.randint(10, 50) * 100)
        events.append({"time": time, "kind": "request", "cc": cc, "payload": {"fields": fields}})

    for cc, count in registered.items():
        if count and rng.random() < 0.3:
            events.append({"time": rng.randint(horizon // 4, horizon - 1), "kind": "unregister", "cc": cc,
                           "payload": {"record_id": f"r-{rng.randint(1, count):04d}"}})

    trigger_concept = rng.choice(ids)
    for _ in range(rng.randint(0, 2)):
        events.append({"time": rng.randint(0, horizon - 120), "kind": "reading", "cc": rng.choice(cc_ids),
                       "payload": {"device": "bp-monitor", "sensor": "systolic",
                                   "value": rng.randint(100, 200), "requester": "ap-1"}})

    # registrations precede everything else at the same minute
    order = {"register": 0, "unregister": 1, "reading": 2, "request": 2}
    events.sort(key=lambda e: (e["time"], order[e["kind"]]))
    for seq, event in enumerate(events, start=1):
        event["seq"] = seq

    return {
        "name": f"generated-{seed}",
        "horizon": horizon,
        "ontology": ontology,
        "taxonomy": {cid: f"{rng.randint(100000, 999998)}" for cid in ids if rng.random() < 0.5},
        "topology": {"ccs": ccs},
        "triggers": [{"sensor": "systolic", "above": 160, "service_type": trigger_concept,
                      "priority": "EMERGENCY", "window_minutes": 60, "duration": 30}],
        "events": events,
    }


def write_scenario(document: Dict[str, Any], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
