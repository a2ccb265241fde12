import os
import sys

import pytest

# Add the project root directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from caremesh import create_app
from caremesh.config.config import Config
from caremesh.models.descriptions import RawDescription, SourceKind, format_offer, format_request
from caremesh.models.knowledge_base import knowledge_base_from_dict, load_knowledge_base
from caremesh.models.registry import Registry
from caremesh.services.federation import CoordinationCenter


@pytest.fixture
def community_kb():
    """The bundled community ontology."""
    return load_knowledge_base(Config.get_bundled_path('ontology', 'community.json'))


@pytest.fixture
def small_kb():
    """
    A few concepts with a diamond and a rule:

        d -> b -> a,  d -> c -> a,  e (isolated),  rule (e fulfills b)
    """
    return knowledge_base_from_dict({
        "concepts": [
            {"id": "a", "domain": "test"},
            {"id": "b", "domain": "test"},
            {"id": "c", "domain": "test"},
            {"id": "d", "domain": "test"},
            {"id": "e", "domain": "test"},
        ],
        "isa": [
            {"child": "b", "parent": "a"},
            {"child": "c", "parent": "a"},
            {"child": "d", "parent": "b"},
            {"child": "d", "parent": "c"},
        ],
        "rules": [{"provider": "e", "request": "b"}],
    })


@pytest.fixture
def make_offer(community_kb):
    """Factory for formatted offers against the community ontology."""
    def _make(service_type, provider, provider_type="professional", kb=None, **fields):
        raw = {"service_type": service_type, "provider": provider, "provider_type": provider_type}
        if provider_type == "device" and "endpoint" not in fields:
            fields["endpoint"] = f"local://{provider}"
        raw.update({k: str(v) for k, v in fields.items()})
        return format_offer(RawDescription(SourceKind.HUMAN_FORM, raw), kb if kb is not None else community_kb)
    return _make


@pytest.fixture
def make_request(community_kb):
    """Factory for formatted requests against the community ontology."""
    def _make(service_type, window=(0, 120), requester="ap-1", kb=None, **fields):
        raw = {
            "service_type": service_type,
            "requester": requester,
            "window_start": str(window[0]),
            "window_end": str(window[1]),
        }
        raw.update({k: str(v) for k, v in fields.items()})
        return format_request(RawDescription(SourceKind.HUMAN_FORM, raw), kb if kb is not None else community_kb)
    return _make


@pytest.fixture
def registry():
    return Registry("community-1")


@pytest.fixture
def coordination_center(community_kb):
    """A standalone community CC with no links."""
    return CoordinationCenter("community-1", "community", community_kb)


@pytest.fixture
def app(coordination_center):
    """Daemon application serving the standalone community CC."""
    test_app = create_app(coordination_center, hop_limit=2)
    test_app.config.update({'TESTING': True})
    with test_app.app_context():
        yield test_app


@pytest.fixture
def client(app):
    """Create a test client for the application."""
    return app.test_client()
