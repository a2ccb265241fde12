import json
import logging
import os
from unittest.mock import patch

import pytest

from caremesh.config.config import Config, load_daemon_config


def test_config_basic_properties():
    """Test basic configuration properties."""
    assert Config.LOG_FORMAT == "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    assert Config.LOG_MAX_SIZE == 10 * 1024 * 1024  # 10 MB
    assert Config.LOG_BACKUP_COUNT == 5
    assert Config.HOP_LIMIT == 4
    assert Config.TAXONOMY_FALLBACK_CODE == "999999"
    assert Config.DEFAULT_HORIZON_MINUTES == 1440
    assert Config.ALLOW_NARROWER is False


def test_get_log_level():
    """Test log level retrieval."""
    with patch.dict(os.environ, {"LOG_LEVEL": "DEBUG"}):
        assert Config.get_log_level() == logging.DEBUG

    with patch.dict(os.environ, {"LOG_LEVEL": "warning"}):
        assert Config.get_log_level() == logging.WARNING

    with patch.dict(os.environ, {"LOG_LEVEL": "CRITICAL"}):
        assert Config.get_log_level() == logging.CRITICAL

    # Test invalid log level (should default to INFO)
    with patch.dict(os.environ, {"LOG_LEVEL": "INVALID_LEVEL"}):
        assert Config.get_log_level() == logging.INFO


def test_get_as_dict():
    """Test configuration dictionary export."""
    config = Config.get_as_dict()
    assert config["HOP_LIMIT"] == Config.HOP_LIMIT
    assert "BUNDLED_DATA_DIR" in config
    assert all(key.isupper() for key in config)


def test_get_bundled_path():
    """Bundled data lives inside the package."""
    path = Config.get_bundled_path("ontology", "community.json")
    assert path.endswith(os.path.join("data", "ontology", "community.json"))
    assert os.path.exists(path)


def test_validate_configuration():
    """Test configuration validation."""
    assert Config.validate_configuration() == []

    with patch.object(Config, "HOP_LIMIT", -1), patch.object(Config, "TAXONOMY_FALLBACK_CODE", "12ab"):
        errors = Config.validate_configuration()
    assert any("HOP_LIMIT" in e for e in errors)
    assert any("TAXONOMY_FALLBACK_CODE" in e for e in errors)

    with patch.object(Config, "DEFAULT_HORIZON_MINUTES", 0):
        assert any("DEFAULT_HORIZON_MINUTES" in e for e in Config.validate_configuration())

    # Reset the module-level error list
    Config.validate_configuration()


def _write_config(tmp_path, data):
    path = tmp_path / "daemon.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_load_daemon_config(tmp_path):
    """Relative file references resolve against the config file."""
    path = _write_config(tmp_path, {
        "cc_id": "house-1",
        "level": "house",
        "ontology": "ontology/community.json",
        "parent": {"cc_id": "community-1", "url": "http://127.0.0.1:8701"},
        "hop_limit": 2,
    })
    config = load_daemon_config(path)
    assert config.cc_id == "house-1"
    assert config.ontology == os.path.join(str(tmp_path), "ontology/community.json")
    assert config.parent.url == "http://127.0.0.1:8701"
    assert config.peers == []
    assert config.taxonomy is None
    assert config.hop_limit == 2


def test_load_daemon_config_defaults(tmp_path):
    path = _write_config(tmp_path, {"cc_id": "community-1", "level": "community", "ontology": "/abs/kb.json"})
    config = load_daemon_config(path)
    assert config.ontology == "/abs/kb.json"
    assert config.hop_limit == Config.HOP_LIMIT


@pytest.mark.parametrize("data, fragment", [
    ({"cc_id": "x", "level": "mansion", "ontology": "kb.json"}, "level"),
    ({"cc_id": "x", "level": "house"}, "ontology"),
    ({"cc_id": "x", "level": "house", "ontology": "kb.json", "hop_limit": -1}, "hop_limit"),
    ({"cc_id": "x", "level": "house", "ontology": "kb.json", "colour": "blue"}, "colour"),
    ({"cc_id": "x", "level": "community", "ontology": "kb.json", "peers": [{"cc_id": "y"}]}, "peers.0.url"),
])
def test_load_daemon_config_errors(tmp_path, data, fragment):
    path = _write_config(tmp_path, data)
    with pytest.raises(ValueError) as excinfo:
        load_daemon_config(path)
    assert str(excinfo.value).startswith(f"{path}: {fragment}")


def test_load_daemon_config_bad_json(tmp_path):
    path = tmp_path / "daemon.json"
    path.write_text("{\n  cc_id: 1\n}")
    with pytest.raises(ValueError) as excinfo:
        load_daemon_config(str(path))
    assert str(excinfo.value).startswith(f"{path}:2:")
