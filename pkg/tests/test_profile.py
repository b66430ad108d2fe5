import json

import pytest

from multirat.errors import SchemaError
from multirat.profile import (
    PROFILE_ENV_VAR,
    default_profile,
    default_profile_path,
    dumps,
    load,
    loads,
    prior_profile,
)


def test_round_trip():
    p = default_profile()
    assert loads(dumps(p)) == p


def test_unknown_field_rejected_with_path():
    doc = json.loads(dumps(default_profile()))
    doc["nbiot"]["energy"]["transmit"]["colour"] = "red"
    with pytest.raises(SchemaError) as exc:
        loads(json.dumps(doc))
    assert exc.value.path == "$.nbiot.energy.transmit"


def test_version_pinned():
    doc = json.loads(dumps(default_profile()))
    doc["schema_version"] = 2
    with pytest.raises(SchemaError) as exc:
        loads(json.dumps(doc))
    assert exc.value.path == "$.schema_version"


def test_invariant_violation_is_schema_error():
    doc = json.loads(dumps(default_profile()))
    doc["nbiot"]["config"]["rsrp_threshold_01_dbm"] = -130
    with pytest.raises(SchemaError):
        loads(json.dumps(doc))


def test_bad_json():
    with pytest.raises(SchemaError):
        loads("{")


def test_env_override(tmp_path, monkeypatch):
    path = tmp_path / "p.json"
    path.write_text(dumps(prior_profile()))
    monkeypatch.setenv(PROFILE_ENV_VAR, str(path))
    assert default_profile_path() == path
    assert default_profile() == load(path)
