import copy
import json

import pytest

from impdelay import ExtendedControl, ImpulseControl, ScenarioError, load_scenario, parse_scenario
from impdelay.scenario import SCHEMA

from cases import ROOT, SCENARIOS

BUNDLED = sorted(p.stem for p in SCENARIOS.glob("*.json"))


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_parse(name):
    sc = load_scenario(SCENARIOS / f"{name}.json")
    assert sc.name == name
    assert sc.control is None or isinstance(sc.control, (ImpulseControl, ExtendedControl))
    assert len(sc.digest) == 64


def test_digest_ignores_key_order():
    raw = json.loads((SCENARIOS / "decay.json").read_text())
    shuffled = dict(reversed(list(raw.items())))
    assert parse_scenario(shuffled).digest == parse_scenario(raw).digest


def _base():
    return json.loads((SCENARIOS / "single_atom.json").read_text())


def _edit(fn):
    data = _base()
    fn(data)
    return data


@pytest.mark.parametrize(
    "edit, where, msg",
    [
        (lambda d: d["dynamics"].pop("x0"), "dynamics.x0", "missing required field"),
        (lambda d: d.pop("grid"), "grid", "missing required field"),
        (lambda d: d["dynamics"]["f"].__setitem__(0, "x0 +"), "dynamics.f[0]", "column"),
        (lambda d: d["dynamics"]["g"][0].__setitem__(0, "y7"), "dynamics.g[0][0]", "unknown identifier"),
        (lambda d: d["grid"].__setitem__("h", -1.0), "grid.h", ""),
        (lambda d: d["grid"].__setitem__("M", 3), "grid.N", "at least M"),
        (lambda d: d["cone"].__setitem__("signs", ["+", "+"]), "cone.signs", "needs 1"),
        (lambda d: d["dynamics"].__setitem__("x0", [1.0, 2.0]), "dynamics.x0", ""),
        (lambda d: d.__setitem__("extra", 1), "<root>", "extra"),
    ],
)
def test_error_paths(edit, where, msg):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_edit(edit))
    assert err.value.path == where
    assert msg in str(err.value)
    assert str(err.value).startswith(where + ":")


def test_unreadable_files(tmp_path):
    with pytest.raises(ScenarioError, match="<file>"):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ScenarioError, match="invalid JSON at line 1"):
        load_scenario(bad)


def test_invalid_control_is_an_input_error(tmp_path):
    # attached control integrates to 1 while the atom of mu is 2
    data = _base()
    imp = data["control"]["impulse"]
    imp["from_measure"] = False
    imp["nu"] = {"atoms": [[0.5, 2.0]]}
    imp["attached"] = [{"r": 0.5, "omega": [{"breaks": [0.0, 1.0], "values": [[1.0]]}, None]}]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(data))
    from impdelay.cli import main

    assert main(["simulate", str(p), "--out", str(tmp_path / "out")]) == 2


def test_published_schema_is_current():
    assert json.loads((ROOT / "docs" / "scenario.schema.json").read_text()) == copy.deepcopy(SCHEMA)
