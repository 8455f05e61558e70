import json

import numpy as np
import pytest

from pwenv.errors import ScenarioError
from pwenv.optimizer import ObjectiveKind
from pwenv.scenario import PRESETS, corridor_preset, dumps, from_dict, load, loads, preset


def test_presets_round_trip():
    for name in PRESETS:
        sc = preset(name)
        back = loads(dumps(sc))
        assert back.data == sc.data
        assert len(back.scene.plan.tiles) == len(sc.scene.plan.tiles)
        assert back.trace_params == sc.trace_params


def test_corridor_receiver_grid():
    sc = preset("corridor-60ghz")
    pos = np.array([r.position for r in sc.scene.receivers])
    assert len(pos) == 12
    assert sorted(set(pos[:, 0])) == [0.75, 3.25]
    np.testing.assert_allclose(sorted(set(pos[:, 1])), np.linspace(1.25, 13.75, 6))
    assert np.all(pos[:, 2] == 1.5)
    assert [r.name for r in sc.scene.receivers][:2] == ["rx0", "rx1"]
    assert sc.objective.kind is ObjectiveKind.CASE_A_MAXMIN_POWER
    assert preset("corridor-2.4ghz").objective.power_threshold_dbm == 30.0


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(dumps(corridor_preset()))
    assert load(p).name == "corridor-60ghz"


def _line_error(text):
    with pytest.raises(ScenarioError) as info:
        loads(text)
    return info.value


def test_schema_errors_name_the_line():
    data = corridor_preset()
    data["trace"]["max_bounces"] = -1
    text = json.dumps(data, indent=2)
    err = _line_error(text)
    want = next(i for i, ln in enumerate(text.splitlines(), 1) if '"max_bounces"' in ln)
    assert err.line == want
    assert str(err).startswith(f"line {want}:")
    assert "max_bounces" in str(err)


def test_unknown_key_and_bad_json():
    data = corridor_preset()
    data["room"]["colour"] = "grey"
    err = _line_error(json.dumps(data, indent=2))
    assert err.line is not None and "colour" in str(err)
    err = _line_error('{\n  "room": {\n    "size": [1, 2, 3],\n  }\n}')
    assert err.line == 4


def test_semantic_checks():
    data = corridor_preset()
    data["objective"] = {"kind": "case-b"}
    with pytest.raises(ScenarioError):
        from_dict(data)
    data = corridor_preset()
    data["receivers"] = [{"name": "a", "position": [1, 1, 1]}]
    with pytest.raises(ScenarioError):
        loads(json.dumps(data))
    with pytest.raises(ScenarioError):
        preset("nope")
