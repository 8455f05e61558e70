import json
import math

import numpy as np
import pytest

from pwenv.errors import EmptyTableError, NotSteerError
from pwenv.geometry import reflect, virtual_normal
from pwenv.tiles import (ABSORB_INDEX, SPECULAR_INDEX, ActionType, ConfigEntry, ConfigTable, SwitchConfig,
                         TileFunction, absorb, apply_function, best_config, best_config_index, enumerate_repertoire,
                         function_from_dict, function_to_dict, generate_config_table, steer,
                         steer_symmetry_check, table_from_dict, table_to_dict)

from conftest import random_units


def test_repertoire():
    rep = enumerate_repertoire()
    assert len(rep) == 26
    assert rep[SPECULAR_INDEX].normal_angles == (0.0, 0.0)
    assert rep[ABSORB_INDEX].action_type is ActionType.ABSORB
    assert len(set(rep)) == 26


def _table(patterns):
    shape = (8, 8)
    out = []
    for k, p in enumerate(patterns):
        bits = np.zeros(shape, dtype=np.uint8)
        bits.flat[k] = 1
        out.append(ConfigEntry(SwitchConfig(bits), np.asarray(p, dtype=float)))
    return ConfigTable(tuple(out))


def _flat(value):
    base = ConfigTable(())
    return np.full((base.az_grid.size, base.el_grid.size), float(value))


def test_absorb_picks_dominated_entry():
    table = _table([_flat(0), _flat(-35), _flat(0), _flat(0)])
    assert best_config_index(absorb(), table) == 1
    assert best_config(absorb(), table) == table.entries[1].switch


def test_absorb_matches_exhaustive_scan():
    rng = np.random.default_rng(7)
    base = ConfigTable(())
    shape = (base.az_grid.size, base.el_grid.size)
    for _ in range(100):
        table = _table([rng.normal(-10, 8, size=shape) for _ in range(8)])
        peaks = [e.pattern.max() for e in table.entries]
        want = min(range(8), key=lambda k: (peaks[k], k))
        assert best_config_index(absorb(), table) == want


def test_tie_breaks_to_lowest_index():
    rng = np.random.default_rng(1)
    base = ConfigTable(())
    p = rng.normal(size=(base.az_grid.size, base.el_grid.size))
    table = _table([p + 5, p, p.copy(), p + 1])
    assert best_config_index(absorb(), table) == 1
    fn = TileFunction(ActionType.STEER, normal_angles=(15.0, 0.0))
    assert best_config_index(fn, _table([p, p.copy()])) == 0
    assert [best_config_index(fn, table) for _ in range(3)] == [best_config_index(fn, table)] * 3


def test_steer_lookup_recovers_design_entry():
    table = generate_config_table(seed=0)
    for k, fn in enumerate(enumerate_repertoire()[:25]):
        assert best_config_index(fn, table) == k
    assert best_config_index(absorb(), table) == ABSORB_INDEX


def test_empty_table():
    with pytest.raises(EmptyTableError):
        best_config(absorb(), ConfigTable(()))


def test_apply_functions(corridor):
    tile = corridor.scene.plan.tiles[0]
    n = tile.geometric_normal
    i = np.array([0.3, 0.2, 0.1]) - n
    i /= np.linalg.norm(i)
    spec = apply_function(tile, steer(i, reflect(i, n)))
    np.testing.assert_allclose(spec.virtual_normal, n, atol=1e-12)
    a = apply_function(tile, absorb())
    assert a.absorbing and not a.collimating
    np.testing.assert_allclose(a.virtual_normal, n)
    p = apply_function(tile, TileFunction(ActionType.PHASE_ALTER, phase_offset=math.pi))
    assert p.phase_offset == pytest.approx(math.pi)
    stacked = apply_function(apply_function(tile, steer((1, 0, 0), (0, 1, 0))),
                             TileFunction(ActionType.COLLIMATE), stack=True)
    assert stacked.collimating
    np.testing.assert_allclose(stacked.virtual_normal, (-math.sqrt(0.5), math.sqrt(0.5), 0), atol=1e-12)
    reset = apply_function(stacked, absorb())
    assert not reset.collimating and reset.absorbing


def test_steer_symmetry():
    fn = steer((1, 0, 0), (0, 1, 0))
    rev = steer_symmetry_check(fn)
    np.testing.assert_allclose(rev.incident, (0, -1, 0))
    np.testing.assert_allclose(rev.outgoing, (-1, 0, 0))
    np.testing.assert_allclose(virtual_normal(rev.incident, rev.outgoing), virtual_normal(fn.incident, fn.outgoing))
    rng = np.random.default_rng(0)
    for i, o in zip(random_units(rng, 200), random_units(rng, 200)):
        f = steer(i, o)
        r = steer_symmetry_check(f)
        np.testing.assert_allclose(virtual_normal(r.incident, r.outgoing), virtual_normal(i, o), atol=1e-9)
    with pytest.raises(NotSteerError):
        steer_symmetry_check(absorb())


def test_serialization_round_trip():
    table = generate_config_table(seed=3)
    back = table_from_dict(json.loads(json.dumps(table_to_dict(table))))
    assert [e.switch for e in back.entries] == [e.switch for e in table.entries]
    assert back.repertoire == table.repertoire
    for fn in enumerate_repertoire() + [steer((1, 0, 0), (0, 0, 1)),
                                        TileFunction(ActionType.PHASE_ALTER, phase_offset=1.0)]:
        assert function_from_dict(json.loads(json.dumps(function_to_dict(fn)))) == fn
    cfg = table.entries[4].switch
    assert SwitchConfig.from_rows(cfg.to_rows()) == cfg


def test_function_validation():
    with pytest.raises(ValueError):
        TileFunction(ActionType.STEER, incident=(1, 0, 0))
    with pytest.raises(ValueError):
        TileFunction(ActionType.ABSORB, outgoing=(1, 0, 0))
    with pytest.raises(ValueError):
        SwitchConfig(np.array([[0, 2]]))
