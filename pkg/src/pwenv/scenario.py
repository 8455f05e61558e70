"""Scenario files: JSON schema, loading with line-anchored errors, presets."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from json.decoder import scanstring
from typing import Optional

import jsonschema

from .em import antenna_from_dict
from .errors import ScenarioError
from .geometry import BlockingSphere, Floorplan, Slab, TileCoverage, build_box_floorplan
from .optimizer import Objective
from .raytracer import Receiver, Scene, TraceParams, Transmitter

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_ANTENNA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["isotropic", "half_dipole", "single_lobe_sinusoid"]},
        "boresight": _VEC3,
        "half_angle_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 90},
        "cutoff_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_DEVICE = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "position": _VEC3,
        "antenna": _ANTENNA,
        "capture_radius": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["name", "position"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "room": {
            "type": "object",
            "properties": {
                "size": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 3, "maxItems": 3},
                "slabs": {"type": "array", "items": {
                    "type": "object",
                    "properties": {"lo": _VEC3, "hi": _VEC3, "tiled_faces": {"type": "boolean"},
                                   "tiled_ends": {"type": "boolean"}},
                    "required": ["lo", "hi"],
                    "additionalProperties": False,
                }},
            },
            "required": ["size"],
            "additionalProperties": False,
        },
        "tiles": {
            "type": "object",
            "properties": {
                "size": {"type": "number", "exclusiveMinimum": 0},
                "walls": {"type": "boolean"},
                "ceiling": {"type": "boolean"},
                "min_height": {"type": "number", "minimum": 0},
                "network_cols": {"type": "integer", "minimum": 0},
            },
            "required": ["size"],
            "additionalProperties": False,
        },
        "bodies": {"type": "array", "items": {
            "type": "object",
            "properties": {"center": _VEC3, "radius": {"type": "number", "exclusiveMinimum": 0},
                           "transparent": {"type": "boolean"}, "owner": {"type": "string"}},
            "required": ["center", "radius"],
            "additionalProperties": False,
        }},
        "tx": {
            "type": "object",
            "properties": {**_DEVICE["properties"], "power_dbm": {"type": "number"}},
            "required": ["position", "power_dbm"],
            "additionalProperties": False,
        },
        "receivers": {"type": "array", "items": _DEVICE},
        "receiver_grid": {
            "type": "object",
            "properties": {
                "x_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "y_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 1},
                "z": {"type": "number"},
                "antenna": _ANTENNA,
                "capture_radius": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["x_range", "y_range", "nx", "ny", "z"],
            "additionalProperties": False,
        },
        "bandwidth_hz": {"type": "number", "exclusiveMinimum": 0},
        "trace": {
            "type": "object",
            "properties": {
                "max_bounces": {"type": "integer", "minimum": 0},
                "power_floor_dbm": {"type": "number"},
                "angular_resolution_deg": {"type": "number", "exclusiveMinimum": 0},
                "carrier_freq": {"type": "number", "exclusiveMinimum": 0},
                "tile_bounce_loss_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "concrete_loss_db": {"type": "number", "minimum": 0},
            },
            "required": ["carrier_freq"],
            "additionalProperties": False,
        },
        "objective": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["case-a", "case-b", "multiuser"]},
                "power_threshold_dbm": {"type": "number"},
                "weights": {"type": "array", "items": {"type": "number"}},
                "penalty_weight": {"type": "number", "minimum": 0},
                "power_split": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "tile_allocation": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                "tile_budget": {"type": "integer", "minimum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "security": {
            "type": "object",
            "properties": {
                "intended_rx": {"type": "string"},
                "eavesdroppers": {"type": "array", "items": {"type": "string"}},
                "hsf_tx_antenna": _ANTENNA,
                "hsf_rx_antenna": _ANTENNA,
                "tile_budget": {"type": "integer", "minimum": 1},
                "phase_constraint": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["intended_rx", "eavesdroppers"],
            "additionalProperties": False,
        },
    },
    "required": ["room", "tx", "trace"],
    "additionalProperties": False,
}


@dataclass(frozen=True, eq=False)
class Scenario:
    data: dict
    scene: Scene
    trace_params: TraceParams
    objective: Optional[Objective]
    seed: int

    @property
    def name(self) -> str:
        return self.data.get("name", "scenario")

    @property
    def security(self) -> Optional[dict]:
        return self.data.get("security")


# --- line lookup for error messages -------------------------------------------

_WS = " \t\r\n"


def _skip(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _value_positions(text: str, i: int, path: tuple, out: dict) -> int:
    """Record the offset of every value under ``path``; return the end offset."""
    i = _skip(text, i)
    out[path] = i
    ch = text[i]
    if ch == "{":
        i = _skip(text, i + 1)
        if text[i] == "}":
            return i + 1
        while True:
            key, i = scanstring(text, _skip(text, i) + 1)
            i = _skip(text, i) + 1  # colon
            i = _skip(text, _value_positions(text, i, path + (key,), out))
            if text[i] == "}":
                return i + 1
            i += 1
    if ch == "[":
        i = _skip(text, i + 1)
        if text[i] == "]":
            return i + 1
        k = 0
        while True:
            i = _skip(text, _value_positions(text, i, path + (k,), out))
            k += 1
            if text[i] == "]":
                return i + 1
            i += 1
    if ch == '"':
        return scanstring(text, i + 1)[1]
    _, end = json.JSONDecoder().raw_decode(text, i)
    return end


def _line_of(text: str, path) -> Optional[int]:
    positions: dict = {}
    try:
        _value_positions(text, 0, (), positions)
    except (ValueError, IndexError):
        return None
    path = tuple(path)
    while path not in positions and path:
        path = path[:-1]
    pos = positions.get(path)
    return None if pos is None else text.count("\n", 0, pos) + 1


# --- loading -----------------------------------------------------------------


def validate(data: dict, text: Optional[str] = None) -> None:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(text, err.absolute_path) if text is not None else None
        raise ScenarioError(f"{where}: {err.message}", line)
    obj = data.get("objective")
    if obj and obj["kind"] == "case-b" and "power_threshold_dbm" not in obj:
        raise ScenarioError("objective: case-b needs power_threshold_dbm",
                            _line_of(text, ("objective",)) if text else None)
    if "receivers" in data and "receiver_grid" in data:
        raise ScenarioError("give either receivers or receiver_grid, not both",
                            _line_of(text, ("receiver_grid",)) if text else None)


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, exc.lineno) from None
    validate(data, text)
    return from_dict(data)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def _expand_receivers(data: dict) -> list[dict]:
    if "receivers" in data:
        return copy.deepcopy(data["receivers"])
    grid = data.get("receiver_grid")
    if grid is None:
        return []
    import numpy as np

    xs = np.linspace(*grid["x_range"], grid["nx"])
    ys = np.linspace(*grid["y_range"], grid["ny"])
    out = []
    for x in xs:
        for y in ys:
            rx = {"name": f"rx{len(out)}", "position": [float(x), float(y), float(grid["z"])]}
            if "antenna" in grid:
                rx["antenna"] = copy.deepcopy(grid["antenna"])
            if "capture_radius" in grid:
                rx["capture_radius"] = grid["capture_radius"]
            out.append(rx)
    return out


def build_plan(data: dict) -> Floorplan:
    room = data["room"]
    slabs = [Slab(tuple(s["lo"]), tuple(s["hi"]), s.get("tiled_faces", True), s.get("tiled_ends", False))
             for s in room.get("slabs", [])]
    cov = None
    if "tiles" in data:
        t = data["tiles"]
        cov = TileCoverage(t["size"], t.get("walls", True), t.get("ceiling", False), t.get("min_height", 0.0),
                           t.get("network_cols", 0))
    bodies = [BlockingSphere(tuple(b["center"]), b["radius"], b.get("transparent", False), b.get("owner"))
              for b in data.get("bodies", [])]
    return build_box_floorplan(room["size"], slabs, cov, bodies)


def from_dict(data: dict) -> Scenario:
    validate(data)
    plan = build_plan(data)
    t = data["tx"]
    tx = Transmitter(t["position"], antenna_from_dict(t.get("antenna")), t["power_dbm"], t.get("name", "tx"))
    rxs = [Receiver(r["position"], antenna_from_dict(r.get("antenna")), r.get("capture_radius", 0.05), r["name"])
           for r in _expand_receivers(data)]
    tp = data["trace"]
    params = TraceParams(
        max_bounces=tp.get("max_bounces", 50),
        power_floor_dbm=tp.get("power_floor_dbm", -250.0),
        angular_resolution_deg=tp.get("angular_resolution_deg", 1.0),
        carrier_freq=tp["carrier_freq"],
        tile_bounce_loss_fraction=tp.get("tile_bounce_loss_fraction", 0.0),
        concrete_loss_db=tp.get("concrete_loss_db", 6.0),
    )
    objective = None
    if "objective" in data:
        o = data["objective"]
        objective = Objective(
            kind=o["kind"], power_threshold_dbm=o.get("power_threshold_dbm"),
            weights=tuple(o["weights"]) if "weights" in o else None,
            penalty_weight=o.get("penalty_weight", 10.0),
            power_split=tuple(o["power_split"]) if "power_split" in o else None,
            tile_allocation=tuple(tuple(g) for g in o["tile_allocation"]) if "tile_allocation" in o else None,
            tile_budget=o.get("tile_budget"),
        )
    return Scenario(copy.deepcopy(data), Scene(plan, tx, rxs), params, objective, data.get("seed", 0))


def dumps(scenario: Scenario | dict) -> str:
    data = scenario.data if isinstance(scenario, Scenario) else scenario
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


# --- presets -----------------------------------------------------------------

_DIPOLE = {"kind": "half_dipole", "boresight": [0.0, 0.0, 1.0]}


def corridor_preset(freq_hz: float = 60e9) -> dict:
    """Corridor with a tiled middle wall and a 2 x 6 receiver grid behind it."""
    threshold = 1.0 if freq_hz >= 30e9 else 30.0
    label = "60ghz" if freq_hz >= 30e9 else "2.4ghz"
    return {
        "name": f"corridor-{label}",
        "seed": 0,
        "room": {"size": [10.0, 15.0, 3.0],
                 "slabs": [{"lo": [4.5, 1.5, 0.0], "hi": [5.5, 13.5, 3.0], "tiled_faces": True, "tiled_ends": False}]},
        "tiles": {"size": 1.0, "walls": True, "ceiling": False, "min_height": 0.0, "network_cols": 37},
        "tx": {"name": "tx", "position": [7.0, 12.0, 2.0], "power_dbm": 100.0, "antenna": dict(_DIPOLE)},
        "receiver_grid": {"x_range": [0.75, 3.25], "y_range": [1.25, 13.75], "nx": 2, "ny": 6, "z": 1.5,
                          "antenna": dict(_DIPOLE), "capture_radius": 0.05},
        "bandwidth_hz": 25e6,
        "trace": {"max_bounces": 3, "power_floor_dbm": -250.0, "angular_resolution_deg": 1.0,
                  "carrier_freq": freq_hz, "tile_bounce_loss_fraction": 0.0, "concrete_loss_db": 6.0},
        "objective": {"kind": "case-a", "power_threshold_dbm": threshold},
    }


def _lobe(boresight) -> dict:
    return {"kind": "single_lobe_sinusoid", "boresight": list(boresight), "half_angle_deg": 30.0}


def security_preset() -> dict:
    """Two rooms split by a partition; tiles on the ceiling and upper walls."""
    users = [[2.5, 1.0, 1.0], [17.5, 1.0, 1.0], [10.0, 7.0, 1.0]]
    return {
        "name": "security",
        "seed": 0,
        "room": {"size": [20.0, 9.0, 3.0],
                 "slabs": [{"lo": [9.75, 0.0, 0.0], "hi": [10.25, 5.0, 3.0], "tiled_faces": True, "tiled_ends": True}]},
        "tiles": {"size": 0.75, "walls": True, "ceiling": True, "min_height": 1.5, "network_cols": 23},
        "bodies": [
            {"center": users[0], "radius": 0.5, "transparent": False, "owner": "user0"},
            {"center": users[1], "radius": 0.5, "transparent": False, "owner": "user1"},
            {"center": users[2], "radius": 0.5, "transparent": True, "owner": "user2"},
        ],
        "tx": {"name": "user0", "position": users[0], "power_dbm": -30.0, "antenna": _lobe([0.0, 1.0, 0.0])},
        "receivers": [
            {"name": "user1", "position": users[1], "antenna": _lobe([0.0, 1.0, 0.0]), "capture_radius": 0.05},
            {"name": "user2", "position": users[2], "antenna": {"kind": "isotropic"}, "capture_radius": 0.05},
        ],
        "trace": {"max_bounces": 50, "power_floor_dbm": -250.0, "angular_resolution_deg": 1.0,
                  "carrier_freq": 2.4e9, "tile_bounce_loss_fraction": 0.01, "concrete_loss_db": 6.0},
        "security": {"intended_rx": "user1", "eavesdroppers": ["user2"],
                     "hsf_tx_antenna": _lobe([0.0, 0.0, 1.0]), "hsf_rx_antenna": _lobe([0.0, 0.0, 1.0])},
    }


PRESETS = {
    "corridor-60ghz": lambda: corridor_preset(60e9),
    "corridor-2.4ghz": lambda: corridor_preset(2.4e9),
    "security": security_preset,
}


def preset(name: str) -> Scenario:
    try:
        return from_dict(PRESETS[name]())
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
