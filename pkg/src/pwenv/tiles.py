"""Tile function repertoire, switch configurations and configuration lookup.

A tile configuration is a binary matrix of switch states.  The lookup table
pairs every configuration with the power reflection pattern it produces,
sampled over a grid of (azimuth, elevation) angles in the tile frame, and the
best configuration for an intended function is chosen from that table.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyTableError, NotSteerError
from .geometry import (
    Tile,
    angles_from_normal,
    normalize,
    reflect,
    steer_normal_from_angles,
    vec,
    virtual_normal,
)

STEER_ANGLES = (-30.0, -15.0, 0.0, 15.0, 30.0)
ABSORB_DB = 35.0
TABLE_VERSION = 1


class ActionType(enum.Enum):
    STEER = "STEER"
    ABSORB = "ABSORB"
    COLLIMATE = "COLLIMATE"
    PHASE_ALTER = "PHASE_ALTER"


@dataclass(frozen=True, eq=False)
class TileFunction:
    """An intended EM function with its parameters.

    STEER is given either by incident/outgoing directions or, for repertoire
    entries, by the virtual-normal rotation ``normal_angles = (az, el)`` in
    degrees.
    """

    action_type: ActionType
    incident: Optional[np.ndarray] = None
    outgoing: Optional[np.ndarray] = None
    wavelength: Optional[float] = None
    phase_offset: float = 0.0
    normal_angles: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if isinstance(self.action_type, str):
            object.__setattr__(self, "action_type", ActionType(self.action_type))
        for name in ("incident", "outgoing"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, normalize(vec(value)))
        object.__setattr__(self, "phase_offset", float(self.phase_offset) % (2 * math.pi))
        kind = self.action_type
        if kind is ActionType.STEER:
            has_io = self.incident is not None and self.outgoing is not None
            if not has_io and self.normal_angles is None:
                raise ValueError("STEER needs incident and outgoing directions")
        elif kind is ActionType.ABSORB:
            if self.outgoing is not None:
                raise ValueError("ABSORB takes no outgoing direction")

    def __eq__(self, other):
        if not isinstance(other, TileFunction):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def key(self):
        def r(v):
            return None if v is None else tuple(round(float(x), 12) for x in v)

        return (self.action_type, r(self.incident), r(self.outgoing), self.wavelength,
                round(self.phase_offset, 12), self.normal_angles)

    def __repr__(self):
        parts = [self.action_type.value]
        if self.normal_angles is not None:
            parts.append(f"az={self.normal_angles[0]:g},el={self.normal_angles[1]:g}")
        if self.incident is not None:
            parts.append(f"I={np.round(self.incident, 4).tolist()}")
        if self.outgoing is not None:
            parts.append(f"O={np.round(self.outgoing, 4).tolist()}")
        if self.action_type is ActionType.PHASE_ALTER:
            parts.append(f"dphi={self.phase_offset:.4f}")
        return f"TileFunction({', '.join(parts)})"


def steer(incident, outgoing, wavelength=None) -> TileFunction:
    return TileFunction(ActionType.STEER, incident=incident, outgoing=outgoing, wavelength=wavelength)


def absorb(incident=None) -> TileFunction:
    return TileFunction(ActionType.ABSORB, incident=incident)


def enumerate_repertoire() -> list[TileFunction]:
    """The 26 corridor functions: 25 steering rotations, then ABSORB.

    Index ``5 * i_az + i_el`` addresses the steer pair; the specular entry
    ``(0, 0)`` is index 12 and ABSORB is index 25.
    """
    out = [
        TileFunction(ActionType.STEER, normal_angles=(az, el))
        for az, el in itertools.product(STEER_ANGLES, STEER_ANGLES)
    ]
    out.append(TileFunction(ActionType.ABSORB))
    return out


SPECULAR_INDEX = 12
ABSORB_INDEX = 25


def repertoire_index(fn: TileFunction) -> int:
    if fn.action_type is ActionType.ABSORB:
        return ABSORB_INDEX
    if fn.action_type is ActionType.STEER and fn.normal_angles is not None:
        az, el = fn.normal_angles
        return 5 * STEER_ANGLES.index(az) + STEER_ANGLES.index(el)
    raise ValueError(f"{fn!r} is not a repertoire entry")


def steer_symmetry_check(fn: TileFunction) -> TileFunction:
    """Reverse a STEER: waves arriving along ``-O`` leave along ``-I``."""
    if fn.action_type is not ActionType.STEER or fn.incident is None:
        raise NotSteerError("symmetry applies to STEER(I, O) functions")
    return TileFunction(ActionType.STEER, incident=-fn.outgoing, outgoing=-fn.incident, wavelength=fn.wavelength)


def apply_function(tile: Tile, fn: TileFunction, stack: bool = False) -> Tile:
    """Deploy ``fn`` on ``tile`` and return the reconfigured tile.

    Without ``stack`` the tile runs exactly one function, so flags from a
    previous deployment are cleared.  With ``stack`` (security routes)
    COLLIMATE and PHASE_ALTER are added on top of the current steering.
    """
    base = dict(virtual_normal=tile.virtual_normal, absorbing=tile.absorbing,
                collimating=tile.collimating, phase_offset=tile.phase_offset)
    if not stack:
        base = dict(virtual_normal=tile.geometric_normal, absorbing=False, collimating=False, phase_offset=0.0)
    kind = fn.action_type
    if kind is ActionType.STEER:
        if fn.normal_angles is not None:
            base["virtual_normal"] = steer_normal_from_angles(tile, *fn.normal_angles)
        else:
            base["virtual_normal"] = virtual_normal(fn.incident, fn.outgoing)
        base["absorbing"] = False
    elif kind is ActionType.ABSORB:
        base["absorbing"] = True
        base["virtual_normal"] = tile.geometric_normal
    elif kind is ActionType.COLLIMATE:
        base["collimating"] = True
    elif kind is ActionType.PHASE_ALTER:
        base["phase_offset"] = fn.phase_offset
    return tile.evolve(deployed_function=fn, **base)


def reset_tile(tile: Tile) -> Tile:
    return tile.evolve(virtual_normal=tile.geometric_normal, deployed_function=None, absorbing=False,
                       collimating=False, phase_offset=0.0)


def outgoing_for(tile: Tile, incident) -> np.ndarray:
    """Direction a wave arriving along ``incident`` leaves the tile."""
    return reflect(normalize(incident), tile.virtual_normal)


# --- switch configurations and lookup table --------------------------------


@dataclass(frozen=True, eq=False)
class SwitchConfig:
    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states)
        if s.ndim != 2 or not np.isin(s, (0, 1)).all():
            raise ValueError("switch states must be a binary matrix")
        s = s.astype(np.uint8)
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def __eq__(self, other):
        return isinstance(other, SwitchConfig) and np.array_equal(self.states, other.states)

    def __hash__(self):
        return hash(self.states.tobytes())

    def to_rows(self) -> list[str]:
        return ["".join(str(int(b)) for b in row) for row in self.states]

    @classmethod
    def from_rows(cls, rows: Sequence[str]) -> "SwitchConfig":
        return cls(np.array([[int(c) for c in r] for r in rows], dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class ConfigEntry:
    switch: SwitchConfig
    pattern: np.ndarray  # dB, shape (len(az_grid), len(el_grid))
    function: Optional[TileFunction] = None


@dataclass(frozen=True, eq=False)
class ConfigTable:
    entries: tuple
    az_grid: np.ndarray = field(default_factory=lambda: np.arange(-90.0, 90.0 + 1e-9, 5.0))
    el_grid: np.ndarray = field(default_factory=lambda: np.arange(-90.0, 90.0 + 1e-9, 5.0))

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    @property
    def repertoire(self) -> list:
        return [e.function for e in self.entries]


def _direction_grid(az_deg: np.ndarray, el_deg: np.ndarray) -> np.ndarray:
    az, el = np.meshgrid(np.radians(az_deg), np.radians(el_deg), indexing="ij")
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def lobe_pattern(az0: float, el0: float, az_grid, el_grid, beamwidth_deg: float = 10.0,
                 floor_db: float = -20.0) -> np.ndarray:
    """cos-power lobe (half power at ``beamwidth_deg``) over a sidelobe floor, in dB."""
    grid = _direction_grid(np.asarray(az_grid), np.asarray(el_grid))
    target = _direction_grid(np.array([az0]), np.array([el0]))[0, 0]
    cosang = np.clip(grid @ target, -1.0, 1.0)
    m = math.log(0.5) / math.log(math.cos(math.radians(beamwidth_deg)))
    lin = np.where(cosang > 0, np.maximum(cosang, 0) ** m, 0.0)
    return 10.0 * np.log10(np.maximum(lin, 10 ** (floor_db / 10)))


def generate_config_table(seed: int = 0, switch_shape=(8, 8)) -> ConfigTable:
    """Synthetic lookup table for the 26-function repertoire.

    Each steering entry gets a lobe at its design rotation; ABSORB gets a
    uniform pattern 35 dB down.  Switch matrices are seeded random bits,
    distinct per entry.
    """
    rng = np.random.default_rng(seed)
    proto = ConfigTable(())
    entries = []
    seen = set()
    for fn in enumerate_repertoire():
        while True:
            bits = rng.integers(0, 2, size=switch_shape, dtype=np.uint8)
            if bits.tobytes() not in seen:
                seen.add(bits.tobytes())
                break
        if fn.action_type is ActionType.ABSORB:
            pattern = np.full((proto.az_grid.size, proto.el_grid.size), -ABSORB_DB)
        else:
            pattern = lobe_pattern(*fn.normal_angles, proto.az_grid, proto.el_grid)
        entries.append(ConfigEntry(SwitchConfig(bits), pattern, fn))
    return ConfigTable(tuple(entries))


def _pattern_at(table: ConfigTable, pattern: np.ndarray, az: float, el: float) -> float:
    i = int(np.argmin(np.abs(table.az_grid - az)))
    j = int(np.argmin(np.abs(table.el_grid - el)))
    return float(pattern[i, j])


def _steer_score(table: ConfigTable, pattern: np.ndarray, az: float, el: float, exclusion_deg: float = 15.0):
    grid = _direction_grid(table.az_grid, table.el_grid)
    target = _direction_grid(np.array([az]), np.array([el]))[0, 0]
    off = np.degrees(np.arccos(np.clip(grid @ target, -1, 1))) > exclusion_deg
    side = float(pattern[off].max()) if off.any() else -np.inf
    return _pattern_at(table, pattern, az, el) - side


def best_config(intended: TileFunction, table: ConfigTable, tile: Optional[Tile] = None) -> SwitchConfig:
    """Pick the table configuration that best realizes ``intended``.

    ABSORB minimizes the peak of the reflection pattern.  STEER maximizes the
    pattern at the intended virtual-normal rotation minus the strongest lobe
    more than 15 degrees away from it.  COLLIMATE and PHASE_ALTER run on the
    specular base configuration.  Ties go to the lowest entry index.
    """
    return table.entries[best_config_index(intended, table, tile)].switch


def best_config_index(intended: TileFunction, table: ConfigTable, tile: Optional[Tile] = None) -> int:
    if len(table) == 0:
        raise EmptyTableError("configuration table is empty")
    if intended.action_type is ActionType.ABSORB:
        peaks = [float(e.pattern.max()) for e in table.entries]
        return int(np.argmin(peaks))
    if intended.action_type is ActionType.STEER:
        az, el = steer_target_angles(intended, tile)
    else:
        az, el = 0.0, 0.0
    scores = [_steer_score(table, e.pattern, az, el) for e in table.entries]
    return int(np.argmax(scores))


def steer_target_angles(fn: TileFunction, tile: Optional[Tile]) -> tuple[float, float]:
    if fn.normal_angles is not None:
        return fn.normal_angles
    if tile is None:
        raise ValueError("a tile is needed to express STEER(I, O) in tile angles")
    return angles_from_normal(tile, virtual_normal(fn.incident, fn.outgoing))


# --- serialization ----------------------------------------------------------


def function_to_dict(fn: TileFunction) -> dict:
    out: dict = {"action": fn.action_type.value}
    if fn.normal_angles is not None:
        out["normal_angles"] = [float(fn.normal_angles[0]), float(fn.normal_angles[1])]
    if fn.incident is not None:
        out["I"] = [float(x) for x in fn.incident]
    if fn.outgoing is not None:
        out["O"] = [float(x) for x in fn.outgoing]
    if fn.wavelength is not None:
        out["wavelength"] = fn.wavelength
    if fn.action_type is ActionType.PHASE_ALTER:
        out["phase_offset"] = fn.phase_offset
    return out


def function_from_dict(d: dict) -> TileFunction:
    angles = d.get("normal_angles")
    return TileFunction(
        ActionType(d["action"]),
        incident=d.get("I"),
        outgoing=d.get("O"),
        wavelength=d.get("wavelength"),
        phase_offset=float(d.get("phase_offset", 0.0)),
        normal_angles=None if angles is None else (float(angles[0]), float(angles[1])),
    )


def table_to_dict(table: ConfigTable) -> dict:
    return {
        "version": TABLE_VERSION,
        "az_grid": table.az_grid.tolist(),
        "el_grid": table.el_grid.tolist(),
        "entries": [
            {
                "function": None if e.function is None else function_to_dict(e.function),
                "switch": e.switch.to_rows(),
                "pattern_db": np.round(e.pattern, 6).tolist(),
            }
            for e in table.entries
        ],
    }


def table_from_dict(d: dict) -> ConfigTable:
    if d.get("version") != TABLE_VERSION:
        raise ValueError(f"unsupported table version {d.get('version')!r}")
    entries = [
        ConfigEntry(
            SwitchConfig.from_rows(e["switch"]),
            np.asarray(e["pattern_db"], dtype=float),
            None if e["function"] is None else function_from_dict(e["function"]),
        )
        for e in d["entries"]
    ]
    return ConfigTable(tuple(entries), np.asarray(d["az_grid"], float), np.asarray(d["el_grid"], float))
