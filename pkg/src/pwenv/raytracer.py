"""Shooting-and-bouncing-rays tracer honoring programmable tiles.

Rays are launched on a Fibonacci lattice around the transmitter and traced
batch-wise.  At every hit the ray is mirrored about the local normal: the
surface normal for plain concrete, the tile's virtual normal for tiles, so
steering tiles are ordinary mirrors rotated in place.  A receiver collects a
ray when the ray passes through its reception sphere; rays with the same
receiver and the same ordered list of hit elements describe one propagation
path and are merged, keeping the closest pass.

Path power uses image-theory spreading over the unfolded length.  Rays that
hit a collimating tile directly from the transmitter are turned into a
collimated beam: the beam leaves from the tile centre, and no further
spreading loss accrues after that first impact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .em import C, FLOOR_DBM, AntennaPattern, antenna_gain, fspl_db, incoherent_sum_dbm
from .errors import InvalidSceneError
from .geometry import Floorplan, intersect_spheres, intersect_surfaces, normalize, reflect_rows, vec

CONCRETE_LOSS_DB = 6.0
GATE_DB = 30.0
# covering radius of a hexagonal lattice, relative to the mean ray spacing
_CAPTURE_FACTOR = 0.65


@dataclass(frozen=True)
class TraceParams:
    max_bounces: int = 50
    power_floor_dbm: float = FLOOR_DBM
    angular_resolution_deg: float = 1.0
    carrier_freq: float = 2.4e9
    tile_bounce_loss_fraction: float = 0.0
    concrete_loss_db: float = CONCRETE_LOSS_DB
    record_impinging: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tile_bounce_loss_fraction < 1.0:
            raise ValueError("tile_bounce_loss_fraction must be in [0, 1)")
        if not self.angular_resolution_deg > 0:
            raise ValueError("angular_resolution_deg must be positive")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be non-negative")

    def evolve(self, **kw) -> "TraceParams":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Transmitter:
    position: np.ndarray
    antenna: object = field(default_factory=AntennaPattern)  # pattern or tuple of beams
    power_dbm: float = 0.0
    name: str = "tx"

    def __post_init__(self):
        object.__setattr__(self, "position", vec(self.position))


@dataclass(frozen=True, eq=False)
class Receiver:
    position: np.ndarray
    antenna: object = field(default_factory=AntennaPattern)
    capture_radius: float = 0.05
    name: str = "rx"

    def __post_init__(self):
        object.__setattr__(self, "position", vec(self.position))
        if not self.capture_radius > 0:
            raise ValueError("capture_radius must be positive")


@dataclass(frozen=True, eq=False)
class Scene:
    plan: Floorplan
    tx: Transmitter
    receivers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "receivers", tuple(self.receivers))

    def evolve(self, **kw) -> "Scene":
        return replace(self, **kw)

    def receiver_index(self, name: str) -> int:
        for k, r in enumerate(self.receivers):
            if r.name == name:
                return k
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class TileState:
    """Array view of tile configuration consumed by the tracer."""

    normals: np.ndarray  # (T, 3) virtual normals
    absorbing: np.ndarray  # (T,) bool
    collimating: np.ndarray
    phase: np.ndarray  # (T,) rad

    @classmethod
    def from_tiles(cls, tiles) -> "TileState":
        n = len(tiles)
        if n == 0:
            return cls(np.zeros((0, 3)), np.zeros(0, bool), np.zeros(0, bool), np.zeros(0))
        return cls(
            np.array([t.virtual_normal for t in tiles]),
            np.array([t.absorbing for t in tiles], dtype=bool),
            np.array([t.collimating for t in tiles], dtype=bool),
            np.array([t.phase_offset for t in tiles], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class RayPath:
    rx_index: int
    bounce_points: np.ndarray  # (k, 3)
    bounce_tiles: tuple  # tile id or None per bounce
    bounce_elements: tuple  # element code per bounce: surface index or n_surfaces + tile index
    power_dbm: float  # at the receiver location, before receive antenna gain
    delay_s: float
    phase_rad: float
    arrival_dir: np.ndarray
    length_m: float
    launch_index: int
    miss_distance: float
    collimated_since: Optional[int] = None

    @property
    def n_bounces(self) -> int:
        return len(self.bounce_tiles)

    @property
    def signature(self) -> tuple:
        return self.bounce_elements


class Impinging(NamedTuple):
    power_dbm: float
    doa: np.ndarray  # direction of travel of the strongest impinging wave


@dataclass(frozen=True, eq=False)
class TraceResult:
    paths: tuple
    impinging: dict  # tile index -> Impinging
    n_launched: int = 0

    def for_rx(self, rx_index: int) -> list:
        return [p for p in self.paths if p.rx_index == rx_index]

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)


class PowerDelayProfile(NamedTuple):
    delay_s: np.ndarray
    power_dbm: np.ndarray
    phase_rad: np.ndarray
    path_ids: np.ndarray


def launch_directions(resolution_deg: float) -> np.ndarray:
    """Fibonacci lattice with one direction per ``resolution^2`` of solid angle."""
    step = math.radians(resolution_deg)
    n = max(8, int(math.ceil(4.0 * math.pi / (step * step))))
    k = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _pencil_beams(antenna, resolution_deg: float) -> np.ndarray:
    """Boresights of beams too narrow for the launch lattice to sample."""
    beams = [antenna] if isinstance(antenna, AntennaPattern) else list(antenna)
    extra = [b.boresight for b in beams if b.cutoff_deg < resolution_deg]
    return np.array(extra) if extra else np.zeros((0, 3))


def _plan_cache(plan: Floorplan):
    cache = plan.__dict__.get("_tracer_cache")
    if cache is None:
        tiles = plan.tiles
        cache = {
            "centers": np.array([t.center for t in tiles]) if tiles else np.zeros((0, 3)),
            "gnormals": np.array([t.geometric_normal for t in tiles]) if tiles else np.zeros((0, 3)),
            "ids": [t.id for t in tiles],
        }
        plan.__dict__["_tracer_cache"] = cache
    return cache


def _validate(scene: Scene, tx: Transmitter, plan: Floorplan):
    lo, hi = np.asarray(plan.bounds[0], float), np.asarray(plan.bounds[1], float)
    if np.any(hi <= lo):
        raise InvalidSceneError("floorplan bounds are empty")
    if np.any(tx.position < lo) or np.any(tx.position > hi):
        raise InvalidSceneError("transmitter lies outside the floorplan bounds")
    if not plan.surfaces:
        raise InvalidSceneError("floorplan has no surfaces")


def trace(scene: Scene, tx: Optional[Transmitter] = None, params: TraceParams = TraceParams(),
          tile_state: Optional[TileState] = None) -> TraceResult:
    """Trace all propagation paths from ``tx`` to the scene receivers."""
    tx = scene.tx if tx is None else tx
    plan = scene.plan
    _validate(scene, tx, plan)
    packed = plan.packed
    cache = _plan_cache(plan)
    state = TileState.from_tiles(plan.tiles) if tile_state is None else tile_state
    n_surf = packed.origin.shape[0]
    rxs = scene.receivers
    rx_pos = np.array([r.position for r in rxs]) if rxs else np.zeros((0, 3))
    rx_min_r = np.array([r.capture_radius for r in rxs]) if rxs else np.zeros(0)
    opaque = [b for b in plan.bodies if not b.transparent]
    sph_c = np.array([b.center for b in opaque]) if opaque else np.zeros((0, 3))
    sph_r = np.array([b.radius for b in opaque]) if opaque else np.zeros(0)
    # receivers are never blocked by their own body
    own = np.zeros((len(rxs), len(opaque)), dtype=bool)
    for j, r in enumerate(rxs):
        for b, body in enumerate(opaque):
            own[j, b] = body.owner is not None and body.owner == r.name

    freq = params.carrier_freq
    floor = params.power_floor_dbm
    step = math.radians(params.angular_resolution_deg)
    tile_loss_db = -10.0 * math.log10(1.0 - params.tile_bounce_loss_fraction)
    ref_db = tx.power_dbm - 20.0 * math.log10(4.0 * math.pi * freq / C)  # P_tx - FSPL(1 m)

    dirs_all = launch_directions(params.angular_resolution_deg)
    pencils = _pencil_beams(tx.antenna, params.angular_resolution_deg)
    if pencils.size:
        dirs_all = np.concatenate([dirs_all, pencils])
    g_all = np.asarray(antenna_gain(tx.antenna, dirs_all))
    keep = g_all > 0
    ray = np.nonzero(keep)[0]
    d = dirs_all[keep]
    o = np.repeat(tx.position[None, :], ray.size, axis=0)
    with np.errstate(divide="ignore"):
        gain_db = 10.0 * np.log10(g_all[keep])
    loss = np.zeros(ray.size)
    spread = np.zeros(ray.size)
    total = np.zeros(ray.size)
    phase = np.zeros(ray.size)
    coll = np.zeros(ray.size, dtype=bool)
    codes = np.zeros((ray.size, 0), dtype=np.int64)
    history: list = []  # per depth: (ray ids, bounce points)
    cand: list = []
    imp_best: dict = {}

    for depth in range(params.max_bounces + 1):
        if ray.size == 0:
            break
        t_surf, s_idx, t_idx = intersect_surfaces(o, d, packed)
        t_sph = intersect_spheres(o, d, sph_c, sph_r)
        # reception
        for j in range(len(rxs)):
            if t_sph.shape[1]:
                others = t_sph[:, ~own[j]]
                end = np.minimum(t_surf, others.min(axis=1)) if others.shape[1] else t_surf
            else:
                end = t_surf
            rel = rx_pos[j] - o
            tc = np.einsum("nk,nk->n", rel, d)
            inside = (tc > 0) & (tc < end)
            if not inside.any():
                continue
            miss = np.sqrt(np.maximum(0.0, np.einsum("nk,nk->n", rel, rel) - tc * tc))
            radius = np.where(coll, rx_min_r[j], np.maximum(rx_min_r[j], _CAPTURE_FACTOR * step * (total + tc)))
            hit = inside & (miss <= radius)
            if not hit.any():
                continue
            idx = np.nonzero(hit)[0]
            tci = tc[idx]
            cand.append(dict(
                rx=np.full(idx.size, j, dtype=np.int64), ray=ray[idx], depth=depth, codes=codes[idx],
                miss=miss[idx], length=total[idx] + tci,
                spread=spread[idx] + np.where(coll[idx], 0.0, tci),
                loss=loss[idx], gain=gain_db[idx], phase=phase[idx], dir=d[idx], coll=coll[idx],
            ))
        if depth == params.max_bounces:
            break
        t_end = np.minimum(t_surf, t_sph.min(axis=1)) if t_sph.shape[1] else t_surf
        alive = np.isfinite(t_surf) & (t_surf <= t_end)
        if not alive.all():
            sel = np.nonzero(alive)[0]
            ray, o, d, gain_db, loss, spread, total, phase, coll, codes = (
                a[sel] for a in (ray, o, d, gain_db, loss, spread, total, phase, coll, codes))
            t_surf, s_idx, t_idx = t_surf[sel], s_idx[sel], t_idx[sel]
        if ray.size == 0:
            break
        p = o + t_surf[:, None] * d
        on_tile = t_idx >= 0
        tsafe = np.where(on_tile, t_idx, 0)
        if len(plan.tiles):
            normal = np.where(on_tile[:, None], state.normals[tsafe], packed.normal[s_idx])
            geo = np.where(on_tile[:, None], cache["gnormals"][tsafe], packed.normal[s_idx])
        else:
            normal = geo = packed.normal[s_idx]
        new_total = total + t_surf
        new_spread = spread + np.where(coll, 0.0, t_surf)
        if params.record_impinging and on_tile.any():
            k = np.nonzero(on_tile)[0]
            pw = ref_db + gain_db[k] - 20.0 * np.log10(np.maximum(new_spread[k], 1e-9)) - loss[k]
            for tile_i, pwr, doa in zip(t_idx[k], pw, d[k]):
                cur = imp_best.get(int(tile_i))
                if cur is None or pwr > cur[0]:
                    imp_best[int(tile_i)] = (float(pwr), doa.copy())
        bounce_loss = np.where(on_tile, tile_loss_db, params.concrete_loss_db)
        if state.absorbing.size:
            bounce_loss = bounce_loss + np.where(on_tile & state.absorbing[tsafe], 35.0, 0.0)
        loss = loss + bounce_loss
        phase_add = np.where(on_tile, state.phase[tsafe] if state.phase.size else 0.0, math.pi)
        phase = np.mod(phase + phase_add, 2.0 * math.pi)
        new_d = reflect_rows(d, normal)
        total, spread = new_total, new_spread
        # first impact on a collimating tile: collapse the bundle into a beam
        if state.collimating.size and depth == 0:
            cmask = on_tile & state.collimating[tsafe] & ~coll
            if cmask.any():
                ci = np.nonzero(cmask)[0]
                centers = cache["centers"][t_idx[ci]]
                toc = centers - o[ci]
                dist = np.linalg.norm(toc, axis=1)
                inc = toc / dist[:, None]
                new_d[ci] = reflect_rows(inc, normal[ci])
                p[ci] = centers
                spread[ci] = dist
                total[ci] = dist
                gain_db[ci] = 10.0 * np.log10(np.maximum(np.asarray(antenna_gain(tx.antenna, inc)), 1e-300))
                coll[ci] = True
                # identical beams: keep the lowest launch index per tile
                _, first = np.unique(t_idx[ci], return_index=True)
                drop = np.ones(ci.size, dtype=bool)
                drop[first] = False
                if drop.any():
                    keep_mask = np.ones(ray.size, dtype=bool)
                    keep_mask[ci[drop]] = False
                    sel = np.nonzero(keep_mask)[0]
                    ray, p, new_d, gain_db, loss, spread, total, phase, coll = (
                        a[sel] for a in (ray, p, new_d, gain_db, loss, spread, total, phase, coll))
                    codes, s_idx, t_idx, geo, on_tile = codes[sel], s_idx[sel], t_idx[sel], geo[sel], on_tile[sel]
        code = np.where(on_tile, n_surf + t_idx, s_idx)
        codes = np.concatenate([codes, code[:, None]], axis=1)
        history.append((ray.copy(), p.copy()))
        # waves steered behind their own surface are lost
        front = np.einsum("nk,nk->n", new_d, geo) > 1e-12
        est = ref_db + gain_db - 20.0 * np.log10(np.maximum(spread, 1e-9)) - loss
        ok = front & (est >= floor)
        sel = np.nonzero(ok)[0]
        ray, o, d, gain_db, loss, spread, total, phase, coll, codes = (
            a[sel] for a in (ray, p, new_d, gain_db, loss, spread, total, phase, coll, codes))
    paths = _assemble(cand, history, rxs, plan, cache, n_surf, ref_db, floor)
    impinging = {k: Impinging(v[0], v[1]) for k, v in sorted(imp_best.items())}
    return TraceResult(tuple(paths), impinging, int(keep.sum()))


def _assemble(cand, history, rxs, plan, cache, n_surf, ref_db, floor) -> list:
    out = []
    ids = cache["ids"]
    for c in cand:
        depth = c["depth"]
        n = c["rx"].size
        keys = [c["ray"], c["miss"]] + [c["codes"][:, i] for i in range(depth - 1, -1, -1)] + [c["rx"]]
        order = np.lexsort(keys)
        sig = np.concatenate([c["rx"][:, None], c["codes"]], axis=1)[order]
        first = np.ones(n, dtype=bool)
        if n > 1:
            first[1:] = np.any(sig[1:] != sig[:-1], axis=1)
        for i in order[first]:
            spread = c["spread"][i]
            power = ref_db + c["gain"][i] - 20.0 * math.log10(max(spread, 1e-9)) - c["loss"][i]
            if power < floor:
                continue
            rid = int(c["ray"][i])
            pts = np.zeros((depth, 3))
            for k in range(depth):
                rays_k, pts_k = history[k]
                pos = int(np.searchsorted(rays_k, rid))
                pts[k] = pts_k[pos]
            elems = tuple(int(x) for x in c["codes"][i])
            tiles = tuple(ids[e - n_surf] if e >= n_surf else None for e in elems)
            out.append(RayPath(
                rx_index=int(c["rx"][i]), bounce_points=pts, bounce_tiles=tiles, bounce_elements=elems,
                power_dbm=float(power), delay_s=float(c["length"][i] / C), phase_rad=float(c["phase"][i]),
                arrival_dir=c["dir"][i].copy(), length_m=float(c["length"][i]), launch_index=rid,
                miss_distance=float(c["miss"][i]), collimated_since=0 if c["coll"][i] else None,
            ))
    out.sort(key=lambda p: (p.rx_index, p.n_bounces, p.bounce_elements, p.launch_index))
    return out


# --- receiver-side metrics ---------------------------------------------------


def _rx_gain_db(rx: Receiver, path: RayPath) -> float:
    g = antenna_gain(rx.antenna, -path.arrival_dir)
    return 10.0 * math.log10(g) if g > 0 else -math.inf


def received_powers(rx: Receiver, paths: Sequence[RayPath]) -> np.ndarray:
    """Per-path received power in dBm including receive antenna gain."""
    if not paths:
        return np.zeros(0)
    p = np.array([x.power_dbm for x in paths])
    dirs = -np.array([x.arrival_dir for x in paths])
    g = np.asarray(antenna_gain(rx.antenna, dirs), dtype=float)
    with np.errstate(divide="ignore"):
        return p + 10.0 * np.log10(g)


def _select(paths, rx_index):
    if rx_index is None:
        return list(paths)
    return [p for p in paths if p.rx_index == rx_index]


def power_at(rx: Receiver, paths: Sequence[RayPath], rx_index: Optional[int] = None) -> float:
    """Total received power (incoherent) in dBm; the floor when disconnected."""
    sel = _select(paths, rx_index)
    return incoherent_sum_dbm(received_powers(rx, sel).tolist())


def pdp_at(rx: Receiver, paths: Sequence[RayPath], rx_index: Optional[int] = None,
           modulo_period: Optional[float] = None) -> PowerDelayProfile:
    """Power delay profile sorted by delay.

    With ``modulo_period`` (seconds) delays are reported relative to the
    earliest arrival, modulo that period.
    """
    sel = _select(paths, rx_index)
    if not sel:
        z = np.zeros(0)
        return PowerDelayProfile(z, z, z, np.zeros(0, dtype=np.int64))
    power = received_powers(rx, sel)
    delay = np.array([p.delay_s for p in sel])
    phase = np.array([p.phase_rad for p in sel])
    ids = np.arange(len(sel))
    order = np.lexsort((ids, delay))
    delay, power, phase, ids = delay[order], power[order], phase[order], ids[order]
    if modulo_period is not None:
        delay = modulo_delays(delay, modulo_period)
    return PowerDelayProfile(delay, power, phase, ids)


def modulo_delays(delays, period: float) -> np.ndarray:
    d = np.asarray(delays, dtype=float)
    if d.size == 0:
        return d
    rel = d - d.min()
    out = np.mod(rel, period)
    # values within rounding of a full period wrap to zero
    return np.where(np.isclose(out, period, rtol=0, atol=1e-18), 0.0, out)


def delay_spread_from(delays, powers_dbm, gate_db: float = GATE_DB) -> float:
    d = np.asarray(delays, dtype=float)
    p = np.asarray(powers_dbm, dtype=float)
    ok = p > FLOOR_DBM
    d, p = d[ok], p[ok]
    if d.size <= 1:
        return 0.0
    strong = p >= p.max() - gate_db
    return float(d[strong].max() - d[strong].min())


def delay_spread(rx: Receiver, paths: Sequence[RayPath], rx_index: Optional[int] = None,
                 gate_db: float = GATE_DB) -> float:
    """Maximum excess delay among paths within ``gate_db`` of the strongest."""
    sel = _select(paths, rx_index)
    if len(sel) <= 1:
        return 0.0
    return delay_spread_from([p.delay_s for p in sel], received_powers(rx, sel), gate_db)


def receiver_metrics(scene: Scene, result: TraceResult, gate_db: float = GATE_DB):
    """``(powers_dbm, delay_spreads_s)`` for every receiver of ``scene``."""
    by_rx: dict = {}
    for p in result.paths:
        by_rx.setdefault(p.rx_index, []).append(p)
    powers = np.full(len(scene.receivers), FLOOR_DBM)
    spreads = np.zeros(len(scene.receivers))
    for j, rx in enumerate(scene.receivers):
        sel = by_rx.get(j, [])
        if not sel:
            continue
        pw = received_powers(rx, sel)
        powers[j] = incoherent_sum_dbm(pw.tolist())
        spreads[j] = delay_spread_from([p.delay_s for p in sel], pw, gate_db)
    return powers, spreads


def paths_table(scene: Scene, result: TraceResult) -> list[dict]:
    """Rows for the path CSV export (one per path)."""
    rows = []
    for p in result.paths:
        rx = scene.receivers[p.rx_index]
        pw = float(received_powers(rx, [p])[0])
        rows.append({
            "rx_id": rx.name,
            "power_dbm": pw,
            "delay_ns": p.delay_s * 1e9,
            "phase_rad": p.phase_rad,
            "n_bounces": p.n_bounces,
            "bounce_tiles": ";".join("-" if t is None else f"{t[0]}:{t[1]}" for t in p.bounce_tiles),
        })
    return rows
