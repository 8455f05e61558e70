"""Physical-layer security: routing around an eavesdropper and phase cancellation.

Route mode builds a tile visibility graph, finds K tile-disjoint routes with
a node-split min-cost flow and programs the route tiles so the transmitted
energy travels tile to tile, high above the users.  Phase mode rotates the
carrier phase of individual paths so that they cancel at the eavesdropper
while staying aligned at the intended receiver.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .em import FLOOR_DBM, AntennaKind, AntennaPattern, antenna_gain, linear_to_dbm, phasors, PathContribution
from .errors import NoCommonPathsError, NoLosTilesError, NoPathError
from .geometry import normalize, segments_clear
from .raytracer import PowerDelayProfile, Receiver, Scene
from .tiles import ActionType, TileFunction, apply_function, steer

TX = "tx"
RX = "rx"
PHASE_STEP = math.pi / 16


@dataclass(frozen=True)
class SecurityObjective:
    intended_rx: int = 0
    eavesdroppers: tuple = (1,)
    p_tx_total_dbm: float = -30.0
    tile_budget: Optional[int] = None
    phase_constraint: Optional[float] = None  # max phase step per bounce, rad

    def __post_init__(self):
        if self.tile_budget is not None and self.tile_budget <= 0:
            raise ValueError("tile budget must be positive")
        if self.phase_constraint is not None and not 0 < self.phase_constraint <= math.pi:
            raise ValueError("phase constraint must lie in (0, pi]")


@dataclass
class TileGraph:
    """Visibility graph over tiles (integer tile indices) plus two terminals."""

    positions: dict
    adj: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list:
        return list(self.positions)

    def add_edge(self, a, b, w: float) -> None:
        self.adj.setdefault(a, {})[b] = w
        self.adj.setdefault(b, {})[a] = w

    def neighbors(self, node) -> dict:
        return self.adj.get(node, {})

    def edges(self) -> list:
        out = []
        for a, nb in self.adj.items():
            for b, w in nb.items():
                if _order(a) < _order(b):
                    out.append((a, b, w))
        return sorted(out, key=lambda e: (_order(e[0]), _order(e[1])))

    def has_edge(self, a, b) -> bool:
        return b in self.adj.get(a, {})


def _order(node) -> int:
    if node == TX:
        return -1
    if node == RX:
        return 1 << 30
    return int(node)


def _terminal_edges(plan, point, pattern, owner, centers, normals, hosts) -> np.ndarray:
    to = centers - point
    dist = np.linalg.norm(to, axis=1)
    dirs = to / dist[:, None]
    facing = np.einsum("nk,nk->n", normals, -dirs) > 1e-9
    gain = np.asarray(antenna_gain(pattern, dirs)) > 0 if pattern is not None else np.ones(len(dist), bool)
    cand = np.nonzero(facing & gain)[0]
    ok = np.zeros(len(dist), dtype=bool)
    if cand.size:
        a = np.repeat(point[None, :], cand.size, axis=0)
        ignore = hosts[cand][:, None]
        owners = (owner,) if owner is not None else ()
        ok[cand] = segments_clear(a, centers[cand], plan, ignore_owners=owners, ignore_per_row=ignore)
    return ok


def build_tile_graph(scene: Scene, rx_index: int = 0, tx_pattern=None, rx_pattern=None) -> TileGraph:
    """Tile visibility graph with the scene transmitter and one receiver.

    Two tiles are adjacent when each lies in front of the other and the
    straight segment between their centres crosses no surface or opaque body.
    Terminals connect to visible tiles inside their antenna lobes.
    """
    plan = scene.plan
    tiles = plan.tiles
    if not tiles:
        raise NoLosTilesError("scene has no tiles")
    centers = np.array([t.center for t in tiles])
    normals = np.array([t.geometric_normal for t in tiles])
    hosts = np.array([t.host for t in tiles])
    rx = scene.receivers[rx_index]
    graph = TileGraph({TX: scene.tx.position, **{i: centers[i] for i in range(len(tiles))}, RX: rx.position})
    ia, ib = np.triu_indices(len(tiles), k=1)
    d = centers[ib] - centers[ia]
    facing = (np.einsum("nk,nk->n", normals[ia], d) > 1e-9) & (np.einsum("nk,nk->n", normals[ib], -d) > 1e-9)
    ia, ib = ia[facing], ib[facing]
    clear = segments_clear(centers[ia], centers[ib], plan,
                           ignore_per_row=np.stack([hosts[ia], hosts[ib]], axis=1)) if ia.size else np.zeros(0, bool)
    dist = np.linalg.norm(centers[ib] - centers[ia], axis=1)
    for a, b, w in zip(ia[clear], ib[clear], dist[clear]):
        graph.add_edge(int(a), int(b), float(w))
    tx_pat = scene.tx.antenna if tx_pattern is None else tx_pattern
    rx_pat = rx.antenna if rx_pattern is None else rx_pattern
    for term, point, pat, owner in ((TX, scene.tx.position, tx_pat, scene.tx.name),
                                    (RX, rx.position, rx_pat, rx.name)):
        ok = _terminal_edges(plan, point, pat, owner, centers, normals, hosts)
        if not ok.any():
            raise NoLosTilesError(f"{term} sees no tile")
        for i in np.nonzero(ok)[0]:
            graph.add_edge(term, int(i), float(np.linalg.norm(centers[i] - point)))
    return graph


# --- tile-disjoint routes -----------------------------------------------------


class _FlowNet:
    def __init__(self, n: int):
        self.head = [[] for _ in range(n)]
        self.to: list = []
        self.cap: list = []
        self.cost: list = []

    def add(self, u: int, v: int, cap: int, cost: float) -> None:
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap)
        self.cost.append(cost)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0)
        self.cost.append(-cost)


def k_disjoint_paths(graph: TileGraph, k: int) -> list[list[int]]:
    """Up to ``k`` TX to RX routes that share no tile, of minimum total length.

    Each tile is split into an in/out pair joined by a unit-capacity arc, and
    successive shortest augmenting paths (Dijkstra with potentials) push one
    unit at a time.  Returns tile index lists ordered from TX to RX.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    order = sorted(graph.nodes, key=_order)
    idx = {node: i for i, node in enumerate(order)}
    n = len(order)
    net = _FlowNet(2 * n)
    for node in order:
        v = idx[node]
        net.add(2 * v, 2 * v + 1, k if node in (TX, RX) else 1, 0.0)
    for a, b, w in graph.edges():
        for u, v in ((a, b), (b, a)):
            if v == TX or u == RX:
                continue
            net.add(2 * idx[u] + 1, 2 * idx[v], 1, w)
    src, dst = 2 * idx[TX] + 1, 2 * idx[RX]
    pot = [0.0] * (2 * n)
    flow = 0
    while flow < k:
        dist = [math.inf] * (2 * n)
        prev = [-1] * (2 * n)
        dist[src] = 0.0
        heap = [(0.0, src)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > dist[u]:
                continue
            for e in net.head[u]:
                if net.cap[e] <= 0:
                    continue
                v = net.to[e]
                nd = du + net.cost[e] + pot[u] - pot[v]
                if nd < dist[v] - 1e-12:
                    dist[v] = nd
                    prev[v] = e
                    heapq.heappush(heap, (nd, v))
        if dist[dst] == math.inf:
            break
        for v in range(2 * n):
            if dist[v] < math.inf:
                pot[v] += dist[v]
        v = dst
        while v != src:
            e = prev[v]
            net.cap[e] -= 1
            net.cap[e ^ 1] += 1
            v = net.to[e ^ 1]
        flow += 1
    if flow == 0:
        raise NoPathError("no route connects the transmitter to the receiver")
    # decompose the flow into routes
    used = {}
    for u in range(2 * n):
        for e in net.head[u]:
            if e % 2 == 0 and net.cap[e ^ 1] > 0 and net.to[e] != u:
                used.setdefault(u, []).append(e)
    routes = []
    for _ in range(flow):
        route = []
        u = src
        while u != dst:
            e = used[u].pop(0)
            v = net.to[e]
            if v % 2 == 0 and v != dst:
                route.append(order[v // 2])
                u = v + 1
            else:
                u = v
        routes.append(route)

    def length(route):
        pts = [graph.positions[TX]] + [graph.positions[t] for t in route] + [graph.positions[RX]]
        return sum(float(np.linalg.norm(pts[i + 1] - pts[i])) for i in range(len(pts) - 1))

    return sorted(routes, key=lambda r: (length(r), r))


def beam_cutoff_deg(source, tile) -> float:
    """Half-angle of a cone from ``source`` that stays inside ``tile``."""
    to = tile.center - np.asarray(source, dtype=float)
    dist = float(np.linalg.norm(to))
    cos_t = abs(float(np.dot(to / dist, tile.geometric_normal)))
    return 0.9 * math.degrees(math.atan(0.5 * tile.side * cos_t / dist))


def deploy_secure_route(scene: Scene, paths: Sequence[Sequence[int]], collimate_first: bool = True,
                        rx_index: int = 0, tile_budget: Optional[int] = None, beamform: bool = True,
                        half_angle_deg: float = 30.0) -> Scene:
    """Program STEER along each route and aim the end devices at the route ends.

    Routes beyond ``tile_budget`` deployed tiles are dropped whole.  With
    ``beamform`` the transmitter gets one narrow beam per route, aimed at
    the first tile and shaped not to spill past it, with the transmit power
    split evenly; the intended receiver points a lobe at each last tile.
    """
    plan = scene.plan
    tiles = list(plan.tiles)
    rx = scene.receivers[rx_index]
    kept = []
    count = 0
    for route in paths:
        if tile_budget is not None and count + len(route) > tile_budget:
            break
        kept.append(list(route))
        count += len(route)
    for route in kept:
        pts = [scene.tx.position] + [tiles[t].center for t in route] + [rx.position]
        for j, t in enumerate(route):
            d_in = normalize(pts[j + 1] - pts[j])
            d_out = normalize(pts[j + 2] - pts[j + 1])
            tile = apply_function(tiles[t], steer(d_in, d_out))
            if j == 0 and collimate_first:
                tile = apply_function(tile, TileFunction(ActionType.COLLIMATE), stack=True)
            tiles[t] = tile
    new = scene.evolve(plan=plan.with_tiles(tiles))
    if beamform and kept:
        k = len(kept)
        beams = tuple(
            AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, plan.tiles[r[0]].center - scene.tx.position,
                           half_angle_deg, beam_cutoff_deg(scene.tx.position, plan.tiles[r[0]]), 1.0 / k)
            for r in kept)
        lobes = tuple(
            AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, plan.tiles[r[-1]].center - rx.position, half_angle_deg)
            for r in kept)
        rxs = list(scene.receivers)
        rxs[rx_index] = Receiver(rx.position, lobes if k > 1 else lobes[0], rx.capture_radius, rx.name)
        tx = type(scene.tx)(scene.tx.position, beams if k > 1 else beams[0], scene.tx.power_dbm, scene.tx.name)
        new = new.evolve(tx=tx, receivers=tuple(rxs))
    return new


# --- phase cancellation -------------------------------------------------------


class PhasePlan(NamedTuple):
    path_ids: np.ndarray  # controllable path ids
    eve_offsets: np.ndarray  # rad, applied before the eavesdropper
    rx_offsets: np.ndarray  # rad, net offset seen at the intended receiver per rx row
    eve_before_dbm: float
    eve_after_dbm: float
    rx_before_dbm: float
    rx_after_dbm: float
    rx_aligned_dbm: float
    flagged: bool

    @property
    def eve_attenuation_db(self) -> float:
        return self.eve_before_dbm - self.eve_after_dbm

    @property
    def rx_loss_db(self) -> float:
        return self.rx_aligned_dbm - self.rx_after_dbm


def profile_phasors(pdp: PowerDelayProfile, f_c: float) -> np.ndarray:
    amp = np.sqrt(10.0 ** (np.asarray(pdp.power_dbm, dtype=float) / 10.0))
    contribs = [PathContribution(a, t, th) for a, t, th in zip(amp, pdp.delay_s, pdp.phase_rad)]
    return phasors(contribs, f_c)


def _dbm(z) -> float:
    return float(linear_to_dbm(abs(z) ** 2))


class _Problem:
    """Eve and rx phasor sums as functions of the per-path offsets."""

    def __init__(self, pdp_eve, pdp_rx, f_c, compensated):
        ze = profile_phasors(pdp_eve, f_c)
        zr = profile_phasors(pdp_rx, f_c)
        ids_e = [int(x) for x in pdp_eve.path_ids]
        ids_r = [int(x) for x in pdp_rx.path_ids]
        if len(set(ids_e)) != len(ids_e) or len(set(ids_r)) != len(ids_r):
            raise ValueError("path ids must be unique within a profile")
        self.ids = sorted(set(ids_e) & set(ids_r))
        pos_e = {p: i for i, p in enumerate(ids_e)}
        pos_r = {p: i for i, p in enumerate(ids_r)}
        common_e = np.array([pos_e[p] for p in self.ids], dtype=np.int64)
        common_r = np.array([pos_r[p] for p in self.ids], dtype=np.int64)
        self.ze = ze[common_e] if self.ids else np.zeros(0, complex)
        self.ce = ze.sum() - self.ze.sum()
        self.zr = zr[common_r] if self.ids else np.zeros(0, complex)
        self.cr = zr.sum() - self.zr.sum()
        comp = np.zeros(len(ids_r), dtype=bool) if compensated is None else np.asarray(compensated, dtype=bool)
        self.comp = comp[common_r] if self.ids else np.zeros(0, bool)
        self.rx_rows = common_r
        self.n_rx = len(ids_r)
        self.eve_plain = ze.sum()
        self.rx_plain = zr.sum()
        self.rx_aligned = abs(self.cr) + float(np.abs(self.zr).sum())

    def eve(self, delta: np.ndarray) -> np.ndarray:
        """|eve sum|^2 for offsets of shape (..., n)."""
        return np.abs(self.ce + (self.ze * np.exp(-1j * delta)).sum(axis=-1)) ** 2

    def rx(self, delta: np.ndarray):
        """Rx magnitude after equalizing compensated rows onto the rest."""
        rot = self.zr * np.exp(-1j * delta)
        fixed = self.cr + np.where(self.comp, 0, rot).sum(axis=-1)
        free = np.where(self.comp, np.abs(self.zr), 0.0).sum(axis=-1)
        return np.abs(fixed) + free, fixed


def _grid(limit: Optional[float], step: float) -> np.ndarray:
    if limit is None:
        return np.arange(int(round(2 * math.pi / step))) * step
    return np.arange(int(math.floor(limit / step + 1e-9)) + 1) * step


def phase_cancel(pdp_eve: PowerDelayProfile, pdp_rx: PowerDelayProfile, f_c: float,
                 constraint: Optional[float] = None, bounce_counts: Optional[Sequence[int]] = None,
                 compensated: Optional[Sequence[bool]] = None, tolerance_db: float = 0.5,
                 step: float = PHASE_STEP) -> PhasePlan:
    """Choose per-path phase offsets that weaken the eavesdropper's resultant.

    Paths are matched across the two profiles by ``path_ids``.  An offset
    ``delta_i`` is applied on a tile the path meets before the eavesdropper,
    so it rotates path ``i`` at both receivers.  Rx rows marked
    ``compensated`` meet another tile after the eavesdropper that undoes the
    offset and equalizes the row onto the remaining resultant.  The intended
    receiver must stay within ``tolerance_db`` of its phase-aligned maximum.
    With ``constraint`` set, path ``i`` may be shifted by at most
    ``constraint * bounce_counts[i]`` in total.
    """
    prob = _Problem(pdp_eve, pdp_rx, f_c, compensated)
    n = len(prob.ids)
    if n == 0:
        raise NoCommonPathsError("no path reaches both the eavesdropper and the receiver")
    counts = np.ones(n, dtype=int) if bounce_counts is None else np.asarray(bounce_counts, dtype=int)
    grids = [_grid(None if constraint is None else constraint * max(1, int(c)), step) for c in counts]
    need = prob.rx_aligned * 10.0 ** (-tolerance_db / 20.0)

    def feasible(delta):
        return prob.rx(delta)[0] >= need - 1e-12

    def score(delta):
        return float(prob.eve(delta)) if feasible(delta) else math.inf

    starts = _starts(prob, grids, step)
    best, best_s = None, math.inf
    for start in starts:
        if not math.isfinite(score(start)):
            continue
        cur = _descend(prob, start, grids, need)
        s = score(cur)
        if s < best_s - 1e-15:
            best, best_s = cur, s
    if best is not None:
        exact = _exhaustive(prob, grids, need, best_s, circular=constraint is None)
        if exact is not None:
            best = exact
    flagged = n < 2
    if best is None:
        best = np.zeros(n)
        flagged = True
    mag, fixed = prob.rx(best)
    ref = np.angle(fixed) if abs(fixed) > 0 else np.angle(prob.zr[0])
    rx_off = np.zeros(prob.n_rx)
    for i, row in enumerate(prob.rx_rows):
        if prob.comp[i]:
            rx_off[row] = np.mod(np.angle(prob.zr[i]) - ref, 2 * math.pi)
        else:
            rx_off[row] = best[i]
    return PhasePlan(
        path_ids=np.array(prob.ids), eve_offsets=best, rx_offsets=rx_off,
        eve_before_dbm=_dbm(prob.eve_plain), eve_after_dbm=float(linear_to_dbm(prob.eve(best))),
        rx_before_dbm=_dbm(prob.rx_plain), rx_after_dbm=float(linear_to_dbm(mag ** 2)),
        rx_aligned_dbm=float(linear_to_dbm(prob.rx_aligned ** 2)), flagged=flagged,
    )


def _snap(values: np.ndarray, grids) -> np.ndarray:
    out = np.empty(len(grids))
    for i, g in enumerate(grids):
        diff = np.abs(np.angle(np.exp(1j * (g - values[i]))))
        out[i] = g[int(np.argmin(diff))]
    return out


def _starts(prob: _Problem, grids, step) -> list:
    """Initial points: the rx-aligned offsets and the greedy pair grouping."""
    n = len(prob.ids)
    ref_r = np.angle(prob.cr) if abs(prob.cr) > 0 else np.angle(prob.zr[int(np.argmax(np.abs(prob.zr)))])
    aligned = np.mod(np.angle(prob.zr) - ref_r, 2 * math.pi)
    starts = [_snap(aligned, grids), np.zeros(n)]
    # Greedy grouping: the strongest eve path (or the fixed eve part) sets the
    # reference; near-equal neighbours in amplitude are paired in antiphase and
    # every other path is turned against the reference.
    amp = np.abs(prob.ze)
    order = sorted(range(n), key=lambda i: (-amp[i], i))
    if abs(prob.ce) >= amp.max():
        ref = np.angle(prob.ce)
        rest = order
    else:
        ref = np.angle(prob.ze[order[0]])
        rest = order[1:]
    opposed = np.zeros(n)
    for i in rest:
        opposed[i] = np.angle(prob.ze[i]) - (ref + math.pi)
    grouped = opposed.copy()
    j = 0
    while j + 1 < len(rest):
        a, b = rest[j], rest[j + 1]
        if amp[b] >= 0.8 * amp[a]:
            grouped[a] = np.angle(prob.ze[a]) - (ref + math.pi / 2)
            grouped[b] = np.angle(prob.ze[b]) - (ref - math.pi / 2)
            j += 2
        else:
            j += 1
    if abs(prob.ce) < amp.max():
        opposed[order[0]] = 0.0
        grouped[order[0]] = 0.0
    starts.append(_snap(np.mod(opposed, 2 * math.pi), grids))
    starts.append(_snap(np.mod(grouped, 2 * math.pi), grids))
    return starts


def _descend(prob: _Problem, start: np.ndarray, grids, need: float, max_sweeps: int = 50,
             pair_limit: int = 12) -> np.ndarray:
    """Coordinate descent over the phase grid, with pairwise moves for small problems.

    The eve and rx sums are updated incrementally, so one sweep costs
    O(n * grid) regardless of the number of paths.
    """
    cur = start.copy()
    n = len(cur)
    ze, zr, live = prob.ze, prob.zr, ~prob.comp
    free = float(np.abs(zr[prob.comp]).sum())
    rots = [np.exp(-1j * g) for g in grids]

    def sums(delta):
        rot = np.exp(-1j * delta)
        return prob.ce + (ze * rot).sum(), prob.cr + (zr * rot)[live].sum()

    se, fr = sums(cur)
    best = abs(se) ** 2
    for _ in range(max_sweeps):
        improved = False
        for i in range(n):
            old = np.exp(-1j * cur[i])
            se_c = se + ze[i] * (rots[i] - old)
            fr_c = fr + (zr[i] * (rots[i] - old) if live[i] else 0.0)
            score = np.where(np.abs(fr_c) + free >= need - 1e-12, np.abs(se_c) ** 2, np.inf)
            k = int(np.argmin(score))
            if score[k] < best * (1 - 1e-12) - 1e-300:
                cur[i] = grids[i][k]
                se = se_c[k]
                fr = fr_c[k] if live[i] else fr
                best = float(score[k])
                improved = True
        if not improved and n <= pair_limit:
            for i in range(n):
                for j in range(i + 1, n):
                    oi, oj = np.exp(-1j * cur[i]), np.exp(-1j * cur[j])
                    di = (rots[i] - oi)[:, None]
                    dj = (rots[j] - oj)[None, :]
                    se_c = se + ze[i] * di + ze[j] * dj
                    fr_c = fr + (zr[i] * di if live[i] else 0.0) + (zr[j] * dj if live[j] else 0.0)
                    fr_c = np.broadcast_to(fr_c, se_c.shape)
                    score = np.where(np.abs(fr_c) + free >= need - 1e-12, np.abs(se_c) ** 2, np.inf)
                    a, b = np.unravel_index(int(np.argmin(score)), score.shape)
                    if score[a, b] < best * (1 - 1e-12) - 1e-300:
                        cur[i], cur[j] = grids[i][a], grids[j][b]
                        se, fr, best = se_c[a, b], fr_c[a, b], float(score[a, b])
                        improved = True
        se, fr = sums(cur)
        best = abs(se) ** 2
        if not improved:
            break
    return cur


def _exhaustive(prob: _Problem, grids, need: float, incumbent: float, circular: bool,
                limit: int = 1 << 22) -> Optional[np.ndarray]:
    """Branch and bound over the whole phase grid, seeded with ``incumbent``.

    Returns offsets strictly better than the incumbent, or ``None`` when the
    incumbent is already optimal or the pruned tree outgrows ``limit``.
    """
    ze, zr, live = prob.ze, prob.zr, ~prob.comp
    n = len(ze)
    free = float(np.abs(zr[prob.comp]).sum())
    order = sorted(range(n), key=lambda i: (-(abs(ze[i]) + abs(zr[i])), i))
    mag_e = np.abs(ze[order])
    mag_r = np.where(live[order], np.abs(zr[order]), 0.0)
    rest_e = np.concatenate([np.cumsum(mag_e[::-1])[::-1][1:], [0.0]])
    rest_r = np.concatenate([np.cumsum(mag_r[::-1])[::-1][1:], [0.0]])
    # with no fixed part both magnitudes ignore a common rotation, so one offset can be pinned
    pin = circular and prob.ce == 0 and prob.cr == 0
    e_sum = np.array([prob.ce], dtype=complex)
    r_sum = np.array([prob.cr], dtype=complex)
    parents, choices = [], []
    for level, i in enumerate(order):
        opts = np.exp(-1j * grids[i][:1]) if pin and level == 0 else np.exp(-1j * grids[i])
        if e_sum.size * opts.size > limit:
            return None
        e2 = (e_sum[:, None] + ze[i] * opts[None, :]).ravel()
        r2 = np.repeat(r_sum, opts.size) if not live[i] else (r_sum[:, None] + zr[i] * opts[None, :]).ravel()
        ok = np.abs(r2) + rest_r[level] + free >= need - 1e-12
        ok &= np.maximum(np.abs(e2) - rest_e[level], 0.0) ** 2 < incumbent * (1 - 1e-12)
        keep = np.nonzero(ok)[0]
        if keep.size == 0:
            return None
        parents.append(keep // opts.size)
        choices.append(keep % opts.size)
        e_sum, r_sum = e2[keep], r2[keep]
    k = int(np.argmin(np.abs(e_sum)))
    delta = np.zeros(n)
    for level in range(n - 1, -1, -1):
        delta[order[level]] = grids[order[level]][choices[level][k]]
        k = int(parents[level][k])
    return delta


class PhaseModeResult(NamedTuple):
    plan: PhasePlan
    pdp_eve: PowerDelayProfile
    pdp_rx: PowerDelayProfile
    compensated: np.ndarray


def matched_profiles(scene: Scene, result, rx_index: int, eve_index: int, f_c: float):
    """Eve and rx profiles whose shared ``path_ids`` mark phase-controllable paths.

    An eve path is controllable when it met at least one tile, since a
    PHASE_ALTER can then sit on that tile.  It is paired with its strongest
    continuation at the intended receiver (an rx path whose bounce sequence
    starts with the eve path's).  The rx row is compensated when the
    continuation meets another tile after passing the eavesdropper.
    """
    from .raytracer import received_powers

    n_surf = len(scene.plan.surfaces)
    eve_paths = result.for_rx(eve_index)
    rx_paths = result.for_rx(rx_index)
    pe = received_powers(scene.receivers[eve_index], eve_paths)
    pr = received_powers(scene.receivers[rx_index], rx_paths)
    by_prefix: dict = {}
    for j, p in enumerate(rx_paths):
        if pr[j] <= FLOOR_DBM:
            continue
        sig = p.bounce_elements
        for k in range(1, len(sig) + 1):
            by_prefix.setdefault(sig[:k], []).append(j)
    rx_ids = np.arange(len(rx_paths), dtype=np.int64) + len(eve_paths)
    comp = np.zeros(len(rx_paths), dtype=bool)
    taken: set = set()
    for i in sorted(range(len(eve_paths)), key=lambda i: (-pe[i], i)):
        sig = eve_paths[i].bounce_elements
        if not any(e >= n_surf for e in sig):
            continue
        cands = [j for j in by_prefix.get(sig, []) if j not in taken]
        if not cands:
            continue
        j = max(cands, key=lambda j: (pr[j], -j))
        taken.add(j)
        rx_ids[j] = i
        comp[j] = any(e >= n_surf for e in rx_paths[j].bounce_elements[len(sig):])

    def profile(paths, powers, ids):
        keep = powers > FLOOR_DBM
        return PowerDelayProfile(np.array([p.delay_s for p in paths])[keep] if paths else np.zeros(0),
                                 powers[keep], np.array([p.phase_rad for p in paths])[keep] if paths else np.zeros(0),
                                 ids[keep])

    ev = profile(eve_paths, pe, np.arange(len(eve_paths), dtype=np.int64))
    keep_r = pr > FLOOR_DBM
    rx = profile(rx_paths, pr, rx_ids)
    return ev, rx, comp[keep_r]


def phase_mode(scene: Scene, params, rx_index: int = 0, eve_index: int = 1,
               constraint: Optional[float] = None) -> PhaseModeResult:
    """Plain trace followed by phase cancellation at the eavesdropper."""
    from .raytracer import trace

    result = trace(scene, params=params)
    ev, rx, comp = matched_profiles(scene, result, rx_index, eve_index, params.carrier_freq)
    plan = phase_cancel(ev, rx, params.carrier_freq, constraint=constraint, compensated=comp)
    return PhaseModeResult(plan, ev, rx, comp)
