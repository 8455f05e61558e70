"""Environment control software: callbacks, the tile gateway network, reporting.

Tiles form a wired grid of gateways.  The configuration server reaches the
grid through one or more entry-point gateways; a callback becomes a packet
that is routed hop by hop (dimension-ordered, detouring around known faults)
to the target gateway, which sets the tile's switches and acknowledges.

The simulation is a discrete-event loop in rounds: one packet hop per round.
Each controller is a small automaton:

    IDLE --packet to forward--> RELAYING --forwarded--> IDLE
    IDLE --monitor request----> REPORTING --reply sent--> IDLE
    any  --fault--------------> FAULTY    --repair-----> IDLE

FAULTY is absorbing until repaired.  Neighbours notice a faulty node in the
liveness exchange at the start of the next round; there are no retries, a
packet simply takes a detour computed from the current liveness maps.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .tiles import ActionType, ConfigTable, SwitchConfig, TileFunction, best_config, generate_config_table


class NodeState(enum.Enum):
    IDLE = "IDLE"
    RELAYING = "RELAYING"
    REPORTING = "REPORTING"
    FAULTY = "FAULTY"


_TRANSITIONS = {
    (NodeState.IDLE, "forward"): NodeState.RELAYING,
    (NodeState.RELAYING, "done"): NodeState.IDLE,
    (NodeState.IDLE, "monitor"): NodeState.REPORTING,
    (NodeState.REPORTING, "done"): NodeState.IDLE,
    (NodeState.IDLE, "fault"): NodeState.FAULTY,
    (NodeState.RELAYING, "fault"): NodeState.FAULTY,
    (NodeState.REPORTING, "fault"): NodeState.FAULTY,
    (NodeState.FAULTY, "fault"): NodeState.FAULTY,
    (NodeState.FAULTY, "repair"): NodeState.IDLE,
}


class Outcome(NamedTuple):
    status: str  # "ACK" or "ERROR"
    hops: Optional[int] = None
    code: Optional[str] = None
    token: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ACK"


@dataclass(frozen=True)
class Callback:
    tile_id: tuple
    action_type: ActionType
    parameters: Optional[TileFunction] = None
    token: Optional[str] = None
    malformed: bool = False  # the payload failed to parse

    def __post_init__(self):
        object.__setattr__(self, "tile_id", tuple(int(x) for x in self.tile_id))
        if isinstance(self.action_type, str):
            object.__setattr__(self, "action_type", ActionType(self.action_type))

    def consistent(self) -> bool:
        fn = self.parameters
        if self.malformed:
            return False
        if fn is None:
            return self.action_type in (ActionType.ABSORB, ActionType.COLLIMATE)
        if fn.action_type is not self.action_type:
            return False
        if self.action_type is ActionType.STEER:
            return fn.normal_angles is not None or (fn.incident is not None and fn.outgoing is not None)
        if self.action_type is ActionType.ABSORB:
            return fn.outgoing is None
        return True

    def function(self) -> TileFunction:
        return self.parameters if self.parameters is not None else TileFunction(self.action_type)


@dataclass
class ControllerNode:
    address: tuple
    state: NodeState = NodeState.IDLE
    switch: Optional[SwitchConfig] = None
    function: Optional[TileFunction] = None
    neighbor_alive: dict = field(default_factory=dict)
    sensed_power_dbm: Optional[float] = None
    sensed_doa: Optional[np.ndarray] = None

    def fire(self, event: str) -> None:
        nxt = _TRANSITIONS.get((self.state, event))
        if nxt is None:
            raise RuntimeError(f"{self.address}: no transition from {self.state.value} on {event!r}")
        self.state = nxt


class MonitorReport(NamedTuple):
    status: str
    tile_id: tuple
    switch: Optional[SwitchConfig] = None
    function: Optional[TileFunction] = None
    sensed_power_dbm: Optional[float] = None
    sensed_doa: Optional[np.ndarray] = None
    hops: Optional[int] = None
    code: Optional[str] = None


class IntraTileGrid:
    """Controller grid inside one tile, used when switches are not wired directly.

    The gateway sits at controller (0, 0); a configuration floods the grid one
    controller hop per round and each controller latches its own switch bit.
    """

    def __init__(self, shape=(8, 8)):
        self.shape = tuple(shape)
        self.bits = np.zeros(self.shape, dtype=np.uint8)
        self.states = np.full(self.shape, NodeState.IDLE.value, dtype=object)

    def apply(self, config: SwitchConfig) -> int:
        rows, cols = self.shape
        if config.states.shape != self.shape:
            raise ValueError("switch matrix does not fit the controller grid")
        seen = np.zeros(self.shape, dtype=bool)
        frontier = [(0, 0)]
        seen[0, 0] = True
        rounds = 0
        while frontier:
            nxt = []
            for r, c in frontier:
                self.states[r, c] = NodeState.RELAYING.value
                self.bits[r, c] = config.states[r, c]
                for dr, dc in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and not seen[rr, cc]:
                        seen[rr, cc] = True
                        nxt.append((rr, cc))
            for r, c in frontier:
                self.states[r, c] = NodeState.IDLE.value
            frontier = nxt
            rounds += 1
        return rounds - 1

    def config(self) -> SwitchConfig:
        return SwitchConfig(self.bits.copy())


class TileNetwork:
    """Grid of tile gateways wired to their 4-neighbours.

    ``addresses`` restricts the grid to existing gateways (default: the full
    ``shape``).  With ``controller_grid`` the switches inside each tile are
    driven through an :class:`IntraTileGrid` rather than directly.
    """

    def __init__(self, shape, entry_points: Sequence = ((0, 0),), table: Optional[ConfigTable] = None,
                 tiles: Optional[dict] = None, addresses=None, controller_grid: bool = False):
        self.shape = tuple(shape)
        rows, cols = self.shape
        addrs = [(r, c) for r in range(rows) for c in range(cols)] if addresses is None else addresses
        self.nodes = {tuple(a): ControllerNode(tuple(a)) for a in addrs}
        self.entry_points = [tuple(e) for e in entry_points]
        for e in self.entry_points:
            if e not in self.nodes:
                raise ValueError(f"entry point {e} is not a gateway")
        self.table = generate_config_table() if table is None else table
        self.tiles = tiles or {}
        self.controller_grid = controller_grid
        self.inner = {a: IntraTileGrid(self.table.entries[0].switch.states.shape) for a in self.nodes} \
            if controller_grid else {}
        self.round = 0
        self.outcomes: dict = {}
        self.applied = 0
        self._seq = itertools.count()
        self.detect_faults()

    @classmethod
    def for_plan(cls, plan, entry_points=((0, 0),), table=None, controller_grid=False) -> "TileNetwork":
        tiles = {t.id: t for t in plan.tiles}
        return cls(plan.network_shape, entry_points, table, tiles, list(tiles), controller_grid)

    # topology

    def neighbors(self, addr) -> list:
        r, c = addr
        out = [(r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)]
        return [a for a in out if a in self.nodes]

    def alive(self, addr) -> bool:
        return self.nodes[addr].state is not NodeState.FAULTY

    def inject_fault(self, addr) -> None:
        self.nodes[tuple(addr)].fire("fault")

    def repair(self, addr) -> None:
        self.nodes[tuple(addr)].fire("repair")
        self.detect_faults()

    def detect_faults(self) -> set:
        """One liveness exchange round; returns the set of detected faults.

        A faulty node is detected by any live neighbour, and a faulty node
        with no live neighbour detects itself (self-failure report).
        """
        detected = set()
        for addr, node in self.nodes.items():
            node.neighbor_alive = {n: self.alive(n) for n in self.neighbors(addr)}
        for addr, node in self.nodes.items():
            if node.state is NodeState.FAULTY:
                detected.add(addr)
        self.round += 1
        return detected

    def _known_dead(self) -> set:
        dead = set()
        for node in self.nodes.values():
            for n, ok in node.neighbor_alive.items():
                if not ok:
                    dead.add(n)
        return dead | {a for a, n in self.nodes.items() if n.state is NodeState.FAULTY}

    def bfs(self, src, dead=None) -> dict:
        dead = self._known_dead() if dead is None else dead
        if src in dead:
            return {}
        dist = {src: 0}
        q = deque([src])
        while q:
            u = q.popleft()
            for v in self.neighbors(u):
                if v not in dist and v not in dead:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    def route(self, src, dst) -> Optional[list]:
        """Dimension-ordered route (columns first) or a shortest detour."""
        dead = self._known_dead()
        if src in dead or dst in dead:
            return None
        path = [src]
        r, c = src
        while c != dst[1]:
            c += 1 if dst[1] > c else -1
            path.append((r, c))
        while r != dst[0]:
            r += 1 if dst[0] > r else -1
            path.append((r, c))
        if all(p in self.nodes and p not in dead for p in path):
            return path
        prev = {src: None}
        q = deque([src])
        while q:
            u = q.popleft()
            if u == dst:
                break
            for v in sorted(self.neighbors(u)):
                if v not in prev and v not in dead:
                    prev[v] = u
                    q.append(v)
        if dst not in prev:
            return None
        out = [dst]
        while prev[out[-1]] is not None:
            out.append(prev[out[-1]])
        return out[::-1]

    def nearest_entry(self, dst) -> Optional[tuple]:
        best = None
        for e in sorted(self.entry_points):
            d = self.bfs(e).get(dst)
            if d is not None and (best is None or d < best[0]):
                best = (d, e)
        return None if best is None else best[1]

    # packet simulation

    def _simulate(self, path: list, on_arrival) -> int:
        """Walk a packet along ``path`` in the event loop; return hop count."""
        events: list = []
        heapq.heappush(events, (self.round, next(self._seq), 0))
        hops = 0
        while events:
            t, _, k = heapq.heappop(events)
            node = self.nodes[path[k]]
            if k == len(path) - 1:
                on_arrival(node)
                self.round = t
                break
            node.fire("forward")
            hops += 1
            heapq.heappush(events, (t + 1, next(self._seq), k + 1))
            node.fire("done")
        return hops

    def dispatch(self, callback: Callback) -> Outcome:
        token = callback.token
        if token is not None and token in self.outcomes:
            return self.outcomes[token]
        outcome = self._dispatch(callback)
        if token is not None:
            self.outcomes[token] = outcome
        return outcome

    def _dispatch(self, cb: Callback) -> Outcome:
        if cb.tile_id not in self.nodes:
            return Outcome("ERROR", code="NO_SUCH_TILE", token=cb.token)
        if not cb.consistent():
            return Outcome("ERROR", code="BAD_PARAMETERS", token=cb.token)
        fn = cb.function()
        try:
            switch = best_config(fn, self.table, self.tiles.get(cb.tile_id))
        except ValueError:
            return Outcome("ERROR", code="BAD_PARAMETERS", token=cb.token)
        self.detect_faults()
        entry = self.nearest_entry(cb.tile_id)
        path = None if entry is None else self.route(entry, cb.tile_id)
        if path is None:
            return Outcome("ERROR", code="UNREACHABLE", token=cb.token)

        def arrive(node: ControllerNode):
            if self.controller_grid:
                self.inner[node.address].apply(switch)
                node.switch = self.inner[node.address].config()
            else:
                node.switch = switch
            node.function = fn
            self.applied += 1

        hops = self._simulate(path, arrive)
        return Outcome("ACK", hops=hops, token=cb.token)

    def dispatch_batch(self, callbacks: Sequence[Callback]) -> list:
        return [self.dispatch(cb) for cb in callbacks]

    def report(self, tile_id) -> MonitorReport:
        tile_id = tuple(tile_id)
        if tile_id not in self.nodes:
            return MonitorReport("ERROR", tile_id, code="NO_SUCH_TILE")
        self.detect_faults()
        entry = self.nearest_entry(tile_id)
        path = None if entry is None else self.route(entry, tile_id)
        if path is None:
            return MonitorReport("ERROR", tile_id, code="UNREACHABLE")
        snapshot = {}

        def arrive(node: ControllerNode):
            node.fire("monitor")
            snapshot.update(switch=node.switch, function=node.function, power=node.sensed_power_dbm,
                            doa=None if node.sensed_doa is None else node.sensed_doa.copy())
            node.fire("done")

        hops = self._simulate(path, arrive)
        return MonitorReport("OK", tile_id, snapshot["switch"], snapshot["function"], snapshot["power"],
                             snapshot["doa"], hops)

    def load_sensing(self, plan, result) -> None:
        """Store the strongest impinging wave per tile from a trace result."""
        for idx, imp in result.impinging.items():
            addr = plan.tiles[idx].id
            if addr in self.nodes:
                self.nodes[addr].sensed_power_dbm = float(imp.power_dbm)
                self.nodes[addr].sensed_doa = np.asarray(imp.doa, dtype=float)


def callback_from_dict(d: dict, index: int = 0) -> Callback:
    """Parse one JSON callback: ``{tile_id, action, I?, O?, phase?, normal_angles?}``."""
    action = ActionType(d["action"])
    fn = None
    malformed = False
    try:
        if action is ActionType.STEER:
            if "normal_angles" in d:
                fn = TileFunction(action, normal_angles=tuple(float(x) for x in d["normal_angles"]))
            elif "I" in d and "O" in d:
                fn = TileFunction(action, incident=d["I"], outgoing=d["O"])
        elif action is ActionType.ABSORB:
            fn = TileFunction(action, incident=d.get("I"), outgoing=d.get("O"))
        elif action is ActionType.PHASE_ALTER:
            fn = TileFunction(action, phase_offset=float(d.get("phase", 0.0)))
        else:
            fn = TileFunction(action)
    except ValueError:
        malformed = True
    return Callback(tuple(d["tile_id"]), action, fn, d.get("token", f"cb{index}"), malformed)


def outcome_to_dict(cb: Callback, out: Outcome) -> dict:
    d = {"tile_id": list(cb.tile_id), "action": cb.action_type.value, "status": out.status}
    if out.hops is not None:
        d["hops"] = out.hops
    if out.code is not None:
        d["code"] = out.code
    return d
