import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwenv.em import FLOOR_DBM, AntennaKind, antenna_from_dict, antenna_gain
from pwenv.errors import NoCommonPathsError, NoLosTilesError, NoPathError
from pwenv.geometry import build_box_floorplan, virtual_normal
from pwenv.raytracer import PowerDelayProfile, Receiver, Scene, Transmitter, receiver_metrics, trace
from pwenv.security import (PHASE_STEP, RX, TX, SecurityObjective, TileGraph, build_tile_graph,
                            deploy_secure_route, k_disjoint_paths, matched_profiles, phase_cancel, phase_mode,
                            profile_phasors)
from conftest import tile_wall_plan

F = 2.4e9


def hsf_scene(sc):
    sec = sc.security
    scene = sc.scene
    tx = scene.tx
    tx = Transmitter(tx.position, antenna_from_dict(sec["hsf_tx_antenna"]), tx.power_dbm, tx.name)
    rxs = list(scene.receivers)
    r = rxs[0]
    rxs[0] = Receiver(r.position, antenna_from_dict(sec["hsf_rx_antenna"]), r.capture_radius, r.name)
    return scene.evolve(tx=tx, receivers=tuple(rxs))


# --- visibility graph ---------------------------------------------------------


def _blocked(a, b, plan, skip=(), owner=None):
    """Scalar segment test, one primitive at a time."""
    d = b - a
    length = float(np.linalg.norm(d))
    d = d / length
    for k, s in enumerate(plan.surfaces):
        if k in skip:
            continue
        n = s.geometric_normal
        den = float(d @ n)
        if abs(den) < 1e-12:
            continue
        t = float((s.origin - a) @ n) / den
        if not 1e-6 < t < length - 1e-6:
            continue
        rel = a + t * d - s.origin
        u = rel @ s.edge_u / (s.edge_u @ s.edge_u)
        v = rel @ s.edge_v / (s.edge_v @ s.edge_v)
        if 1e-6 < u < 1 - 1e-6 and 1e-6 < v < 1 - 1e-6:
            return True
    for body in plan.bodies:
        if body.transparent or body.owner == owner:
            continue
        t = body.intersect(a, d)
        if t is not None and t < length:
            return True
    return False


def test_tile_graph_matches_scalar_visibility(security):
    scene = hsf_scene(security)
    plan = scene.plan
    g = build_tile_graph(scene)
    tiles = plan.tiles
    rng = np.random.default_rng(3)
    pairs = rng.choice(len(tiles), size=(600, 2))
    checked = 0
    for i, j in pairs:
        if i == j:
            continue
        a, b = tiles[i], tiles[j]
        d = b.center - a.center
        want = (a.geometric_normal @ d > 1e-9 and b.geometric_normal @ -d > 1e-9
                and not _blocked(a.center, b.center, plan, skip=(a.host, b.host)))
        assert g.has_edge(int(i), int(j)) == want, (i, j)
        checked += want
    assert checked > 10
    for term, dev in ((TX, scene.tx), (RX, scene.receivers[0])):
        for i, t in enumerate(tiles):
            d = t.center - dev.position
            want = (t.geometric_normal @ -d > 1e-9 and antenna_gain(dev.antenna, d / np.linalg.norm(d)) > 0
                    and not _blocked(dev.position, t.center, plan, skip=(t.host,), owner=dev.name))
            assert g.has_edge(term, i) == want
    # edge weights are centre distances
    for a, b, w in g.edges()[:50]:
        assert w == pytest.approx(float(np.linalg.norm(g.positions[a] - g.positions[b])))


def test_partition_blocks_cross_room_edges(security):
    g = build_tile_graph(hsf_scene(security))
    tiles = security.scene.plan.tiles
    # tiles on the two x-facing faces of the partition never see each other
    west = [i for i, t in enumerate(tiles) if abs(t.center[0] - 9.75) < 1e-9]
    east = [i for i, t in enumerate(tiles) if abs(t.center[0] - 10.25) < 1e-9]
    assert west and east
    assert not any(g.has_edge(a, b) for a in west for b in east)


def test_no_visible_tiles():
    plan = tile_wall_plan(1)
    # transmitter behind the wall
    scene = Scene(plan, Transmitter((12.0, 5.0, 5.0)), [Receiver((6.0, 5.0, 5.0))])
    with pytest.raises(NoLosTilesError):
        build_tile_graph(scene)
    with pytest.raises(NoLosTilesError):
        build_tile_graph(Scene(build_box_floorplan((4, 4, 3)), Transmitter((1, 1, 1)), [Receiver((2, 2, 1))]))


# --- disjoint routes ----------------------------------------------------------


def grid_graph(rows, cols, extra=()):
    pos = {TX: np.array([-1.0, 0.5 * (rows - 1), 0.0]), RX: np.array([float(cols), 0.5 * (rows - 1), 0.0])}
    node = {}
    for r in range(rows):
        for c in range(cols):
            node[r, c] = len(node)
            pos[node[r, c]] = np.array([float(c), float(r), 0.0])
    g = TileGraph(pos)

    def link(a, b):
        g.add_edge(a, b, float(np.linalg.norm(pos[a] - pos[b])))

    for (r, c), i in node.items():
        if c + 1 < cols:
            link(i, node[r, c + 1])
        if r + 1 < rows:
            link(i, node[r + 1, c])
    for r in range(rows):
        link(TX, node[r, 0])
        link(RX, node[r, cols - 1])
    for a, b in extra:
        link(a, b)
    return g


def nx_min_cost(graph, flow, scale=10**6):
    """Min-cost flow of ``flow`` units on the node-split graph, integer weights."""
    d = nx.DiGraph()
    for v in graph.nodes:
        d.add_edge((v, "in"), (v, "out"), capacity=flow if v in (TX, RX) else 1, weight=0)
    for a, b, w in graph.edges():
        for u, v in ((a, b), (b, a)):
            if v == TX or u == RX:
                continue
            d.add_edge((u, "out"), (v, "in"), capacity=1, weight=round(w * scale))
    d.nodes[(TX, "out")]["demand"] = -flow
    d.nodes[(RX, "in")]["demand"] = flow
    return nx.min_cost_flow_cost(d) / scale, nx.maximum_flow_value(d, (TX, "out"), (RX, "in"))


def route_cost(graph, route):
    nodes = [TX] + list(route) + [RX]
    return sum(graph.neighbors(a)[b] for a, b in zip(nodes, nodes[1:]))


def check_disjoint(graph, routes):
    seen = set()
    for r in routes:
        nodes = [TX] + list(r) + [RX]
        assert all(graph.has_edge(a, b) for a, b in zip(nodes, nodes[1:]))
        assert not seen & set(r)
        seen |= set(r)


def test_grid_routes():
    g = grid_graph(3, 3)
    for k in (1, 2, 3):
        routes = k_disjoint_paths(g, k)
        assert len(routes) == k
        check_disjoint(g, routes)
        assert sum(route_cost(g, r) for r in routes) == pytest.approx(nx_min_cost(g, k)[0], abs=1e-5)
    # only three disjoint routes exist
    assert len(k_disjoint_paths(g, 5)) == 3


def test_chain_has_single_route():
    pos = {TX: np.zeros(3), RX: np.array([5.0, 0, 0])}
    pos.update({i: np.array([i + 1.0, 0, 0]) for i in range(4)})
    g = TileGraph(pos)
    for a, b in zip([TX, 0, 1, 2, 3], [0, 1, 2, 3, RX]):
        g.add_edge(a, b, 1.0)
    assert k_disjoint_paths(g, 2) == [[0, 1, 2, 3]]


def test_single_route_is_shortest_path():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_graph(rng, 14, 0.3)
        try:
            routes = k_disjoint_paths(g, 1)
        except NoPathError:
            assert not nx.has_path(as_nx(g), TX, RX)
            continue
        want = nx.dijkstra_path_length(as_nx(g), TX, RX)
        assert route_cost(g, routes[0]) == pytest.approx(want)


def as_nx(graph):
    h = nx.Graph()
    h.add_nodes_from(graph.nodes)
    h.add_weighted_edges_from(graph.edges())
    return h


def random_graph(rng, n, p):
    pos = {TX: rng.uniform(0, 10, 3), RX: rng.uniform(0, 10, 3)}
    pos.update({i: rng.uniform(0, 10, 3) for i in range(n)})
    g = TileGraph(pos)
    nodes = list(pos)
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if {a, b} != {TX, RX} and rng.random() < p:
                g.add_edge(a, b, float(np.linalg.norm(pos[a] - pos[b])))
    return g


def test_routes_match_min_cost_flow_oracle():
    rng = np.random.default_rng(5)
    for _ in range(25):
        g = random_graph(rng, 16, 0.25)
        k = int(rng.integers(1, 5))
        try:
            routes = k_disjoint_paths(g, k)
        except NoPathError:
            assert nx_min_cost(g, 0)[1] == 0
            continue
        check_disjoint(g, routes)
        cost, maxflow = nx_min_cost(g, len(routes))
        assert len(routes) == min(k, maxflow)
        assert sum(route_cost(g, r) for r in routes) == pytest.approx(cost, abs=1e-4)


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        k_disjoint_paths(grid_graph(2, 2), 0)


# --- deployment ---------------------------------------------------------------


def test_one_hop_deployment():
    plan = tile_wall_plan(1)
    tx, rx = np.array([6.0, 3.0, 5.0]), np.array([7.0, 7.0, 4.0])
    scene = Scene(plan, Transmitter(tx, power_dbm=0.0), [Receiver(rx)])
    out = deploy_secure_route(scene, [[0]])
    tile = out.plan.tiles[0]
    c = tile.center
    want = virtual_normal((c - tx) / np.linalg.norm(c - tx), (rx - c) / np.linalg.norm(rx - c))
    np.testing.assert_allclose(tile.virtual_normal, want, atol=1e-12)
    assert tile.collimating
    beam = out.tx.antenna
    assert beam.kind is AntennaKind.SINGLE_LOBE_SINUSOID and beam.cutoff_deg > 0
    assert antenna_gain(beam, (c - tx) / np.linalg.norm(c - tx)) == pytest.approx(1.0)
    # the single route reaches the receiver through the tile
    res = trace(out)
    assert res.paths and all(p.bounce_tiles == (tile.id,) for p in res.paths)
    # a budget too small for the route drops it
    dropped = deploy_secure_route(scene, [[0]], tile_budget=0)
    assert not dropped.plan.tiles[0].collimating
    plain = deploy_secure_route(scene, [[0]], beamform=False)
    assert plain.tx.antenna.kind is AntennaKind.ISOTROPIC


def test_objective_validation():
    SecurityObjective(tile_budget=10, phase_constraint=math.pi / 2)
    with pytest.raises(ValueError):
        SecurityObjective(tile_budget=0)
    with pytest.raises(ValueError):
        SecurityObjective(phase_constraint=4.0)


def test_secure_route_on_preset(security):
    scene = hsf_scene(security)
    routes = k_disjoint_paths(build_tile_graph(scene), 1)
    deployed = deploy_secure_route(scene, routes, tile_budget=20)
    res = trace(deployed, params=security.trace_params)
    plain, _ = receiver_metrics(scene, trace(scene, params=security.trace_params))
    hsf, _ = receiver_metrics(deployed, res)
    assert hsf[1] == FLOOR_DBM  # eavesdropper sees nothing
    assert hsf[0] > FLOOR_DBM
    used = {scene.plan.tiles[t].id for r in routes for t in r}
    assert len(used) <= 20
    for p in res.paths:
        assert {t for t in p.bounce_tiles if t is not None} <= used
        if p.n_bounces:
            assert p.bounce_points[:, 2].min() >= 1.5 - 1e-9
    assert plain[0] < hsf[0]


# --- phase cancellation -------------------------------------------------------


def pdp(power_dbm, phase, ids=None):
    """Profile whose carrier phases sit in the delays (2 pi f tau = phase)."""
    power_dbm = np.asarray(power_dbm, dtype=float)
    n = len(power_dbm)
    delay = np.asarray(phase, dtype=float) / (2 * math.pi * F) + np.arange(n) * 10 / F
    return PowerDelayProfile(delay, power_dbm, np.zeros(n), np.arange(n) if ids is None else np.asarray(ids))


def rx_pruned_oracle(ze, zr, tol_db=0.5, step=PHASE_STEP):
    """Every grid assignment with path 0 fixed, dropping prefixes that cannot meet the rx bound."""
    rot = np.exp(-1j * np.arange(int(round(2 * math.pi / step))) * step)
    need = np.abs(zr).sum() * 10 ** (-tol_db / 20)
    order = np.argsort(-np.abs(zr), kind="stable")
    ze, zr = ze[order], zr[order]
    rest = np.concatenate([np.cumsum(np.abs(zr)[::-1])[::-1][1:], [0.0]])
    e, r = np.array([ze[0]]), np.array([zr[0]])
    for i in range(1, len(ze)):
        e = (e[:, None] + ze[i] * rot).ravel()
        r = (r[:, None] + zr[i] * rot).ravel()
        keep = np.abs(r) + rest[i] >= need - 1e-12
        e, r = e[keep], r[keep]
    return float(np.min(np.abs(e) ** 2))


def to_dbm(lin):
    return 10 * math.log10(lin) if lin > 1e-25 else FLOOR_DBM


def test_antiphase_pair_cancels():
    eve = pdp([-60, -60], [0.3, 0.3])
    rx = pdp([-70, -70], [1.0, 1.0 + math.pi])
    plan = phase_cancel(eve, rx, F)
    assert plan.eve_after_dbm == FLOOR_DBM
    assert plan.rx_after_dbm == pytest.approx(plan.rx_aligned_dbm)
    assert not plan.flagged
    # rows compensated after the eavesdropper leave the rx resultant aligned whatever the offsets
    plan = phase_cancel(eve, pdp([-70, -70], [0.2, 2.0]), F, compensated=[True, True])
    assert plan.eve_after_dbm == FLOOR_DBM
    assert plan.rx_loss_db == pytest.approx(0.0, abs=1e-9)


def test_single_path_is_flagged():
    plan = phase_cancel(pdp([-60], [0.0]), pdp([-70], [1.0]), F)
    assert plan.flagged
    assert plan.eve_after_dbm == pytest.approx(plan.eve_before_dbm)


def test_no_common_paths():
    with pytest.raises(NoCommonPathsError):
        phase_cancel(pdp([-60, -61], [0, 1], ids=[0, 1]), pdp([-60], [0], ids=[5]), F)


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        phase_cancel(pdp([-60, -61], [0, 1], ids=[0, 0]), pdp([-60], [0], ids=[0]), F)


def test_bounded_offsets():
    rng = np.random.default_rng(2)
    eve = pdp(rng.uniform(-90, -70, 6), rng.uniform(0, 2 * math.pi, 6))
    rx = pdp(rng.uniform(-90, -70, 6), rng.uniform(0, 2 * math.pi, 6))
    counts = [1, 2, 1, 3, 1, 2]
    c = math.pi / 2
    plan = phase_cancel(eve, rx, F, constraint=c, bounce_counts=counts)
    assert np.all(plan.eve_offsets >= 0)
    assert np.all(plan.eve_offsets <= c * np.array(counts) + 1e-12)
    steps = plan.eve_offsets / PHASE_STEP
    np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)
    if not plan.flagged:
        assert plan.rx_loss_db <= 0.5 + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_grid_search_matches_pruned_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 7
    eve = pdp(rng.uniform(-95, -75, n), rng.uniform(0, 2 * math.pi, n))
    rx = pdp(rng.uniform(-80, -74, n), rng.uniform(0, 2 * math.pi, n))
    plan = phase_cancel(eve, rx, F)
    want = to_dbm(rx_pruned_oracle(profile_phasors(eve, F), profile_phasors(rx, F)))
    assert plan.eve_after_dbm == pytest.approx(want, abs=0.1)
    assert plan.rx_loss_db <= 0.5 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, -60), st.floats(-100, -60), st.floats(0, 6.28), st.floats(0, 6.28)),
                min_size=2, max_size=5))
def test_rx_stays_within_half_db(rows):
    e_db, r_db, e_ph, r_ph = map(list, zip(*rows))
    plan = phase_cancel(pdp(e_db, e_ph), pdp(r_db, r_ph), F)
    assert plan.rx_loss_db <= 0.5 + 1e-9
    # the reported powers are those of the returned offsets
    z = profile_phasors(pdp(e_db, e_ph), F) * np.exp(-1j * plan.eve_offsets)
    assert plan.eve_after_dbm == pytest.approx(to_dbm(abs(z.sum()) ** 2), abs=1e-6)


def test_matched_profiles_and_phase_mode(security):
    params = security.trace_params
    scene = security.scene
    res = trace(scene, params=params)
    ev, rx, comp = matched_profiles(scene, res, 0, 1, params.carrier_freq)
    assert len(comp) == len(rx.path_ids)
    shared = set(ev.path_ids.tolist()) & set(rx.path_ids.tolist())
    assert shared
    assert len(set(rx.path_ids.tolist())) == len(rx.path_ids)
    out = phase_mode(scene, params)
    assert out.plan.eve_attenuation_db >= 5.0
    assert out.plan.rx_loss_db <= 0.5 + 1e-9
