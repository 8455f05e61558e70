"""Command-line entry point: ``pwenv trace | optimize | secure | controlplane-demo``."""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .em import FLOOR_DBM, antenna_from_dict
from .errors import NoLosTilesError, NoPathError, PwenvError, ScenarioError
from .optimizer import (GaParams, Genome, GridSpec, Objective, ObjectiveKind, evaluate_full, heatmap, heatmap_rows,
                        run_ga, tile_state_for)
from .raytracer import Receiver, Transmitter, paths_table, pdp_at, receiver_metrics, trace
from .scenario import PRESETS, Scenario, dumps, load, preset
from .security import build_tile_graph, deploy_secure_route, k_disjoint_paths, phase_mode


def _power(x: float) -> str:
    return f"{max(float(x), FLOOR_DBM):.2f}"


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _scenario(path: Optional[str], preset_name: Optional[str]) -> Scenario:
    if path and preset_name:
        _fail("give --scenario or --preset, not both")
    try:
        if path:
            return load(path)
        return preset(preset_name or "corridor-60ghz")
    except ScenarioError as exc:
        where = f"{path}: " if path else ""
        _fail(f"{where}{exc}")
    except OSError as exc:
        _fail(str(exc))


def _params(sc: Scenario, res: Optional[float]):
    return sc.trace_params if res is None else sc.trace_params.evolve(angular_resolution_deg=res)


def _read_genome(path: str, n_tiles: int) -> Genome:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"{path}: {exc}")
    genes = data.get("genome", data.get("genes")) if isinstance(data, dict) else data
    try:
        g = Genome(genes)
        g.validate(n_tiles)
    except (TypeError, ValueError) as exc:
        _fail(f"{path}: {exc}")
    return g


def _power_rows(scene, powers, spreads) -> list:
    rows = []
    for rx, p, s in zip(scene.receivers, powers, spreads):
        x, y, z = rx.position
        rows.append([rx.name, f"{x:.3f}", f"{y:.3f}", f"{z:.3f}", _power(p), f"{s * 1e9:.4f}",
                     "true" if p <= FLOOR_DBM else "false"])
    return rows


POWER_HEADER = ["rx_id", "x", "y", "z", "power_dbm", "delay_spread_ns", "disconnected"]


@click.group()
def main():
    """Programmable wireless environment simulator."""


_common = [
    click.option("--scenario", "scenario_path", type=click.Path(dir_okay=False), help="Scenario JSON file."),
    click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), help="Built-in scenario."),
    click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True),
    click.option("--seed", type=int, default=None, help="Overrides the scenario seed."),
    click.option("--angular-res-deg", "res", type=float, default=None, help="Ray launch spacing in degrees."),
]


def common(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@main.command("trace")
@common
@click.option("--genome", "genome_path", type=click.Path(dir_okay=False), help="Genome JSON (tile config indices).")
def cmd_trace(scenario_path, preset_name, out_dir, seed, res, genome_path):
    """Trace a scenario and write paths.csv, powers.csv and pdp.csv."""
    sc = _scenario(scenario_path, preset_name)
    params = _params(sc, res)
    scene = sc.scene
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if genome_path:
        state = tile_state_for(scene.plan, _read_genome(genome_path, len(scene.plan.tiles)))
    result = trace(scene, params=params, tile_state=state)
    powers, spreads = receiver_metrics(scene, result)
    rows = [[r["rx_id"], _power(r["power_dbm"]), f"{r['delay_ns']:.4f}", f"{r['phase_rad']:.6f}", r["n_bounces"],
             r["bounce_tiles"]] for r in paths_table(scene, result)]
    _write_csv(out / "paths.csv", ["rx_id", "power_dbm", "delay_ns", "phase_rad", "n_bounces", "bounce_tiles"], rows)
    _write_csv(out / "powers.csv", POWER_HEADER, _power_rows(scene, powers, spreads))
    pdp_rows = []
    for j, rx in enumerate(scene.receivers):
        prof = pdp_at(rx, result.paths, rx_index=j)
        for k in range(len(prof.delay_s)):
            pdp_rows.append([rx.name, k, f"{prof.delay_s[k] * 1e9:.4f}", _power(prof.power_dbm[k]),
                             f"{prof.phase_rad[k]:.6f}"])
    _write_csv(out / "pdp.csv", ["rx_id", "bin", "delay_ns", "power_dbm", "phase_rad"], pdp_rows)
    n_disc = int(np.sum(powers <= FLOOR_DBM))
    click.echo(f"{len(result.paths)} paths, {len(scene.receivers)} receivers, {n_disc} disconnected -> {out}")


def _heatmap_grid(scene, step: float) -> Optional[GridSpec]:
    if not scene.receivers:
        return None
    pos = np.array([r.position for r in scene.receivers])
    (lx, ly, _), lo = scene.plan.bounds[1], pos.min(axis=0) - 0.5
    hi = pos.max(axis=0) + 0.5
    x0, y0 = max(lo[0], step / 2), max(lo[1], step / 2)
    x1, y1 = min(hi[0], lx - step / 2), min(hi[1], ly - step / 2)
    nx = int(math.floor((x1 - x0) / step + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / step + 1e-9)) + 1
    return GridSpec((x0, x0 + (nx - 1) * step), (y0, y0 + (ny - 1) * step), nx, ny, float(pos[0, 2]))


@main.command("optimize")
@common
@click.option("--objective", type=click.Choice(["case-a", "case-b", "multiuser"]), default=None)
@click.option("--threshold-dbm", type=float, default=None, help="Case B minimum receiver power.")
@click.option("--ga-pop", type=int, default=32, show_default=True)
@click.option("--ga-gens", type=int, default=60, show_default=True)
@click.option("--heatmap-step", type=float, default=0.5, show_default=True, help="0 disables the heatmap.")
def cmd_optimize(scenario_path, preset_name, out_dir, seed, res, objective, threshold_dbm, ga_pop, ga_gens,
                 heatmap_step):
    """Run the genetic tile optimizer; write best.json, history.csv and heatmap.csv."""
    sc = _scenario(scenario_path, preset_name)
    params = _params(sc, res)
    scene = sc.scene
    base = sc.objective or Objective()
    kind = ObjectiveKind(objective) if objective else base.kind
    threshold = threshold_dbm if threshold_dbm is not None else base.power_threshold_dbm
    weights = base.weights
    if kind is ObjectiveKind.MULTIUSER_WEIGHTED_POWER and weights is None:
        weights = tuple([1.0] * len(scene.receivers))
    try:
        obj = Objective(kind, threshold, weights, base.penalty_weight, base.power_split, base.tile_allocation,
                        base.tile_budget)
        ga = GaParams(population_size=ga_pop, generations=ga_gens, rng_seed=sc.seed if seed is None else seed)
    except ValueError as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(scene.plan.tiles)
    plain = evaluate_full(Genome.specular(n), scene, obj, params)
    res_ga = run_ga(scene, obj, ga, params)
    best = res_ga.best_evaluation

    def summary(ev):
        return {"fitness": round(ev.fitness, 6), "feasible": ev.feasible,
                "powers_dbm": [round(max(float(p), FLOOR_DBM), 2) for p in ev.powers_dbm],
                "min_power_dbm": round(max(float(ev.powers_dbm.min()), FLOOR_DBM), 2),
                "max_delay_spread_ns": round(float(ev.delay_spreads_s.max()) * 1e9, 4)}

    _write_json(out / "best.json", {
        "scenario": sc.name, "objective": kind.value, "threshold_dbm": threshold, "seed": ga.rng_seed,
        "population": ga_pop, "generations": ga_gens, "angular_resolution_deg": params.angular_resolution_deg,
        "genome": list(res_ga.best_genome), "status": "INFEASIBLE" if res_ga.infeasible else "OK",
        "best": summary(best), "plain": summary(plain),
    })
    _write_csv(out / "history.csv", ["generation", "best_fitness"],
               [[g, f"{f:.6f}"] for g, f in enumerate(res_ga.history)])
    if heatmap_step > 0:
        grid = _heatmap_grid(scene, heatmap_step)
        if grid is not None:
            hm = heatmap(scene, res_ga.best_genome, grid, params)
            _write_csv(out / "heatmap.csv", ["x", "y", "power_dbm"],
                       [[f"{r['x']:.3f}", f"{r['y']:.3f}", _power(r["power_dbm"])] for r in heatmap_rows(hm)])
    flag = " INFEASIBLE" if res_ga.infeasible else ""
    click.echo(f"best fitness {res_ga.best_fitness:.4f} (plain {plain.fitness:.4f}){flag} -> {out}")


def _hsf_devices(sc: Scenario, scene):
    sec = sc.security or {}
    tx = scene.tx
    if "hsf_tx_antenna" in sec:
        tx = Transmitter(tx.position, antenna_from_dict(sec["hsf_tx_antenna"]), tx.power_dbm, tx.name)
    rxs = list(scene.receivers)
    ri = scene.receiver_index(sec["intended_rx"])
    if "hsf_rx_antenna" in sec:
        r = rxs[ri]
        rxs[ri] = Receiver(r.position, antenna_from_dict(sec["hsf_rx_antenna"]), r.capture_radius, r.name)
    return scene.evolve(tx=tx, receivers=tuple(rxs))


@main.command("secure")
@common
@click.option("--mode", type=click.Choice(["route", "phase"]), default="route", show_default=True)
@click.option("--k", "k", type=int, default=1, show_default=True, help="Number of tile-disjoint routes.")
def cmd_secure(scenario_path, preset_name, out_dir, seed, res, mode, k):
    """Protect the intended link from the eavesdropper; write plan.json and results.csv."""
    sc = _scenario(scenario_path, preset_name or ("security" if not scenario_path else None))
    if not sc.security:
        _fail("scenario has no security section")
    if k < 1:
        _fail("--k must be at least 1")
    params = _params(sc, res)
    scene = sc.scene
    sec = sc.security
    try:
        ri = scene.receiver_index(sec["intended_rx"])
        eves = [scene.receiver_index(e) for e in sec["eavesdroppers"]]
    except KeyError as exc:
        _fail(f"security section names unknown receiver {exc}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plain = trace(scene, params=params)
    plain_p, _ = receiver_metrics(scene, plain)
    rows = []
    if mode == "route":
        hsf = _hsf_devices(sc, scene)
        graph = None
        try:
            graph = build_tile_graph(hsf, rx_index=ri)
            routes = k_disjoint_paths(graph, k)
        except (NoLosTilesError, NoPathError) as exc:
            edges = len(graph.edges()) if graph is not None else 0
            _fail(f"{exc.code}: {exc} (tiles={len(scene.plan.tiles)}, graph edges={edges})", code=1)
        if len(routes) < k:
            click.echo(f"warning: only {len(routes)} tile-disjoint routes exist (asked for {k})", err=True)
        deployed = deploy_secure_route(hsf, routes, rx_index=ri, tile_budget=sec.get("tile_budget"))
        result = trace(deployed, params=params)
        hsf_p, _ = receiver_metrics(deployed, result)
        ids = [scene.plan.tiles[t].id for t in range(len(scene.plan.tiles))]
        z_min = min((float(p.bounce_points[:, 2].min()) for p in result.paths if p.n_bounces), default=None)
        _write_json(out / "plan.json", {
            "mode": "route", "k_requested": k, "k_found": len(routes),
            "routes": [[list(ids[t]) for t in r] for r in routes],
            "collimating": [list(ids[r[0]]) for r in routes],
            "min_bounce_height_m": None if z_min is None else round(z_min, 6),
        })
        for j, rx in enumerate(scene.receivers):
            role = "intended" if j == ri else ("eavesdropper" if j in eves else "other")
            for setup, p in (("plain", plain_p[j]), ("hsf", hsf_p[j])):
                rows.append([rx.name, role, setup, _power(p), "true" if p <= FLOOR_DBM else "false"])
    else:
        constraint = sec.get("phase_constraint")
        eve = eves[0]
        try:
            res_ph = phase_mode(scene, params, rx_index=ri, eve_index=eve, constraint=constraint)
        except PwenvError as exc:
            _fail(f"{exc.code}: {exc}", code=1)
        plan = res_ph.plan
        _write_json(out / "plan.json", {
            "mode": "phase", "controlled_paths": len(plan.path_ids), "flagged": plan.flagged,
            "offsets_rad": [[int(i), round(float(d), 6)] for i, d in zip(plan.path_ids, plan.eve_offsets)],
            "eve_attenuation_db": round(plan.eve_attenuation_db, 4),
            "rx_loss_from_aligned_db": round(plan.rx_loss_db, 4),
        })
        for name, before, after, role in (
                (scene.receivers[ri].name, plan.rx_before_dbm, plan.rx_after_dbm, "intended"),
                (scene.receivers[eve].name, plan.eve_before_dbm, plan.eve_after_dbm, "eavesdropper")):
            for setup, p in (("plain", before), ("phase", after)):
                rows.append([name, role, setup, _power(p), "true" if p <= FLOOR_DBM else "false"])
        for fname, prof in (("pdp_eve.csv", res_ph.pdp_eve), ("pdp_rx.csv", res_ph.pdp_rx)):
            _write_csv(out / fname, ["path_id", "delay_ns", "power_dbm", "phase_rad"],
                       [[int(i), f"{d * 1e9:.4f}", _power(p), f"{ph:.6f}"]
                        for i, d, p, ph in zip(prof.path_ids, prof.delay_s, prof.power_dbm, prof.phase_rad)])
    _write_csv(out / "results.csv", ["user", "role", "setup", "power_dbm", "disconnected"], rows)
    click.echo(f"{mode} mode -> {out}")


@main.command("controlplane-demo")
@common
@click.option("--callbacks", "callbacks_path", type=click.Path(dir_okay=False), help="JSON array of callbacks.")
@click.option("--fault", "faults", multiple=True, help="Faulty gateway as ROW,COL (repeatable).")
@click.option("--entry", "entries", multiple=True, help="Entry-point gateway as ROW,COL (repeatable).")
@click.option("--controller-grid", is_flag=True, help="Drive switches through the intra-tile controller grid.")
def cmd_controlplane(scenario_path, preset_name, out_dir, seed, res, callbacks_path, faults, entries,
                     controller_grid):
    """Dispatch callbacks over the tile gateway network; write outcomes.json."""
    from .controlplane import Callback, TileNetwork, callback_from_dict, outcome_to_dict
    from .tiles import ActionType, enumerate_repertoire

    sc = _scenario(scenario_path, preset_name)
    plan = sc.scene.plan

    def addr(text):
        try:
            r, c = (int(x) for x in text.split(","))
        except ValueError:
            _fail(f"bad gateway address {text!r}; expected ROW,COL")
        return (r, c)

    try:
        net = TileNetwork.for_plan(plan, [addr(e) for e in entries] or [(0, 0)], controller_grid=controller_grid)
    except ValueError as exc:
        _fail(str(exc))
    for f in faults:
        a = addr(f)
        if a not in net.nodes:
            _fail(f"no gateway at {a}")
        net.inject_fault(a)
    if callbacks_path:
        try:
            with open(callbacks_path, encoding="utf-8") as fh:
                raw = json.load(fh)
            cbs = [callback_from_dict(d, i) for i, d in enumerate(raw)]
        except json.JSONDecodeError as exc:
            _fail(f"{callbacks_path}: line {exc.lineno}: {exc.msg}")
        except (OSError, KeyError, ValueError, TypeError) as exc:
            _fail(f"{callbacks_path}: {exc}")
    else:
        rng = np.random.default_rng(sc.seed if seed is None else seed)
        rep = enumerate_repertoire()
        cbs = []
        for i, t in enumerate(plan.tiles):
            fn = rep[int(rng.integers(0, len(rep)))]
            cbs.append(Callback(t.id, fn.action_type, fn, f"cb{i}"))
    outcomes = [outcome_to_dict(cb, net.dispatch(cb)) for cb in cbs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "outcomes.json", {"faults_detected": sorted(list(a) for a in net.detect_faults()),
                                        "outcomes": outcomes})
    acks = sum(o["status"] == "ACK" for o in outcomes)
    click.echo(f"{acks}/{len(outcomes)} callbacks acknowledged -> {out}")


@main.command("dump-preset")
@click.argument("name", type=click.Choice(sorted(PRESETS)))
def cmd_dump_preset(name):
    """Print a built-in scenario as JSON (a starting point for custom files)."""
    click.echo(dumps(PRESETS[name]()), nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
