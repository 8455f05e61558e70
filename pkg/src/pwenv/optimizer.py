"""Genetic search over per-tile configuration genomes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .em import FLOOR_DBM
from .geometry import Floorplan, steer_normal_from_angles
from .raytracer import Receiver, Scene, TileState, TraceParams, receiver_metrics, trace
from .tiles import ABSORB_INDEX, SPECULAR_INDEX, enumerate_repertoire

REPERTOIRE_SIZE = 26


class Genome(tuple):
    """Immutable vector of repertoire indices, one per tile."""

    def __new__(cls, genes):
        return super().__new__(cls, (int(g) for g in genes))

    @classmethod
    def specular(cls, n_tiles: int) -> "Genome":
        return cls([SPECULAR_INDEX] * n_tiles)

    def validate(self, n_tiles: int) -> None:
        if len(self) != n_tiles:
            raise ValueError(f"genome has {len(self)} genes for {n_tiles} tiles")
        for g in self:
            if not 0 <= g < REPERTOIRE_SIZE:
                raise ValueError(f"gene {g} outside the repertoire")

    def functions(self) -> list:
        rep = enumerate_repertoire()
        return [rep[g] for g in self]


@dataclass(frozen=True)
class GaParams:
    population_size: int = 32
    generations: int = 60
    tournament_k: int = 3
    crossover_rate: float = 0.9
    mutation_rate_per_gene: Optional[float] = None  # default 1 / n_tiles
    rng_seed: int = 0
    elitism_count: int = 2

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 0 or self.tournament_k < 1:
            raise ValueError("generations must be >= 0 and tournament_k >= 1")
        for r in (self.crossover_rate, self.mutation_rate_per_gene):
            if r is not None and not 0.0 <= r <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if not 0 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must fit in the population")
        if self.rng_seed is None:
            raise ValueError("a seed is mandatory")


class ObjectiveKind(enum.Enum):
    CASE_A_MAXMIN_POWER = "case-a"
    CASE_B_MINMAX_DELAY_SPREAD = "case-b"
    MULTIUSER_WEIGHTED_POWER = "multiuser"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind = ObjectiveKind.CASE_A_MAXMIN_POWER
    power_threshold_dbm: Optional[float] = None
    weights: Optional[tuple] = None  # d_j, one per receiver
    penalty_weight: float = 10.0  # ns per dB of violation
    power_split: Optional[tuple] = None  # fraction of transmit power per receiver
    tile_allocation: Optional[tuple] = None  # tile indices per receiver
    tile_budget: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if self.kind is ObjectiveKind.CASE_B_MINMAX_DELAY_SPREAD and self.power_threshold_dbm is None:
            raise ValueError("case B needs power_threshold_dbm")
        if self.kind is ObjectiveKind.MULTIUSER_WEIGHTED_POWER and self.weights is None:
            raise ValueError("the multi-user objective needs weights")


class Evaluation(NamedTuple):
    fitness: float
    powers_dbm: np.ndarray
    delay_spreads_s: np.ndarray
    feasible: bool


def project_power_split(split, n: int) -> np.ndarray:
    """Clip negative shares and rescale so the shares sum to at most one."""
    p = np.full(n, 1.0 / n) if split is None else np.maximum(np.asarray(split, dtype=float), 0.0)
    s = p.sum()
    if s > 1.0:
        p = p / s
    return p


def allowed_mask(objective: Objective, n_tiles: int) -> Optional[np.ndarray]:
    """Tiles the optimizer may reconfigure, or ``None`` for all.

    Under the multi-user objective only allocated tiles are free; an
    allocation is made disjoint (first owner wins) and truncated to the tile
    budget in user order.
    """
    if objective.kind is not ObjectiveKind.MULTIUSER_WEIGHTED_POWER or objective.tile_allocation is None:
        return None
    budget = n_tiles if objective.tile_budget is None else objective.tile_budget
    mask = np.zeros(n_tiles, dtype=bool)
    used = 0
    for group in objective.tile_allocation:
        for t in group:
            if used >= budget:
                return mask
            if 0 <= t < n_tiles and not mask[t]:
                mask[t] = True
                used += 1
    return mask


class GenomeDecoder:
    """Turns genomes into tracer tile states using a precomputed normal table."""

    def __init__(self, plan: Floorplan):
        rep = enumerate_repertoire()
        self.n_tiles = len(plan.tiles)
        table = np.zeros((self.n_tiles, REPERTOIRE_SIZE, 3))
        for i, tile in enumerate(plan.tiles):
            for g, fn in enumerate(rep):
                if g == ABSORB_INDEX:
                    table[i, g] = tile.geometric_normal
                else:
                    table[i, g] = steer_normal_from_angles(tile, *fn.normal_angles)
        self.table = table

    def state(self, genome: Sequence[int]) -> TileState:
        g = np.asarray(genome, dtype=np.int64)
        normals = self.table[np.arange(self.n_tiles), g]
        return TileState(normals, g == ABSORB_INDEX, np.zeros(self.n_tiles, bool), np.zeros(self.n_tiles))


def _decoder(plan: Floorplan) -> GenomeDecoder:
    dec = plan.__dict__.get("_genome_decoder")
    if dec is None:
        dec = GenomeDecoder(plan)
        plan.__dict__["_genome_decoder"] = dec
    return dec


def tile_state_for(plan: Floorplan, genome: Sequence[int]) -> TileState:
    """Tracer tile state for ``genome`` on ``plan``."""
    return _decoder(plan).state(genome)


def evaluate_full(genome: Sequence[int], scene: Scene, objective: Objective,
                  trace_params: TraceParams = TraceParams()) -> Evaluation:
    n = len(scene.plan.tiles)
    Genome(genome).validate(n)
    mask = allowed_mask(objective, n)
    if mask is not None:
        genome = np.where(mask, np.asarray(genome), SPECULAR_INDEX)
    result = trace(scene, params=trace_params, tile_state=_decoder(scene.plan).state(genome))
    powers, spreads = receiver_metrics(scene, result)
    kind = objective.kind
    feasible = True
    if kind is ObjectiveKind.CASE_A_MAXMIN_POWER:
        fitness = float(powers.min()) if powers.size else FLOOR_DBM
    elif kind is ObjectiveKind.CASE_B_MINMAX_DELAY_SPREAD:
        deficit = np.maximum(0.0, objective.power_threshold_dbm - powers)
        feasible = bool(np.all(deficit == 0))
        fitness = -float(spreads.max() * 1e9) - objective.penalty_weight * float(deficit.sum())
    else:
        w = np.asarray(objective.weights, dtype=float)
        if w.size != powers.size:
            raise ValueError("one weight per receiver is required")
        split = project_power_split(objective.power_split, powers.size)
        with np.errstate(divide="ignore"):
            share_db = np.where(split > 0, 10.0 * np.log10(np.where(split > 0, split, 1.0)), -np.inf)
        eff = np.maximum(powers + share_db, FLOOR_DBM)
        eff = np.where(powers <= FLOOR_DBM, FLOOR_DBM, eff)
        fitness = float(np.dot(w, eff))
        powers = eff
    return Evaluation(fitness, powers, spreads, feasible)


def evaluate(genome: Sequence[int], scene: Scene, objective: Objective,
             trace_params: TraceParams = TraceParams()) -> float:
    """Fitness of ``genome`` (larger is better)."""
    return evaluate_full(genome, scene, objective, trace_params).fitness


@dataclass
class GaResult:
    best_genome: Genome
    best_fitness: float
    history: list = field(default_factory=list)  # best fitness per generation
    infeasible: bool = False
    best_evaluation: Optional[Evaluation] = None
    evaluations: int = 0


def _individual_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), generation, index])


def run_ga(scene: Scene, objective: Objective, ga_params: GaParams = GaParams(),
           trace_params: TraceParams = TraceParams(),
           fitness_fn: Optional[Callable[[Genome], Evaluation]] = None,
           initial: Sequence[Sequence[int]] = ()) -> GaResult:
    """Seeded generational GA with tournament selection and elitism.

    Individual 0 of the first generation is the all-specular (plain)
    genome, followed by any ``initial`` genomes; the rest are random.
    """
    n = len(scene.plan.tiles)
    mask = allowed_mask(objective, n)
    free = np.ones(n, dtype=bool) if mask is None else mask
    rate = ga_params.mutation_rate_per_gene
    if rate is None:
        rate = 1.0 / max(1, int(free.sum()))
    cache: dict = {}

    def fit(genome: Genome) -> Evaluation:
        ev = cache.get(genome)
        if ev is None:
            ev = fitness_fn(genome) if fitness_fn else evaluate_full(genome, scene, objective, trace_params)
            cache[genome] = ev
        return ev

    def random_genome(rng) -> Genome:
        g = rng.integers(0, REPERTOIRE_SIZE, size=n)
        return Genome(np.where(free, g, SPECULAR_INDEX))

    pop_size = ga_params.population_size
    pop = [Genome.specular(n)] + [Genome(g) for g in initial][: pop_size - 1]
    while len(pop) < pop_size:
        pop.append(random_genome(_individual_rng(ga_params.rng_seed, 0, len(pop))))
    evals = [fit(g) for g in pop]
    history = []

    def ranking(evs):
        return sorted(range(len(evs)), key=lambda i: (-evs[i].fitness, i))

    order = ranking(evals)
    history.append(evals[order[0]].fitness)
    for gen in range(1, ga_params.generations + 1):
        new = [pop[i] for i in order[: ga_params.elitism_count]]
        while len(new) < pop_size:
            rng = _individual_rng(ga_params.rng_seed, gen, len(new))

            def pick():
                cand = rng.integers(0, pop_size, size=ga_params.tournament_k)
                return min(cand, key=lambda i: (-evals[i].fitness, i))

            a, b = pop[pick()], pop[pick()]
            child = np.array(a)
            if rng.random() < ga_params.crossover_rate:
                take = rng.random(n) < 0.5
                child = np.where(take, np.array(b), child)
            mutate = (rng.random(n) < rate) & free
            if mutate.any():
                child[mutate] = rng.integers(0, REPERTOIRE_SIZE, size=int(mutate.sum()))
            new.append(Genome(child))
        pop = new
        evals = [fit(g) for g in pop]
        order = ranking(evals)
        history.append(evals[order[0]].fitness)
    best = order[0]
    ev = evals[best]
    return GaResult(pop[best], ev.fitness, history, infeasible=not ev.feasible, best_evaluation=ev,
                    evaluations=len(cache))


def brute_force(scene: Scene, objective: Objective, trace_params: TraceParams = TraceParams(),
                fitness_fn: Optional[Callable] = None) -> tuple[Genome, float]:
    """Exhaustive search; only sensible for one or two tiles."""
    import itertools

    n = len(scene.plan.tiles)
    best, best_f = None, -math.inf
    for genes in itertools.product(range(REPERTOIRE_SIZE), repeat=n):
        g = Genome(genes)
        f = fitness_fn(g).fitness if fitness_fn else evaluate(g, scene, objective, trace_params)
        if f > best_f:
            best, best_f = g, f
    return best, best_f


# --- coverage maps -----------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple
    y_range: tuple
    nx: int
    ny: int
    z: float = 1.5

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(*self.x_range, self.nx), np.linspace(*self.y_range, self.ny)


class Heatmap(NamedTuple):
    xs: np.ndarray
    ys: np.ndarray
    power_dbm: np.ndarray  # (ny, nx)


def heatmap(scene: Scene, genome: Optional[Sequence[int]], grid: GridSpec,
            trace_params: TraceParams = TraceParams(), template: Optional[Receiver] = None) -> Heatmap:
    """Received power sampled on a uniform x-y grid at height ``grid.z``."""
    xs, ys = grid.axes()
    if template is None:
        template = scene.receivers[0] if scene.receivers else Receiver((0, 0, 0))
    rxs = [Receiver((x, y, grid.z), template.antenna, template.capture_radius, name=f"g{j}_{i}")
           for j, y in enumerate(ys) for i, x in enumerate(xs)]
    probe = scene.evolve(receivers=tuple(rxs))
    state = None if genome is None else _decoder(scene.plan).state(genome)
    result = trace(probe, params=trace_params, tile_state=state)
    powers, _ = receiver_metrics(probe, result)
    return Heatmap(xs, ys, powers.reshape(len(ys), len(xs)))


def interpolate(hm: Heatmap, factor: int = 4) -> Heatmap:
    """Bilinear upsampling of a heatmap in dB."""
    if len(hm.xs) < 2 or len(hm.ys) < 2:
        return hm
    f = RegularGridInterpolator((hm.ys, hm.xs), hm.power_dbm, method="linear")
    xs = np.linspace(hm.xs[0], hm.xs[-1], (len(hm.xs) - 1) * factor + 1)
    ys = np.linspace(hm.ys[0], hm.ys[-1], (len(hm.ys) - 1) * factor + 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return Heatmap(xs, ys, f(np.stack([yy, xx], axis=-1)))


def heatmap_rows(hm: Heatmap) -> list[dict]:
    return [{"x": float(x), "y": float(y), "power_dbm": float(hm.power_dbm[j, i])}
            for j, y in enumerate(hm.ys) for i, x in enumerate(hm.xs)]
