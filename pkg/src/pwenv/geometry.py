"""3D primitives, floorplans and ray intersection.

Vectors are plain ``numpy`` arrays of shape ``(3,)``; batched routines take
``(N, 3)`` arrays.  Surfaces are rectangles spanned by two orthogonal edges,
with their geometric normal given by ``edge_u x edge_v``.  Tiles are square
cells laid out on a host surface, so locating the tile under a hit point is an
index computation rather than a separate intersection test.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ForwardDirectionError

EPS_HIT = 1e-6
_UNIT_TOL = 1e-9
_WORLD_Z = np.array([0.0, 0.0, 1.0])
_WORLD_Y = np.array([0.0, 1.0, 0.0])


def vec(x, y=None, z=None) -> np.ndarray:
    if y is None:
        return np.asarray(x, dtype=float).reshape(3)
    return np.array([x, y, z], dtype=float)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def normalize_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def reflect(direction, normal) -> np.ndarray:
    """Mirror ``direction`` about the plane with unit ``normal``."""
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    return d - 2.0 * np.dot(d, n) * n


def reflect_rows(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def virtual_normal(incident, outgoing) -> np.ndarray:
    """Normal of the mirror that reflects ``incident`` into ``outgoing``.

    Both inputs are unit directions of travel.  Raises
    :class:`ForwardDirectionError` when they coincide, since no mirror passes a
    ray straight through.
    """
    i = np.asarray(incident, dtype=float)
    o = np.asarray(outgoing, dtype=float)
    diff = o - i
    if np.linalg.norm(diff) <= _UNIT_TOL:
        raise ForwardDirectionError("outgoing equals incident direction")
    if np.linalg.norm(o + i) <= _UNIT_TOL:
        return -i / np.linalg.norm(i)
    return normalize(diff)


def tile_axes(normal) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(horizontal, vertical)`` in-plane axes for a surface normal.

    The vertical axis is world z projected onto the plane; for horizontal
    surfaces (ceilings, floors) world y is projected instead.
    """
    n = normalize(normal)
    up = _WORLD_Z if abs(n[2]) < 0.999 else _WORLD_Y
    v = normalize(up - np.dot(up, n) * n)
    h = np.cross(v, n)
    return h, v


def steer_normal_from_angles(tile_or_normal, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Rotate a tile normal by azimuth about its vertical axis, then elevation.

    Elevation tilts the azimuth-rotated normal toward the tile's vertical
    axis.  ``(0, 0)`` returns the geometric normal unchanged.
    """
    n = _normal_of(tile_or_normal)
    if azimuth_deg == 0 and elevation_deg == 0:
        return n
    h, v = tile_axes(n)
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    out = math.cos(el) * (math.cos(az) * n + math.sin(az) * h) + math.sin(el) * v
    return out / np.linalg.norm(out)


def angles_from_normal(tile_or_normal, rotated) -> tuple[float, float]:
    """Inverse of :func:`steer_normal_from_angles`; returns degrees."""
    n = _normal_of(tile_or_normal)
    h, v = tile_axes(n)
    r = normalize(rotated)
    el = math.asin(max(-1.0, min(1.0, float(np.dot(r, v)))))
    az = math.atan2(float(np.dot(r, h)), float(np.dot(r, n)))
    return math.degrees(az), math.degrees(el)


def _normal_of(tile_or_normal) -> np.ndarray:
    if isinstance(tile_or_normal, Tile):
        return tile_or_normal.surface.geometric_normal
    if isinstance(tile_or_normal, RectSurface):
        return tile_or_normal.geometric_normal
    return normalize(tile_or_normal)


class Material(enum.Enum):
    PLAIN_CONCRETE = "plain_concrete"
    TILE = "tile"


@dataclass(frozen=True, eq=False)
class RectSurface:
    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    material: Material = Material.PLAIN_CONCRETE
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "origin", vec(self.origin))
        object.__setattr__(self, "edge_u", vec(self.edge_u))
        object.__setattr__(self, "edge_v", vec(self.edge_v))
        scale = np.linalg.norm(self.edge_u) * np.linalg.norm(self.edge_v)
        if scale == 0:
            raise ValueError("degenerate rectangle")
        if abs(np.dot(self.edge_u, self.edge_v)) > 1e-9 * max(1.0, scale):
            raise ValueError("rectangle edges must be orthogonal")

    @cached_property
    def geometric_normal(self) -> np.ndarray:
        return normalize(np.cross(self.edge_u, self.edge_v))

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * (self.edge_u + self.edge_v)

    @property
    def size(self) -> tuple[float, float]:
        return float(np.linalg.norm(self.edge_u)), float(np.linalg.norm(self.edge_v))

    def intersect(self, origin, direction) -> Optional[float]:
        """Distance along the ray to this rectangle, or None."""
        n = self.geometric_normal
        denom = float(np.dot(direction, n))
        if abs(denom) < 1e-15:
            return None
        t = float(np.dot(self.origin - origin, n)) / denom
        if t <= EPS_HIT:
            return None
        rel = origin + t * np.asarray(direction) - self.origin
        u = np.dot(rel, self.edge_u) / np.dot(self.edge_u, self.edge_u)
        v = np.dot(rel, self.edge_v) / np.dot(self.edge_v, self.edge_v)
        if -1e-12 <= u <= 1 + 1e-12 and -1e-12 <= v <= 1 + 1e-12:
            return t
        return None


@dataclass(frozen=True, eq=False)
class Tile:
    """A square programmable cell on a host surface.

    ``id`` is the gateway address in the tile network grid; ``host`` and
    ``cell`` locate the tile on its host surface.
    """

    id: tuple[int, int]
    surface: RectSurface
    host: int
    cell: tuple[int, int]
    virtual_normal: Optional[np.ndarray] = None
    deployed_function: Any = None
    absorbing: bool = False
    collimating: bool = False
    phase_offset: float = 0.0

    def __post_init__(self):
        lu, lv = self.surface.size
        if abs(lu - lv) > 1e-9:
            raise ValueError("tiles must be square")
        if self.virtual_normal is None:
            object.__setattr__(self, "virtual_normal", self.surface.geometric_normal)
        else:
            object.__setattr__(self, "virtual_normal", normalize(self.virtual_normal))

    @property
    def side(self) -> float:
        return self.surface.size[0]

    @property
    def center(self) -> np.ndarray:
        return self.surface.center

    @property
    def geometric_normal(self) -> np.ndarray:
        return self.surface.geometric_normal

    def evolve(self, **changes) -> "Tile":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BlockingSphere:
    center: np.ndarray
    radius: float
    transparent: bool = False
    owner: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "center", vec(self.center))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def intersect(self, origin, direction) -> Optional[float]:
        oc = np.asarray(origin) - self.center
        c = float(np.dot(oc, oc)) - self.radius**2
        if c <= 0.0:
            return None  # rays leaving a body are not blocked by it
        b = float(np.dot(direction, oc))
        disc = b * b - c
        if disc < 0:
            return None
        t = -b - math.sqrt(disc)
        return t if t > EPS_HIT else None


@dataclass(frozen=True)
class TileGrid:
    """Placement of square tiles on one host surface."""

    size: float
    n_u: int
    n_v: int
    offset_u: float = 0.0
    offset_v: float = 0.0


class Hit(NamedTuple):
    point: np.ndarray
    element: Any
    distance: float
    surface_index: int
    tile_index: int


class Packed(NamedTuple):
    origin: np.ndarray  # (S, 3)
    unit_u: np.ndarray
    unit_v: np.ndarray
    len_u: np.ndarray  # (S,)
    len_v: np.ndarray
    normal: np.ndarray
    grid_size: np.ndarray  # (S,) tile side, 0 when untiled
    grid_nu: np.ndarray
    grid_nv: np.ndarray
    grid_off_u: np.ndarray
    grid_off_v: np.ndarray
    grid_base: np.ndarray  # start index into tile_lookup
    tile_lookup: np.ndarray  # flat (sum nu*nv,) -> tile index or -1


@dataclass(frozen=True, eq=False)
class Floorplan:
    surfaces: tuple
    tiles: tuple = ()
    bodies: tuple = ()
    grids: tuple = ()  # per surface: TileGrid or None
    bounds: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    network_shape: tuple = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "tiles", tuple(self.tiles))
        object.__setattr__(self, "bodies", tuple(self.bodies))
        grids = tuple(self.grids) or (None,) * len(self.surfaces)
        if len(grids) != len(self.surfaces):
            raise ValueError("one grid entry per surface required")
        object.__setattr__(self, "grids", grids)

    def with_tiles(self, tiles: Sequence[Tile]) -> "Floorplan":
        new = replace(self, tiles=tuple(tiles))
        # packing depends only on placement, which tiles never change
        if "packed" in self.__dict__:
            new.__dict__["packed"] = self.__dict__["packed"]
        return new

    def with_bodies(self, bodies) -> "Floorplan":
        new = replace(self, bodies=tuple(bodies))
        if "packed" in self.__dict__:
            new.__dict__["packed"] = self.__dict__["packed"]
        return new

    @cached_property
    def tile_index(self) -> dict:
        return {t.id: k for k, t in enumerate(self.tiles)}

    @cached_property
    def packed(self) -> Packed:
        s = self.surfaces
        lu = np.array([np.linalg.norm(x.edge_u) for x in s])
        lv = np.array([np.linalg.norm(x.edge_v) for x in s])
        size = np.zeros(len(s))
        nu = np.zeros(len(s), dtype=np.int64)
        nv = np.zeros(len(s), dtype=np.int64)
        off_u = np.zeros(len(s))
        off_v = np.zeros(len(s))
        base = np.zeros(len(s), dtype=np.int64)
        total = 0
        for k, g in enumerate(self.grids):
            base[k] = total
            if g is None:
                continue
            size[k], nu[k], nv[k], off_u[k], off_v[k] = g.size, g.n_u, g.n_v, g.offset_u, g.offset_v
            total += g.n_u * g.n_v
        lookup = np.full(total, -1, dtype=np.int64)
        for idx, t in enumerate(self.tiles):
            iu, iv = t.cell
            lookup[base[t.host] + iv * nu[t.host] + iu] = idx
        return Packed(
            origin=np.array([x.origin for x in s]),
            unit_u=np.array([x.edge_u for x in s]) / lu[:, None],
            unit_v=np.array([x.edge_v for x in s]) / lv[:, None],
            len_u=lu,
            len_v=lv,
            normal=np.array([x.geometric_normal for x in s]),
            grid_size=size,
            grid_nu=nu,
            grid_nv=nv,
            grid_off_u=off_u,
            grid_off_v=off_v,
            grid_base=base,
            tile_lookup=lookup,
        )


def intersect_surfaces(origins: np.ndarray, dirs: np.ndarray, packed: Packed):
    """Nearest surface hit for a batch of rays.

    Returns ``(t, surface_index, tile_index)``; ``t`` is ``inf`` and the
    indices are ``-1`` for rays that hit nothing.
    """
    n_rays = origins.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_s = np.full(n_rays, -1, dtype=np.int64)
    best_u = np.zeros(n_rays)
    best_v = np.zeros(n_rays)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(packed.origin.shape[0]):
            nrm = packed.normal[k]
            denom = dirs @ nrm
            t = ((packed.origin[k] - origins) @ nrm) / denom
            ok = (t > EPS_HIT) & (t < best_t)
            if not ok.any():
                continue
            rel = origins + t[:, None] * dirs - packed.origin[k]
            u = rel @ packed.unit_u[k]
            v = rel @ packed.unit_v[k]
            tol = 1e-9
            ok &= (u >= -tol) & (u <= packed.len_u[k] + tol) & (v >= -tol) & (v <= packed.len_v[k] + tol)
            best_t = np.where(ok, t, best_t)
            best_s = np.where(ok, k, best_s)
            best_u = np.where(ok, u, best_u)
            best_v = np.where(ok, v, best_v)
    tile = np.full(n_rays, -1, dtype=np.int64)
    hit = best_s >= 0
    if hit.any() and packed.tile_lookup.size:
        s = best_s[hit]
        size = packed.grid_size[s]
        tiled = size > 0
        safe = np.where(tiled, size, 1.0)
        iu = np.floor((best_u[hit] - packed.grid_off_u[s]) / safe).astype(np.int64)
        iv = np.floor((best_v[hit] - packed.grid_off_v[s]) / safe).astype(np.int64)
        inside = tiled & (iu >= 0) & (iu < packed.grid_nu[s]) & (iv >= 0) & (iv < packed.grid_nv[s])
        flat = packed.grid_base[s] + iv * packed.grid_nu[s] + iu
        flat = np.where(inside, flat, 0)
        tile[hit] = np.where(inside, packed.tile_lookup[flat], -1)
    return best_t, best_s, tile


def intersect_spheres(origins: np.ndarray, dirs: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Entry distances into each sphere, shape ``(N, B)``; ``inf`` for misses.

    Rays starting inside a sphere are not blocked by it.
    """
    if centers.shape[0] == 0:
        return np.full((origins.shape[0], 0), np.inf)
    oc = origins[:, None, :] - centers[None, :, :]
    b = np.einsum("nk,nbk->nb", dirs, oc)
    c = np.einsum("nbk,nbk->nb", oc, oc) - radii[None, :] ** 2
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    ok = (c > 0) & (disc >= 0) & (t > EPS_HIT)
    return np.where(ok, t, np.inf)


def intersect(origin, direction, plan: Floorplan) -> Optional[Hit]:
    """Nearest hit of one ray against surfaces, tiles and opaque bodies."""
    o = vec(origin)
    d = vec(direction)
    t, s, tile = intersect_surfaces(o[None, :], d[None, :], plan.packed)
    best_t, element, s_idx, t_idx = float(t[0]), None, int(s[0]), int(tile[0])
    if s_idx >= 0:
        element = plan.tiles[t_idx] if t_idx >= 0 else plan.surfaces[s_idx]
    opaque = [b for b in plan.bodies if not b.transparent]
    if opaque:
        ts = intersect_spheres(
            o[None, :], d[None, :], np.array([b.center for b in opaque]), np.array([b.radius for b in opaque])
        )[0]
        k = int(np.argmin(ts))
        if ts[k] < best_t:
            best_t, element, s_idx, t_idx = float(ts[k]), opaque[k], -1, -1
    if element is None or not math.isfinite(best_t):
        return None
    return Hit(o + best_t * d, element, best_t, s_idx, t_idx)


# --- floorplan construction -------------------------------------------------


@dataclass(frozen=True)
class Slab:
    """Axis-aligned solid block (internal wall) given by min/max corners."""

    lo: tuple
    hi: tuple
    tiled_faces: bool = True
    tiled_ends: bool = False


@dataclass(frozen=True)
class TileCoverage:
    size: float
    walls: bool = True
    ceiling: bool = False
    min_height: float = 0.0
    network_cols: int = 0


def _vertical_face(p0, p1, z0, z1, name) -> RectSurface:
    # normal points to the right of the p0 -> p1 walking direction
    p0 = np.array([p0[0], p0[1], z0], dtype=float)
    p1 = np.array([p1[0], p1[1], z0], dtype=float)
    return RectSurface(p0, p1 - p0, np.array([0.0, 0.0, z1 - z0]), name=name)


def _wall_grid(surface: RectSurface, cov: TileCoverage, z0: float, z1: float) -> Optional[TileGrid]:
    lu, _ = surface.size
    lo = max(z0, cov.min_height)
    n_u = int(math.floor(lu / cov.size + 1e-9))
    n_v = int(math.floor((z1 - lo) / cov.size + 1e-9))
    if n_u == 0 or n_v == 0:
        return None
    off_u = 0.5 * (lu - n_u * cov.size)
    if cov.min_height > z0:
        off_v = lo - z0
    else:
        off_v = 0.5 * ((z1 - z0) - n_v * cov.size)
    return TileGrid(cov.size, n_u, n_v, off_u, off_v)


def build_box_floorplan(size, slabs: Sequence[Slab] = (), coverage: Optional[TileCoverage] = None,
                        bodies: Sequence[BlockingSphere] = ()) -> Floorplan:
    """Closed rectangular room ``[0,Lx] x [0,Ly] x [0,H]`` with internal slabs."""
    lx, ly, h = (float(x) for x in size)
    surfaces: list[RectSurface] = []
    grids: list = []

    def add(surface, grid=None):
        surfaces.append(surface)
        grids.append(grid)

    add(RectSurface((0, 0, 0), (lx, 0, 0), (0, ly, 0), name="floor"))
    ceiling = RectSurface((0, 0, h), (0, ly, 0), (lx, 0, 0), name="ceiling")
    ceil_grid = None
    if coverage is not None and coverage.ceiling:
        nu = int(math.floor(ly / coverage.size + 1e-9))
        nv = int(math.floor(lx / coverage.size + 1e-9))
        ceil_grid = TileGrid(coverage.size, nu, nv, 0.5 * (ly - nu * coverage.size), 0.5 * (lx - nv * coverage.size))
    add(ceiling, ceil_grid)
    corners = [(0, 0), (0, ly), (lx, ly), (lx, 0)]
    names = ["wall_x0", "wall_y1", "wall_x1", "wall_y0"]
    # walking clockwise seen from above keeps the interior on the right
    for k in range(4):
        face = _vertical_face(corners[k], corners[(k + 1) % 4], 0.0, h, names[k])
        grid = _wall_grid(face, coverage, 0.0, h) if coverage is not None and coverage.walls else None
        add(face, grid)
    for j, slab in enumerate(slabs):
        (x0, y0, z0), (x1, y1, z1) = slab.lo, slab.hi
        # counter-clockwise around a solid keeps the outside on the right
        ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        for k in range(4):
            a, b = ring[k], ring[(k + 1) % 4]
            face = _vertical_face(a, b, z0, z1, f"slab{j}_side{k}")
            length = math.dist(a, b)
            is_long = length >= max(x1 - x0, y1 - y0) - 1e-9
            tiled = coverage is not None and coverage.walls and (slab.tiled_ends or (is_long and slab.tiled_faces))
            add(face, _wall_grid(face, coverage, z0, z1) if tiled else None)
        if z1 < h - 1e-9:
            add(RectSurface((x0, y0, z1), (x1 - x0, 0, 0), (0, y1 - y0, 0), name=f"slab{j}_top"))
        if z0 > 1e-9:
            add(RectSurface((x0, y0, z0), (0, y1 - y0, 0), (x1 - x0, 0, 0), name=f"slab{j}_bottom"))

    tiles: list[Tile] = []
    for host, (surf, grid) in enumerate(zip(surfaces, grids)):
        if grid is None:
            continue
        uu = surf.edge_u / np.linalg.norm(surf.edge_u)
        vv = surf.edge_v / np.linalg.norm(surf.edge_v)
        for iv in range(grid.n_v):
            for iu in range(grid.n_u):
                o = surf.origin + (grid.offset_u + iu * grid.size) * uu + (grid.offset_v + iv * grid.size) * vv
                rect = RectSurface(o, grid.size * uu, grid.size * vv, Material.TILE, name=f"{surf.name}[{iu},{iv}]")
                tiles.append(Tile((0, 0), rect, host, (iu, iv)))
    cols = coverage.network_cols if coverage is not None and coverage.network_cols else 0
    if tiles and not cols:
        cols = int(math.ceil(math.sqrt(len(tiles))))
    if tiles:
        tiles = [t.evolve(id=(k // cols, k % cols)) for k, t in enumerate(tiles)]
    rows = int(math.ceil(len(tiles) / cols)) if tiles else 0
    return Floorplan(
        surfaces=tuple(surfaces),
        tiles=tuple(tiles),
        bodies=tuple(bodies),
        grids=tuple(grids),
        bounds=((0.0, 0.0, 0.0), (lx, ly, h)),
        network_shape=(rows, cols),
    )


def segment_clear(a, b, plan: Floorplan, ignore_surfaces=(), ignore_owners=(), margin: float = 1e-6) -> bool:
    """True when the open segment ``a -> b`` crosses no surface or opaque body."""
    return bool(segments_clear(np.atleast_2d(a), np.atleast_2d(b), plan, ignore_surfaces, ignore_owners, margin)[0])


def segments_clear(a: np.ndarray, b: np.ndarray, plan: Floorplan, ignore_surfaces=(), ignore_owners=(),
                   margin: float = 1e-6, ignore_per_row: Optional[np.ndarray] = None) -> np.ndarray:
    """Batched :func:`segment_clear`.

    ``ignore_per_row`` is an optional ``(N, k)`` array of surface indices to
    skip per segment (the host surfaces of the two end tiles).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = np.linalg.norm(d, axis=1)
    d = d / length[:, None]
    packed = plan.packed
    clear = np.ones(a.shape[0], dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(packed.origin.shape[0]):
            if k in ignore_surfaces:
                continue
            nrm = packed.normal[k]
            t = ((packed.origin[k] - a) @ nrm) / (d @ nrm)
            ok = (t > margin) & (t < length - margin)
            rel = a + t[:, None] * d - packed.origin[k]
            u = rel @ packed.unit_u[k]
            v = rel @ packed.unit_v[k]
            ok &= (u > 1e-9) & (u < packed.len_u[k] - 1e-9) & (v > 1e-9) & (v < packed.len_v[k] - 1e-9)
            if ignore_per_row is not None:
                ok &= ~np.any(ignore_per_row == k, axis=1)
            clear &= ~ok
    opaque = [x for x in plan.bodies if not x.transparent and x.owner not in ignore_owners]
    if opaque:
        ts = intersect_spheres(a, d, np.array([x.center for x in opaque]), np.array([x.radius for x in opaque]))
        clear &= ~np.any(ts < length[:, None], axis=1)
    return clear


__all__ = [
    "EPS_HIT",
    "BlockingSphere",
    "Floorplan",
    "Hit",
    "Material",
    "RectSurface",
    "Slab",
    "Tile",
    "TileCoverage",
    "TileGrid",
    "angles_from_normal",
    "build_box_floorplan",
    "intersect",
    "intersect_spheres",
    "intersect_surfaces",
    "normalize",
    "reflect",
    "segment_clear",
    "segments_clear",
    "steer_normal_from_angles",
    "tile_axes",
    "virtual_normal",
]
