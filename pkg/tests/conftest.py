import numpy as np
import pytest

from pwenv.scenario import preset


@pytest.fixture(scope="session")
def corridor():
    return preset("corridor-60ghz")


@pytest.fixture(scope="session")
def security():
    return preset("security")


def random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def tile_wall_plan(n_tiles=1, side=1.0, bodies=()):
    """Tiles in a row on the plane x = 10, facing -x, in open space."""
    from pwenv.geometry import Floorplan, Material, RectSurface, Tile, TileGrid

    surf = RectSurface((10, 4.5, 4.5), (0, 0, side), (0, n_tiles * side, 0), Material.PLAIN_CONCRETE, "wall")
    tiles = []
    for k in range(n_tiles):
        rect = RectSurface((10, 4.5 + k * side, 4.5), (0, 0, side), (0, side, 0), Material.TILE, f"t{k}")
        tiles.append(Tile((0, k), rect, 0, (0, k)))
    return Floorplan((surf,), tuple(tiles), bodies=tuple(bodies), grids=(TileGrid(side, 1, n_tiles),),
                     bounds=((0, 0, 0), (20, 20, 20)), network_shape=(1, n_tiles))


def steered_receiver(tile, tx, gene, dist=4.0):
    """Receiver position reached from ``tx`` through ``tile`` running repertoire entry ``gene``."""
    from pwenv.geometry import reflect, steer_normal_from_angles
    from pwenv.tiles import enumerate_repertoire

    n = steer_normal_from_angles(tile, *enumerate_repertoire()[gene].normal_angles)
    inc = tile.center - np.asarray(tx, float)
    inc /= np.linalg.norm(inc)
    return tile.center + dist * reflect(inc, n)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
