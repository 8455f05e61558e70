import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from pwenv.errors import ForwardDirectionError
from pwenv.geometry import (BlockingSphere, RectSurface, Slab, angles_from_normal, build_box_floorplan,
                            intersect, reflect, segment_clear, steer_normal_from_angles, tile_axes,
                            virtual_normal)

from conftest import random_units

H = math.sqrt(0.5)

unit = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: 0.1 < np.linalg.norm(v)).map(lambda v: np.array(v) / np.linalg.norm(v))


@pytest.mark.parametrize("d, n, want", [
    ((0, 0, -1), (0, 0, 1), (0, 0, 1)),
    ((H, 0, -H), (0, 0, 1), (H, 0, H)),
    ((1, 0, 0), (0, 0, 1), (1, 0, 0)),
])
def test_reflect_vectors(d, n, want):
    np.testing.assert_allclose(reflect(d, n), want, atol=1e-12)


def test_virtual_normal_vectors():
    np.testing.assert_allclose(virtual_normal((1, 0, 0), (-1, 0, 0)), (-1, 0, 0))
    n = virtual_normal((1, 0, 0), (0, 1, 0))
    np.testing.assert_allclose(n, (-H, H, 0), atol=1e-12)
    np.testing.assert_allclose(reflect((1, 0, 0), n), (0, 1, 0), atol=1e-12)
    with pytest.raises(ForwardDirectionError):
        virtual_normal((0, 0, -1), (0, 0, -1))


@settings(max_examples=300, deadline=None)
@given(unit, unit)
def test_virtual_normal_maps_incident_to_outgoing(i, o):
    assume(np.linalg.norm(i - o) > 1e-6)
    n = virtual_normal(i, o)
    assert abs(np.linalg.norm(n) - 1) < 1e-12
    np.testing.assert_allclose(reflect(i, n), o, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(unit, unit)
def test_reflect_is_involution(d, n):
    np.testing.assert_allclose(reflect(reflect(d, n), n), d, atol=1e-12)


def test_steer_identity_and_rotation_oracle():
    wall = (0, -1, 0)
    np.testing.assert_allclose(steer_normal_from_angles(wall, 0, 0), wall)
    h, v = tile_axes(wall)
    np.testing.assert_allclose(v, (0, 0, 1))
    for az, el in [(30, 0), (-15, 15), (30, -30), (15, 15)]:
        n_az = Rotation.from_rotvec(math.radians(az) * v).apply(wall)
        axis = np.cross(n_az, v)
        axis /= np.linalg.norm(axis)
        want = Rotation.from_rotvec(math.radians(el) * axis).apply(n_az)
        np.testing.assert_allclose(steer_normal_from_angles(wall, az, el), want, atol=1e-12)
    np.testing.assert_allclose(steer_normal_from_angles(wall, 30, 0), (0.5, -math.sqrt(3) / 2, 0), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(unit, st.floats(-80, 80), st.floats(-80, 80))
def test_steer_angles_round_trip(n, az, el):
    rotated = steer_normal_from_angles(n, az, el)
    a, e = angles_from_normal(n, rotated)
    assert a == pytest.approx(az, abs=1e-7)
    assert e == pytest.approx(el, abs=1e-7)


def test_ray_hits_ceiling():
    plan = build_box_floorplan((10, 15, 3))
    hit = intersect((2, 2, 1.5), (0, 0, 1), plan)
    assert hit.distance == pytest.approx(1.5)
    np.testing.assert_allclose(hit.point, (2, 2, 3))
    assert plan.surfaces[hit.surface_index].name == "ceiling"


def test_ray_hits_sphere():
    plan = build_box_floorplan((20, 20, 3), bodies=[BlockingSphere((10, 10, 1.5), 0.5)])
    hit = intersect((5, 10, 1.5), (1, 0, 0), plan)
    assert hit.distance == pytest.approx(4.5)
    assert isinstance(hit.element, BlockingSphere)


def test_transparent_sphere_does_not_block():
    body = BlockingSphere((10, 10, 1.5), 0.5, transparent=True)
    plan = build_box_floorplan((20, 20, 3), bodies=[body])
    assert intersect((5, 10, 1.5), (1, 0, 0), plan).distance == pytest.approx(15.0)
    assert segment_clear((5, 10, 1.5), (15, 10, 1.5), plan)


def test_nearest_hit_matches_exhaustive_oracle(corridor):
    plan = corridor.scene.plan
    rng = np.random.default_rng(3)
    dirs = random_units(rng, 500)
    origins = rng.uniform((0.1, 0.1, 0.1), (4.4, 14.9, 2.9), size=(500, 3))
    for o, d in zip(origins, dirs):
        ts = [s.intersect(o, d) for s in plan.surfaces]
        k = min((t, k) for k, t in enumerate(ts) if t is not None)[1]
        hit = intersect(o, d, plan)
        assert hit.surface_index == k
        assert hit.distance == pytest.approx(ts[k], rel=1e-9)
        if hit.tile_index >= 0:
            tile = plan.tiles[hit.tile_index]
            assert tile.host == k
            assert tile.surface.intersect(o, d) == pytest.approx(hit.distance, rel=1e-9)
        else:
            assert all(t.surface.intersect(o, d) is None for t in plan.tiles if t.host == k)


def test_tile_counts(corridor, security):
    assert len(corridor.scene.plan.tiles) == 222
    assert corridor.scene.plan.network_shape == (6, 37)
    tiles = security.scene.plan.tiles
    assert len(tiles) == 488
    assert min(float(t.center[2]) - 0.375 for t in tiles) >= 1.5 - 1e-9


def test_slab_blocks_segment():
    plan = build_box_floorplan((10, 15, 3), [Slab((4.5, 1.5, 0), (5.5, 13.5, 3))])
    assert not segment_clear((2, 7, 1.5), (8, 7, 1.5), plan)
    assert segment_clear((2, 0.5, 1.5), (8, 0.5, 1.5), plan)


def test_rectangle_validation():
    with pytest.raises(ValueError):
        RectSurface((0, 0, 0), (1, 0, 0), (1, 1, 0))
    with pytest.raises(ValueError):
        RectSurface((0, 0, 0), (0, 0, 0), (0, 1, 0))
