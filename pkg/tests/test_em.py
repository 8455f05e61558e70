import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pwenv.em import (FLOOR_DBM, AntennaKind, AntennaPattern, PathContribution, antenna_from_dict, antenna_gain,
                      antenna_to_dict, coherent_sum, fspl_db, incoherent_sum_dbm)
from pwenv.errors import NonPositiveInputError


def test_fspl_anchors():
    # roughly 60 dB at 2.4 GHz over 10 m
    assert fspl_db(10, 2.4e9) == pytest.approx(60.05, abs=0.5)
    # closed-form Friis: 20 log10(4 pi 10 60e9 / c)
    want = 20 * math.log10(4 * math.pi * 10 * 60e9 / 299_792_458)
    assert fspl_db(10, 60e9) == pytest.approx(want, abs=1e-9)
    assert want == pytest.approx(88.01, abs=0.01)


@given(st.floats(0.01, 1e4), st.floats(1e6, 1e11))
def test_fspl_inverse_square(d, f):
    assert fspl_db(2 * d, f) - fspl_db(d, f) == pytest.approx(20 * math.log10(2), abs=1e-9)


def test_fspl_rejects_nonpositive():
    with pytest.raises(NonPositiveInputError):
        fspl_db(0, 2.4e9)
    with pytest.raises(NonPositiveInputError):
        fspl_db(1, -1)


def test_antenna_gains():
    assert antenna_gain(AntennaPattern(), (0.3, 0.4, np.sqrt(0.75))) == 1.0
    dip = AntennaPattern(AntennaKind.HALF_DIPOLE, (0, 0, 1))
    assert antenna_gain(dip, (1, 0, 0)) == pytest.approx(1.643)
    assert antenna_gain(dip, (0, 0, 1)) == 0.0
    lobe = AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, (0, 0, 1), 30.0)
    m = math.log(0.5) / math.log(math.cos(math.radians(30)))
    psi = math.radians(30)
    assert antenna_gain(lobe, (math.sin(psi), 0, math.cos(psi))) == pytest.approx(0.5)
    assert math.cos(psi) ** m == pytest.approx(0.5)
    assert antenna_gain(lobe, (0, 0, -1)) == 0.0


def test_cutoff_and_beams():
    narrow = AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, (1, 0, 0), 30.0, cutoff_deg=5.0, scale=0.5)
    assert antenna_gain(narrow, (1, 0, 0)) == pytest.approx(0.5)
    assert antenna_gain(narrow, (math.cos(0.2), math.sin(0.2), 0)) == 0.0
    other = AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, (0, 1, 0), 30.0)
    assert antenna_gain((narrow, other), (0, 1, 0)) == pytest.approx(1.0)
    np.testing.assert_allclose(antenna_gain((narrow, other), np.array([[1, 0, 0], [0, 1, 0]])), [0.5, 1.0])


def test_antenna_dict_round_trip():
    p = AntennaPattern(AntennaKind.SINGLE_LOBE_SINUSOID, (0, 0, 2), 20.0, cutoff_deg=3.0, scale=0.25)
    q = antenna_from_dict(antenna_to_dict(p))
    assert q.kind is p.kind and q.half_angle_deg == 20.0 and q.cutoff_deg == 3.0 and q.scale == 0.25
    np.testing.assert_allclose(q.boresight, (0, 0, 1))


@given(st.floats(0, 1e-6), st.floats(0, 2 * math.pi))
def test_coherent_single_path(tau, theta):
    r = coherent_sum([PathContribution(1.0, tau, theta)], 2.4e9)
    assert r.power_linear == pytest.approx(1.0)


def test_coherent_cancellation():
    r = coherent_sum([PathContribution(1.0, 0.0, 0.0), PathContribution(1.0, 0.0, math.pi)], 60e9)
    assert r.power_linear == pytest.approx(0.0, abs=1e-24)
    assert r.power_dbm == FLOOR_DBM
    assert coherent_sum([], 1e9).power_dbm == FLOOR_DBM


def test_coherent_uses_carrier_delay():
    f = 2.4e9
    half = 0.5 / f
    r = coherent_sum([PathContribution(1.0, 0.0, 0.0), PathContribution(1.0, half, 0.0)], f)
    assert r.power_linear == pytest.approx(0.0, abs=1e-20)


def test_incoherent_sum():
    assert incoherent_sum_dbm([-50, -50]) == pytest.approx(-46.99, abs=0.005)
    assert incoherent_sum_dbm([-83.0]) == -83.0
    assert incoherent_sum_dbm([FLOOR_DBM]) == FLOOR_DBM
    assert incoherent_sum_dbm([]) == FLOOR_DBM
