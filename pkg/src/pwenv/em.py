"""Link-budget physics: path loss, antenna patterns and multipath summation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import NonPositiveInputError
from .geometry import normalize, vec

C = 299_792_458.0
FLOOR_DBM = -250.0
HALF_DIPOLE_PEAK = 1.643


def fspl_db(distance_m, freq_hz):
    """Free-space path loss ``20 log10(4 pi d f / c)`` in dB.  Vectorizes over arrays."""
    d = np.asarray(distance_m, dtype=float)
    f = np.asarray(freq_hz, dtype=float)
    if np.any(d <= 0) or np.any(f <= 0):
        raise NonPositiveInputError("distance and frequency must be positive")
    out = 20.0 * np.log10(4.0 * math.pi * d * f / C)
    return float(out) if out.ndim == 0 else out


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_dbm(mw):
    """mW to dBm with the disconnected floor for non-positive power."""
    p = np.asarray(mw, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(p > 0, 10.0 * np.log10(np.where(p > 0, p, 1.0)), FLOOR_DBM)
    out = np.maximum(out, FLOOR_DBM)
    return float(out) if out.ndim == 0 else out


class AntennaKind(enum.Enum):
    ISOTROPIC = "isotropic"
    HALF_DIPOLE = "half_dipole"
    SINGLE_LOBE_SINUSOID = "single_lobe_sinusoid"


@dataclass(frozen=True, eq=False)
class AntennaPattern:
    """Antenna gain pattern.

    ``boresight`` is the dipole axis for ``HALF_DIPOLE`` and the lobe axis for
    ``SINGLE_LOBE_SINUSOID``.  ``cutoff_deg`` zeroes the gain beyond that
    angle from boresight; it models a beam formed toward a known target and
    defaults to no cutoff.  ``scale`` multiplies the whole pattern, used to
    split transmit power between several beams.
    """

    kind: AntennaKind = AntennaKind.ISOTROPIC
    boresight: np.ndarray = None
    half_angle_deg: float = 30.0
    cutoff_deg: float = 180.0
    scale: float = 1.0

    def __post_init__(self):
        b = np.array([0.0, 0.0, 1.0]) if self.boresight is None else normalize(vec(self.boresight))
        object.__setattr__(self, "boresight", b)
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", AntennaKind(self.kind))

    @property
    def lobe_exponent(self) -> float:
        """Exponent ``m`` with ``cos(half_angle)**m == 0.5``."""
        return math.log(0.5) / math.log(math.cos(math.radians(self.half_angle_deg)))

    def gain(self, directions) -> np.ndarray | float:
        return antenna_gain(self, directions)


def antenna_gain(pattern, directions):
    """Linear gain toward unit ``directions`` (shape ``(3,)`` or ``(N, 3)``).

    ``pattern`` may also be a sequence of patterns (a multi-beam antenna), in
    which case the strongest beam applies.
    """
    if not isinstance(pattern, AntennaPattern):
        gains = [antenna_gain(p, directions) for p in pattern]
        return np.maximum.reduce(gains) if np.ndim(gains[0]) else max(gains)
    d = np.asarray(directions, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    cos_psi = np.clip(d @ pattern.boresight, -1.0, 1.0)
    kind = pattern.kind
    if kind is AntennaKind.ISOTROPIC:
        g = np.ones(d.shape[0])
    elif kind is AntennaKind.HALF_DIPOLE:
        sin_psi = np.sqrt(np.maximum(0.0, 1.0 - cos_psi**2))
        with np.errstate(divide="ignore", invalid="ignore"):
            g = HALF_DIPOLE_PEAK * (np.cos(0.5 * math.pi * cos_psi) / sin_psi) ** 2
        g = np.where(sin_psi < 1e-12, 0.0, g)
    elif kind is AntennaKind.SINGLE_LOBE_SINUSOID:
        g = np.where(cos_psi > 0, np.maximum(cos_psi, 0.0) ** pattern.lobe_exponent, 0.0)
    else:  # pragma: no cover
        raise ValueError(kind)
    if pattern.cutoff_deg < 180.0:
        g = np.where(cos_psi >= math.cos(math.radians(pattern.cutoff_deg)) - 1e-12, g, 0.0)
    g = g * pattern.scale
    return float(g[0]) if single else g


class PathContribution(NamedTuple):
    amplitude: float  # sqrt(mW)
    delay: float  # s
    phase: float  # rad
    path_id: int = 0


class CoherentResult(NamedTuple):
    power_linear: float
    power_dbm: float
    resultant_phase: float


def phasors(contributions: Iterable[PathContribution], f_c: float) -> np.ndarray:
    arr = list(contributions)
    if not arr:
        return np.zeros(0, dtype=complex)
    a = np.array([c.amplitude for c in arr], dtype=float)
    tau = np.array([c.delay for c in arr], dtype=float)
    theta = np.array([c.phase for c in arr], dtype=float)
    # reduce the carrier term modulo one period before multiplying by 2*pi
    cyc = np.mod(f_c * tau, 1.0)
    return a * np.exp(1j * (2.0 * math.pi * cyc - theta))


def coherent_sum(contributions: Sequence[PathContribution], f_c: float) -> CoherentResult:
    """Phasor sum ``sum a_i exp(-j theta_i) exp(j 2 pi f_c tau_i)``; power in mW."""
    z = phasors(contributions, f_c).sum() if contributions else 0j
    p = float(abs(z) ** 2)
    phase = float(np.mod(np.angle(z), 2 * math.pi)) if p > 0 else 0.0
    return CoherentResult(p, linear_to_dbm(p), phase)


def incoherent_sum_dbm(powers_dbm: Sequence[float]) -> float:
    p = np.asarray(list(powers_dbm), dtype=float)
    p = p[p > FLOOR_DBM]
    if p.size == 0:
        return FLOOR_DBM
    if p.size == 1:
        return float(p[0])
    top = p.max()
    return float(top + 10.0 * np.log10(np.sum(10.0 ** ((p - top) / 10.0))))


def dbm_to_amplitude(p_dbm) -> np.ndarray | float:
    out = np.sqrt(db_to_linear(p_dbm))
    return float(out) if np.ndim(out) == 0 else out


def wavelength(freq_hz: float) -> float:
    return C / freq_hz


def antenna_from_dict(spec: Optional[dict]) -> AntennaPattern:
    if spec is None:
        return AntennaPattern()
    return AntennaPattern(
        kind=AntennaKind(spec.get("kind", "isotropic")),
        boresight=spec.get("boresight"),
        half_angle_deg=float(spec.get("half_angle_deg", 30.0)),
        cutoff_deg=float(spec.get("cutoff_deg", 180.0)),
        scale=float(spec.get("scale", 1.0)),
    )


def antenna_to_dict(p: AntennaPattern) -> dict:
    out = {"kind": p.kind.value, "boresight": [float(x) for x in p.boresight]}
    if p.kind is AntennaKind.SINGLE_LOBE_SINUSOID:
        out["half_angle_deg"] = p.half_angle_deg
    if p.cutoff_deg < 180.0:
        out["cutoff_deg"] = p.cutoff_deg
    if p.scale != 1.0:
        out["scale"] = p.scale
    return out
