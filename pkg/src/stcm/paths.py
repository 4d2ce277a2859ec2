"""Propagation path record and the free-space spreading factor shared by all path builders."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import ZeroLegLength


class PathKind(enum.Enum):
    LOS = "LoS"
    TARGET_DIRECT = "TargetDirect"
    CLUTTER = "Clutter"
    MULTI_BOUNCE = "MultiBounce"


@dataclass(frozen=True, slots=True)
class PropagationPath:
    kind: PathKind
    delay: float
    amplitude: complex
    doppler: float = 0.0
    aod_az: float = 0.0
    aod_el: float = 0.0
    aoa_az: float = 0.0
    aoa_el: float = 0.0
    alpha: float = 0.0  # frequency exponent applied per subcarrier
    source: tuple = ()
    # tx, interaction points..., rx; used for visibility tests
    vertices: tuple = field(default=(), repr=False, compare=False)

    @property
    def power(self) -> float:
        return abs(self.amplitude) ** 2

    def scaled(self, factor: float) -> "PropagationPath":
        return replace(self, amplitude=self.amplitude * factor)


def spreading(d_legs, f_c: float) -> float:
    """Free-space amplitude spreading over ``len(d_legs)`` legs.

    ``(c/f_c) / ((4 pi)^((L+1)/2) * prod(d))``: Friis for one leg, the radar
    equation amplitude for two, and its natural extension beyond.
    """
    d = np.asarray(d_legs, dtype=float).ravel()
    if d.size == 0 or np.any(d <= 0.0):
        raise ZeroLegLength(f"leg lengths must be positive, got {d.tolist()}")
    wavelength = SPEED_OF_LIGHT / f_c
    return wavelength / ((4.0 * math.pi) ** ((d.size + 1) / 2.0) * float(np.prod(d)))


def direction_angles(origin, point) -> tuple[float, float]:
    """Azimuth and elevation (radians) of ``point`` seen from ``origin``."""
    v = np.asarray(point, float) - np.asarray(origin, float)
    r = float(np.linalg.norm(v))
    if r == 0.0:
        return 0.0, 0.0
    return math.atan2(v[1], v[0]), math.asin(max(-1.0, min(1.0, v[2] / r)))


def direction_angles_many(origin, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`direction_angles` for ``points`` shaped (n, 3)."""
    v = np.asarray(points, float) - np.asarray(origin, float)
    r = np.linalg.norm(v, axis=-1)
    safe = np.where(r > 0.0, r, 1.0)
    az = np.where(r > 0.0, np.arctan2(v[..., 1], v[..., 0]), 0.0)
    el = np.where(r > 0.0, np.arcsin(np.clip(v[..., 2] / safe, -1.0, 1.0)), 0.0)
    return az, el


def spreading_factor(n_legs: int, f_c: float) -> float:
    """``spreading(d_legs, f_c) * prod(d_legs)``, for vectorized use."""
    return (SPEED_OF_LIGHT / f_c) / (4.0 * math.pi) ** ((n_legs + 1) / 2.0)
