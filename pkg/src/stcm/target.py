"""Attributed scattering-center targets with translational and rotational motion.

Each target is a set of point scatterers in the body frame. A scatterer has a
real gain envelope

    amplitude * (f / f_c)**alpha * exp(-angle**2 / (2 * aspect_width**2))

where ``angle`` separates the viewing direction from the scatterer's aspect
center. Scatterers attached to a rotating part (wheel, rotor) additionally
carry a lever arm that spins about the part axis, which produces micro-Doppler.
Propagation phase is applied later by the synthesizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import DegenerateGeometry, UnknownPartId, UnsupportedClass
from .paths import PathKind, PropagationPath, direction_angles_many, spreading_factor

ALPHA_VALUES = (-1.0, -0.5, 0.0, 0.5, 1.0)
N_CENTERS = 10


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _as_rotation(body_rotation) -> np.ndarray:
    r = np.asarray(body_rotation, dtype=float)
    return rot_z(float(r)) if r.ndim == 0 else r


def rodrigues(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotate ``v`` about unit ``axis`` by ``angle`` (right-handed)."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + _cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@dataclass(frozen=True)
class ScatteringCenter:
    local_position: tuple[float, float, float]
    amplitude: float
    alpha: float = 0.0
    aspect_center: tuple[float, float, float] = (1.0, 0.0, 0.0)
    aspect_width: float = 1.0
    part_id: int | None = None

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if not self.aspect_width > 0:
            raise ValueError("aspect_width must be positive")
        if self.alpha not in ALPHA_VALUES:
            raise ValueError(f"alpha must be one of {ALPHA_VALUES}")
        n = np.linalg.norm(self.aspect_center)
        if not np.isclose(n, 1.0, atol=1e-9):
            raise ValueError("aspect_center must be a unit vector")


@dataclass(frozen=True)
class McsSet:
    cls: str
    view_dir: tuple[float, float, float]
    centers: tuple[ScatteringCenter, ...]

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Column view of the centers, for vectorized projections."""
        return {
            "position": np.array([c.local_position for c in self.centers], float).reshape(-1, 3),
            "amplitude": np.array([c.amplitude for c in self.centers], float),
            "alpha": np.array([c.alpha for c in self.centers], float),
            "aspect": np.array([c.aspect_center for c in self.centers], float).reshape(-1, 3),
            "width": np.array([c.aspect_width for c in self.centers], float),
            "part": np.array([-1 if c.part_id is None else c.part_id for c in self.centers], int),
        }

    def to_record(self) -> dict:
        return {
            "class": self.cls,
            "view_dir": list(self.view_dir),
            "centers": [
                {
                    "local_position": list(c.local_position),
                    "amplitude": c.amplitude,
                    "alpha": c.alpha,
                    "aspect_center": list(c.aspect_center),
                    "aspect_width": c.aspect_width,
                    "part_id": c.part_id,
                }
                for c in self.centers
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "McsSet":
        centers = tuple(
            ScatteringCenter(
                tuple(c["local_position"]), c["amplitude"], c["alpha"],
                tuple(c["aspect_center"]), c["aspect_width"], c.get("part_id"),
            )
            for c in rec["centers"]
        )
        return cls(rec["class"], tuple(rec["view_dir"]), centers)


@dataclass(frozen=True)
class RotatingPart:
    part_id: int
    axis: tuple[float, float, float]
    rate: float  # Hz
    phase: float = 0.0
    lever_arm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rotation rate must be >= 0")
        if not np.isclose(np.linalg.norm(self.axis), 1.0, atol=1e-9):
            raise ValueError("part axis must be a unit vector")


@dataclass(frozen=True)
class MotionState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: float = 0.0
    parts: tuple[RotatingPart, ...] = ()

    def part(self, part_id: int) -> RotatingPart:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise UnknownPartId(part_id)


# ---------------------------------------------------------------------------
# kinematics


def _part_offset(part: RotatingPart, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotated lever arm and its time derivative, body frame."""
    axis = np.asarray(part.axis, float)
    omega = 2.0 * math.pi * part.rate
    arm = rodrigues(np.asarray(part.lever_arm, float), axis, omega * t + part.phase)
    return arm, _cross(omega * axis, arm)


def center_kinematics(c: ScatteringCenter, m: MotionState, t: float) -> tuple[np.ndarray, np.ndarray]:
    """World position and velocity of a scattering center at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    rot = rot_z(m.heading)
    local = np.asarray(c.local_position, float)
    local_vel = np.zeros(3)
    if c.part_id is not None:
        arm, arm_vel = _part_offset(m.part(c.part_id), t)
        local = local + arm
        local_vel = arm_vel
    vel = np.asarray(m.velocity, float)
    pos = np.asarray(m.position, float) + vel * t + rot @ local
    return pos, vel + rot @ local_vel


def center_position(c: ScatteringCenter, m: MotionState, t: float) -> np.ndarray:
    return center_kinematics(c, m, t)[0]


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between vectors along the last axis (atan2 form, accurate near 0 and pi)."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    cx = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    cy = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    cz = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return np.arctan2(np.sqrt(cx * cx + cy * cy + cz * cz), np.sum(a * b, axis=-1))


def asc_gain(c: ScatteringCenter, f: float, f_c: float, view_dir, body_rotation=0.0) -> float:
    """Real gain envelope of one center seen along ``view_dir`` (world frame).

    ``body_rotation`` is the body-to-world rotation, either a heading angle
    about z or a 3x3 matrix.
    """
    if f <= 0 or f_c <= 0:
        raise ValueError("frequencies must be positive")
    v = np.asarray(view_dir, float)
    v = v / np.linalg.norm(v)
    aspect = _as_rotation(body_rotation) @ np.asarray(c.aspect_center, float)
    ang = float(angle_between(v, aspect))
    return c.amplitude * (f / f_c) ** c.alpha * math.exp(-ang * ang / (2.0 * c.aspect_width ** 2))


def kinematics(mcs: McsSet, motion: MotionState, t: float) -> tuple[np.ndarray, np.ndarray]:
    """World positions and velocities of all centers of ``mcs``, each shaped (n, 3)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    a = mcs.arrays
    local = a["position"].copy()
    local_vel = np.zeros_like(local)
    for pid in np.unique(a["part"][a["part"] >= 0]):
        arm, arm_vel = _part_offset(motion.part(int(pid)), t)
        sel = a["part"] == pid
        local[sel] += arm
        local_vel[sel] = arm_vel
    rot = rot_z(motion.heading)
    vel = np.asarray(motion.velocity, float)
    return np.asarray(motion.position, float) + vel * t + local @ rot.T, vel + local_vel @ rot.T


def aspect_gains(mcs: McsSet, view_dirs: np.ndarray, heading: float, idx=None) -> np.ndarray:
    """Gain at f = f_c of centers ``idx`` (default all) along world-frame ``view_dirs`` (n, 3)."""
    a = mcs.arrays
    sel = slice(None) if idx is None else idx
    aspect = a["aspect"][sel] @ rot_z(heading).T
    v = view_dirs / np.linalg.norm(view_dirs, axis=-1, keepdims=True)
    ang = angle_between(v, aspect)
    return a["amplitude"][sel] * np.exp(-ang ** 2 / (2.0 * a["width"][sel] ** 2))


def _bisector(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise bisector of unit vectors ``u`` and ``w``; forward scatter falls back to ``u``."""
    b = u + w
    n = np.linalg.norm(b, axis=-1, keepdims=True)
    return np.where(n > 1e-12, b / np.where(n > 1e-12, n, 1.0), u)


def target_paths(mcs: McsSet, motion: MotionState, tx, rx, f_c: float, t: float,
                 source: tuple = ()) -> list[PropagationPath]:
    """One direct path per scattering center, with analytic Doppler."""
    tx = np.asarray(tx, float)
    rx = np.asarray(rx, float)
    P, V = kinematics(mcs, motion, t)
    to_tx, to_rx = tx - P, rx - P
    d_tx = np.linalg.norm(to_tx, axis=1)
    d_rx = np.linalg.norm(to_rx, axis=1)
    bad = np.flatnonzero((d_tx == 0.0) | (d_rx == 0.0))
    if bad.size:
        raise DegenerateGeometry(f"center {int(bad[0])} coincides with a terminal")
    u_tx, u_rx = to_tx / d_tx[:, None], to_rx / d_rx[:, None]
    amp = aspect_gains(mcs, _bisector(u_tx, u_rx), motion.heading) * spreading_factor(2, f_c) / (d_tx * d_rx)
    # d/dt (|tx - p| + |p - rx|) = -(u_tx + u_rx) . v
    doppler = (f_c / SPEED_OF_LIGHT) * np.sum((u_tx + u_rx) * V, axis=1)
    delay = (d_tx + d_rx) / SPEED_OF_LIGHT
    aod_az, aod_el = direction_angles_many(tx, P)
    aoa_az, aoa_el = direction_angles_many(rx, P)
    txt, rxt = tuple(tx.tolist()), tuple(rx.tolist())
    return [
        PropagationPath(
            kind=PathKind.TARGET_DIRECT,
            delay=float(delay[i]),
            amplitude=complex(amp[i]),
            doppler=float(doppler[i]) + 0.0,
            aod_az=float(aod_az[i]), aod_el=float(aod_el[i]), aoa_az=float(aoa_az[i]), aoa_el=float(aoa_el[i]),
            alpha=c.alpha,
            source=(*source, i),
            vertices=(txt, tuple(P[i].tolist()), rxt),
        )
        for i, c in enumerate(mcs.centers)
    ]


# ---------------------------------------------------------------------------
# synthetic library


@dataclass(frozen=True)
class ClassPrior:
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    hubs: tuple[tuple[float, float, float], ...]
    part_axis: tuple[float, float, float]
    lever_arm: tuple[float, float, float]
    rate_range: tuple[float, float]  # Hz
    amplitude_scale: float
    components: tuple[str, int] = field(default=("wheel", 4))


# Synthetic priors standing in for full-wave data; not measured values.
CLASS_PRIORS = {
    "vehicle": ClassPrior(
        box_min=(-2.25, -0.9, 0.0), box_max=(2.25, 0.9, 1.5),
        hubs=((1.4, 0.8, 0.35), (1.4, -0.8, 0.35), (-1.4, 0.8, 0.35), (-1.4, -0.8, 0.35)),
        part_axis=(0.0, 1.0, 0.0), lever_arm=(0.0, 0.0, 0.28),
        rate_range=(0.0, 15.0), amplitude_scale=1.0, components=("wheel", 4),
    ),
    "uav": ClassPrior(
        box_min=(-0.2, -0.2, -0.05), box_max=(0.2, 0.2, 0.1),
        hubs=((0.13, 0.13, 0.07), (0.13, -0.13, 0.07), (-0.13, 0.13, 0.07), (-0.13, -0.13, 0.07)),
        part_axis=(0.0, 0.0, 1.0), lever_arm=(0.06, 0.0, 0.0),
        rate_range=(30.0, 90.0), amplitude_scale=0.15, components=("rotor", 4),
    ),
}


def class_prior(cls: str) -> ClassPrior:
    try:
        return CLASS_PRIORS[cls]
    except KeyError:
        raise UnsupportedClass(cls) from None


def default_motion(cls: str, position=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0), heading=0.0,
                   rates: Sequence[float] | None = None, phases: Sequence[float] | None = None) -> MotionState:
    """Motion state with the class's rotating parts. Rates default to the middle of the prior range."""
    prior = class_prior(cls)
    n = len(prior.hubs)
    rates = [0.5 * sum(prior.rate_range)] * n if rates is None else list(rates)
    phases = [0.0] * n if phases is None else list(phases)
    parts = tuple(RotatingPart(i, prior.part_axis, float(rates[i]), float(phases[i]), prior.lever_arm)
                  for i in range(n))
    return MotionState(tuple(map(float, position)), tuple(map(float, velocity)), float(heading), parts)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * np.arange(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def synth_library(cls: str, n_views: int, seed: int, n_centers: int = N_CENTERS,
                  pool_factor: int = 3) -> list[McsSet]:
    """Synthetic multi-view scattering-center library for one target class.

    A pool of candidate scatterers is drawn once from the class prior. For every
    view on a Fibonacci lattice the ``n_centers`` brightest visible candidates
    are kept, with attributes perturbed by a field that is linear in the view
    direction, so neighbouring views carry similar sets.
    """
    prior = class_prior(cls)
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, list(CLASS_PRIORS).index(cls)]))
    lo, hi = np.array(prior.box_min), np.array(prior.box_max)
    extent = hi - lo
    n_pool = pool_factor * n_centers

    # two candidates per rotating part, the rest on the body
    n_parts = len(prior.hubs)
    part_ids = np.full(n_pool, -1)
    part_ids[: 2 * n_parts] = np.repeat(np.arange(n_parts), 2)
    pos = lo + rng.uniform(size=(n_pool, 3)) * extent
    arm = np.linalg.norm(prior.lever_arm)
    hubs = np.asarray(prior.hubs)
    for k in range(2 * n_parts):
        jitter = rng.uniform(-0.25, 0.25, size=3) * (extent * 0.05)
        pos[k] = np.clip(hubs[part_ids[k]] + jitter, lo + arm, hi - arm)
    amp = prior.amplitude_scale * np.exp(rng.normal(0.0, 0.6, size=n_pool))
    alpha = rng.choice(ALPHA_VALUES, size=n_pool, p=(0.1, 0.2, 0.4, 0.2, 0.1))
    aspect = _unit(rng.normal(size=(n_pool, 3)))
    width = rng.uniform(0.5, 1.2, size=n_pool)
    # view-linear perturbation coefficients
    pos_coef = rng.normal(size=(n_pool, 3, 3)) * (0.015 * extent)[None, :, None]
    amp_coef = rng.normal(size=(n_pool, 3)) * 0.1

    views = fibonacci_sphere(n_views)
    out = []
    for v in views:
        ang = angle_between(v[None, :], aspect)
        visible = amp * np.exp(-ang ** 2 / (2.0 * width ** 2))
        pick = np.sort(np.argsort(-visible, kind="stable")[:n_centers])
        centers = []
        for m in pick:
            p = pos[m] + pos_coef[m] @ v
            if part_ids[m] >= 0:
                p = np.clip(p, lo + arm, hi - arm)
            else:
                p = np.clip(p, lo, hi)
            centers.append(ScatteringCenter(
                local_position=tuple(float(x) for x in p),
                amplitude=float(amp[m] * math.exp(float(amp_coef[m] @ v))),
                alpha=float(alpha[m]),
                aspect_center=tuple(float(x) for x in aspect[m]),
                aspect_width=float(width[m]),
                part_id=None if part_ids[m] < 0 else int(part_ids[m]),
            ))
        out.append(McsSet(cls, tuple(float(x) for x in v), tuple(centers)))
    return out


def write_library(library: Iterable[McsSet], path) -> None:
    """One JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for mcs in library:
            fh.write(json.dumps(mcs.to_record(), sort_keys=True) + "\n")


def read_library(path) -> list[McsSet]:
    with open(path, encoding="utf-8") as fh:
        return [McsSet.from_record(json.loads(line)) for line in fh if line.strip()]
