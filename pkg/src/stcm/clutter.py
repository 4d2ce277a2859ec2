"""Geometry-based stochastic clutter.

Cluster delays, powers and arrival angles follow the usual 3GPP chain
(exponential delays scaled by ``r_tau``, exponential power decay with
log-normal shadowing, wrapped-normal angles). Every ray is then pinned to an
explicit scatterer on the single-bounce delay ellipsoid with foci tx and rx so
that occlusion and multi-bounce have concrete geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np

from .constants import SPEED_OF_LIGHT
from .errors import NoIntersection
from .paths import PathKind, PropagationPath, direction_angles, spreading

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

MAX_PLACEMENT_ATTEMPTS = 100
MIN_PLACEMENT_EXCESS = 0.05  # fraction of sigma_tau


@dataclass(frozen=True)
class ClutterParams:
    n_clusters: int = 8
    r_tau: float = 2.3
    sigma_tau: float = 60e-9  # s
    zeta: float = 3.0  # dB
    asa: float = 0.5  # rad
    asd: float = 0.3  # rad
    esa: float = 0.15  # rad
    esd: float = 0.1  # rad
    total_power: float = 1e-10  # linear
    rays_per_cluster: int = 10
    ray_spread: float = 0.05  # rad, intra-cluster angular spread

    def __post_init__(self):
        if self.n_clusters < 0:
            raise ValueError("n_clusters must be >= 0")
        if not self.r_tau > 1:
            raise ValueError("r_tau must exceed 1")
        for name in ("sigma_tau", "asa", "asd", "esa", "esd", "total_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")
        if self.rays_per_cluster < 1:
            raise ValueError("rays_per_cluster must be >= 1")

    def with_overrides(self, **kw) -> "ClutterParams":
        known = {f.name: f.type for f in fields(self)}
        clean = {}
        for k, v in kw.items():
            if k not in known:
                raise KeyError(f"unknown clutter parameter {k!r}")
            clean[k] = int(v) if k in ("n_clusters", "rays_per_cluster") else float(v)
        return replace(self, **clean)


@dataclass(frozen=True)
class ClutterCluster:
    excess_delay: float
    power: float
    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float
    scatterers: tuple[tuple[float, float, float], ...]

    def scatterer_amplitudes(self, tx, rx, f_c: float) -> np.ndarray:
        """Reflectivity per scatterer such that each single-bounce ray carries ``power / n``."""
        tx, rx = np.asarray(tx, float), np.asarray(rx, float)
        per_ray = math.sqrt(self.power / len(self.scatterers))
        return np.array([
            per_ray / spreading((np.linalg.norm(q - tx), np.linalg.norm(q - rx)), f_c)
            for q in np.asarray(self.scatterers, float)
        ])


def scenario_table() -> dict[str, ClutterParams]:
    """Default scenario-class to clutter-parameter table (``data/clutter_defaults.toml``)."""
    text = resources.files("stcm").joinpath("data/clutter_defaults.toml").read_text(encoding="utf-8")
    raw = tomllib.loads(text)
    return {name: ClutterParams().with_overrides(**vals) for name, vals in raw["scenario"].items()}


def params_for_scenario(scenario_class: str, **overrides) -> ClutterParams:
    table = scenario_table()
    base = table.get(scenario_class, table["other"])
    return base.with_overrides(**overrides) if overrides else base


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def raw_cluster_delays(p: ClutterParams, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Unsorted delays ``-r_tau * sigma_tau * ln(u)``, u uniform on (0, 1]."""
    u = 1.0 - rng.uniform(size=p.n_clusters if n is None else n)
    return -p.r_tau * p.sigma_tau * np.log(u)


def place_scatterer(excess_delay: float, aoa_az: float, aoa_el: float, tx, rx) -> np.ndarray:
    """Point on the arrival ray from rx whose bistatic range matches the total delay."""
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    u = np.array([math.cos(aoa_el) * math.cos(aoa_az), math.cos(aoa_el) * math.sin(aoa_az), math.sin(aoa_el)])
    w = rx - tx
    d0 = float(np.linalg.norm(w))
    L = d0 + SPEED_OF_LIGHT * excess_delay
    denom = 2.0 * (L + float(np.dot(w, u)))
    num = L * L - d0 * d0
    if denom <= 1e-12 * max(L, 1.0):
        if num <= 1e-12 * max(L, 1.0) ** 2 and d0 > 0:
            # zero excess along the LoS: every point of the segment qualifies
            return 0.5 * (tx + rx)
        raise NoIntersection("arrival ray does not meet the delay ellipsoid")
    s = num / denom
    if not (0.0 < s <= L):
        raise NoIntersection("arrival ray meets the ellipsoid only at the receiver")
    return rx + s * u


def sample_clusters(p: ClutterParams, tx, rx, seed: int) -> list[ClutterCluster]:
    """Draw clusters and pin ``p.rays_per_cluster`` scatterers per cluster."""
    if p.n_clusters == 0:
        return []
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    tau = np.sort(raw_cluster_delays(p, rng))
    tau -= tau[0]
    shadow = rng.normal(0.0, p.zeta, size=p.n_clusters) if p.zeta > 0 else np.zeros(p.n_clusters)
    power = np.exp(-tau * (p.r_tau - 1.0) / (p.r_tau * p.sigma_tau)) * 10.0 ** (-shadow / 10.0)
    power *= p.total_power / power.sum()

    if np.allclose(tx, rx):
        los_az, los_el = 0.0, 0.0
    else:
        los_az, los_el = direction_angles(rx, tx)
    mean_az = _wrap(los_az + rng.normal(0.0, p.asa, size=p.n_clusters))
    mean_el = np.clip(los_el + rng.normal(0.0, p.esa, size=p.n_clusters), -1.5, 1.5)

    clusters = []
    for n in range(p.n_clusters):
        crng = np.random.default_rng(np.random.SeedSequence([seed, 1, n]))
        # a zero-excess cluster would collapse onto the LoS segment; its rays sit on a thin ellipsoid
        excess = max(float(tau[n]), MIN_PLACEMENT_EXCESS * p.sigma_tau)
        pts = []
        for _ in range(p.rays_per_cluster):
            for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                az = float(_wrap(mean_az[n] + crng.normal(0.0, p.ray_spread)))
                el = float(np.clip(mean_el[n] + crng.normal(0.0, p.ray_spread), -1.5, 1.5))
                try:
                    q = place_scatterer(excess, az, el, tx, rx)
                except NoIntersection:
                    continue
                if np.linalg.norm(q - tx) > 0 and np.linalg.norm(q - rx) > 0:
                    break
            else:
                raise NoIntersection(f"could not place a scatterer for cluster {n}")
            pts.append(tuple(float(x) for x in q))
        centroid = np.mean(pts, axis=0)
        aod = direction_angles(tx, centroid)
        clusters.append(ClutterCluster(float(tau[n]), float(power[n]), float(mean_az[n]), float(mean_el[n]),
                                       aod[0], aod[1], tuple(pts)))
    return clusters


def clutter_paths(clusters, tx, rx, f_c: float, seed: int, rays_per_cluster: int | None = None
                  ) -> list[PropagationPath]:
    """Static single-bounce paths, one per scatterer, power split evenly within a cluster.

    ``rays_per_cluster`` limits how many of each cluster's scatterers are used.
    """
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    out = []
    for n, cl in enumerate(clusters):
        pts = cl.scatterers if rays_per_cluster is None else cl.scatterers[:rays_per_cluster]
        amp = math.sqrt(cl.power / len(pts))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=len(pts))
        for m, q in enumerate(pts):
            q = np.asarray(q)
            d = float(np.linalg.norm(q - tx) + np.linalg.norm(q - rx))
            aod = direction_angles(tx, q)
            aoa = direction_angles(rx, q)
            out.append(PropagationPath(
                kind=PathKind.CLUTTER,
                delay=d / SPEED_OF_LIGHT,
                amplitude=amp * complex(math.cos(phases[m]), math.sin(phases[m])),
                doppler=0.0,
                aod_az=aod[0], aod_el=aod[1], aoa_az=aoa[0], aoa_el=aoa[1],
                source=(n, m),
                vertices=(tuple(tx), tuple(q), tuple(rx)),
            ))
    return out
