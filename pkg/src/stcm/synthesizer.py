"""Physics-grounded channel synthesis: path assembly and CFR/CIR rendering.

Rendering convention, per path p, receive element r, transmit element s and
subcarrier k on the inclusive grid ``f_k = f_c - B/2 + k*B/(K-1)``::

    H[r, s, k] = sum_p amp_p * (f_k/f_c)**alpha_p * exp(-2j*pi*f_k*tau_p)
                 * exp(2j*pi*fD_p*t) * a_rx(aoa_p)[r] * a_tx(aod_p)[s]

with ULA steering ``a(theta)[n] = exp(2j*pi*spacing*n*sin(theta_az))``.
The delay-domain response is the unitary inverse DFT of each CFR row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .clutter import ClutterParams, clutter_paths, params_for_scenario, sample_clusters
from .constants import DEFAULT_CARRIER, SPEED_OF_LIGHT
from .generator import ParameterVector, decode
from .interaction import (DEFAULT_MB_LOSS_DB, DEFAULT_MB_PAIRS, apply_visibility, multibounce_paths,
                          occluders_from_scene, scatterer_table)
from .paths import PathKind, PropagationPath, direction_angles, spreading
from .semantics import SemanticScene, observed_aspect
from .target import McsSet, MotionState, RotatingPart, class_prior, synth_library, target_paths

__all__ = [
    "ArraySpec", "SimConfig", "SceneRealization", "ChannelSnapshot", "PropagationPath", "PathKind",
    "spreading", "los_path", "assemble", "frequency_grid", "steering", "render_cfr", "cir_from_cfr",
    "realize", "simulate", "write_snapshots", "read_snapshots", "write_path_table",
]

FILE_MAGIC = b"STCM1"
PRIOR_LIBRARY_VIEWS = 256


@dataclass(frozen=True)
class ArraySpec:
    n_elements: int = 1  # 1 means SISO
    spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("n_elements must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    f_c: float = DEFAULT_CARRIER
    bandwidth: float = 400e6
    n_subcarriers: int = 256
    dt: float = 1e-3
    n_snapshots: int = 1
    tx: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rx: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tx_array: ArraySpec = ArraySpec()
    rx_array: ArraySpec = ArraySpec()
    noise_power: float = 0.0
    seed: int = 0
    mb_pairs: int = DEFAULT_MB_PAIRS
    mb_loss_db: float = DEFAULT_MB_LOSS_DB
    include_clutter: bool = True
    include_multibounce: bool = True
    clutter_overrides: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not 0 < self.bandwidth < 2 * self.f_c:
            raise ValueError("bandwidth must lie in (0, 2*f_c)")
        if self.n_subcarriers < 2:
            raise ValueError("n_subcarriers must be >= 2")
        if self.n_snapshots < 1:
            raise ValueError("n_snapshots must be >= 1")
        if self.noise_power < 0:
            raise ValueError("noise_power must be >= 0")

    @property
    def monostatic(self) -> bool:
        return tuple(self.tx) == tuple(self.rx)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.rx_array.n_elements, self.tx_array.n_elements, self.n_subcarriers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clutter_overrides"] = dict(self.clutter_overrides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for key in ("tx_array", "rx_array"):
            if key in d and isinstance(d[key], dict):
                d[key] = ArraySpec(**d[key])
        for key in ("tx", "rx"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        if "clutter_overrides" in d:
            d["clutter_overrides"] = tuple(sorted(dict(d["clutter_overrides"]).items()))
        return cls(**d)

    def config_hash(self) -> str:
        return _config_hash(self)


@lru_cache(maxsize=64)
def _config_hash(cfg: SimConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class SceneRealization:
    """Concrete geometry for one scene: targets, clutter clusters and occluders."""
    targets: tuple[tuple[McsSet, MotionState], ...] = ()
    clusters: tuple = ()
    occluders: tuple = ()
    clutter_seed: int = 0
    mb_pairs: int = DEFAULT_MB_PAIRS
    mb_loss_db: float = DEFAULT_MB_LOSS_DB
    # time-invariant pieces (LoS, clutter, scatterer table, their CFR) keyed by the geometry they depend on
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def cached(self, key, build):
        try:
            return self._cache[key]
        except KeyError:
            return self._cache.setdefault(key, build())


@dataclass
class ChannelSnapshot:
    time: float
    paths: list[PropagationPath]
    cfr: np.ndarray  # (n_rx, n_tx, K) complex
    metadata: dict = field(default_factory=dict)


def los_path(tx, rx, f_c: float) -> PropagationPath | None:
    """Direct tx-rx path; ``None`` in monostatic geometry."""
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    d = float(np.linalg.norm(rx - tx))
    if d == 0.0:
        return None
    aod = direction_angles(tx, rx)
    aoa = direction_angles(rx, tx)
    return PropagationPath(PathKind.LOS, d / SPEED_OF_LIGHT, complex(spreading((d,), f_c)),
                           0.0, aod[0], aod[1], aoa[0], aoa[1],
                           vertices=(tuple(tx), tuple(rx)))


def _static_paths(real: SceneRealization, cfg: SimConfig) -> list[PropagationPath]:
    """LoS and clutter paths after visibility; they do not change with time."""
    paths = []
    los = los_path(cfg.tx, cfg.rx, cfg.f_c)
    if los is not None:
        paths.append(los)
    if real.clusters:
        paths.extend(clutter_paths(real.clusters, cfg.tx, cfg.rx, cfg.f_c, real.clutter_seed))
    return apply_visibility(paths, real.occluders)


def _geometry_key(cfg: SimConfig) -> tuple:
    return (tuple(cfg.tx), tuple(cfg.rx), cfg.f_c)


def _split(real: SceneRealization, cfg: SimConfig, t: float):
    static = real.cached(("static",) + _geometry_key(cfg), lambda: _static_paths(real, cfg))
    dynamic = []
    for i, (mcs, motion) in enumerate(real.targets):
        dynamic.extend(target_paths(mcs, motion, cfg.tx, cfg.rx, cfg.f_c, t, source=(i,)))
    if real.clusters and real.mb_pairs > 0:
        table = real.cached(("table",) + _geometry_key(cfg),
                            lambda: scatterer_table(real.clusters, cfg.tx, cfg.rx, cfg.f_c))
        dynamic.extend(multibounce_paths(real.targets, real.clusters, cfg.tx, cfg.rx, cfg.f_c, t,
                                         real.mb_pairs, real.mb_loss_db, table=table))
    return static, apply_visibility(dynamic, real.occluders)


def assemble(real: SceneRealization, cfg: SimConfig, t: float) -> list[PropagationPath]:
    """All path classes after visibility, sorted by delay."""
    static, dynamic = _split(real, cfg, t)
    return sorted(static + dynamic, key=lambda p: p.delay)


def frequency_grid(cfg: SimConfig) -> np.ndarray:
    return cfg.f_c - cfg.bandwidth / 2 + np.arange(cfg.n_subcarriers) * cfg.bandwidth / (cfg.n_subcarriers - 1)


def steering(array: ArraySpec, az) -> np.ndarray:
    """ULA response, shape (n_elements, len(az))."""
    az = np.atleast_1d(np.asarray(az, float))
    n = np.arange(array.n_elements)[:, None]
    return np.exp(2j * math.pi * array.spacing * n * np.sin(az)[None, :])


def render_cfr(paths, cfg: SimConfig, t: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """CFR tensor (n_rx, n_tx, K). Noise is added only when ``rng`` is given and noise_power > 0."""
    n_rx, n_tx, K = cfg.shape
    H = np.zeros((n_rx, n_tx, K), dtype=complex)
    if paths:
        f = frequency_grid(cfg)
        amp = np.array([p.amplitude for p in paths], dtype=complex)
        tau = np.array([p.delay for p in paths])
        fd = np.array([p.doppler for p in paths])
        alpha = np.array([p.alpha for p in paths])
        rel = f / cfg.f_c
        terms = (amp * np.exp(2j * math.pi * fd * t))[:, None] * np.exp(-2j * math.pi * np.outer(tau, f))
        if np.any(alpha != 0.0):
            terms = terms * rel[None, :] ** alpha[:, None]
        a_rx = steering(cfg.rx_array, [p.aoa_az for p in paths])
        a_tx = steering(cfg.tx_array, [p.aod_az for p in paths])
        if n_rx == 1 and n_tx == 1:
            H[0, 0] = terms.sum(axis=0)
        else:
            H = np.einsum("rp,sp,pk->rsk", a_rx, a_tx, terms)
    if rng is not None and cfg.noise_power > 0:
        scale = math.sqrt(cfg.noise_power / 2.0)
        H = H + scale * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
    return H


def cir_from_cfr(cfr_row: np.ndarray, K: int | None = None) -> np.ndarray:
    """Unitary inverse DFT along the last axis (energy preserving)."""
    cfr_row = np.asarray(cfr_row)
    if K is not None and cfr_row.shape[-1] != K:
        raise ValueError(f"expected {K} subcarriers, got {cfr_row.shape[-1]}")
    return np.fft.ifft(cfr_row, axis=-1, norm="ortho")


# ---------------------------------------------------------------------------
# scene instantiation


@lru_cache(maxsize=16)
def _prior_library(cls: str, seed: int) -> tuple[McsSet, ...]:
    return tuple(synth_library(cls, PRIOR_LIBRARY_VIEWS, seed))


def nearest_view(library, view) -> McsSet:
    views = np.array([m.view_dir for m in library])
    return library[int(np.argmax(views @ np.asarray(view, float)))]


def _motion(cls: str, spec, speed: float | None, heading: float, rates) -> MotionState:
    prior = class_prior(cls)
    vel = np.asarray(spec.velocity, float)
    if speed is not None:
        norm = np.linalg.norm(vel)
        direction = vel / norm if norm > 0 else np.array([math.cos(heading), math.sin(heading), 0.0])
        vel = direction * speed
    parts = tuple(RotatingPart(i, prior.part_axis, float(rates[i]), 0.0, prior.lever_arm)
                  for i in range(len(prior.hubs)))
    return MotionState(tuple(spec.position), tuple(float(x) for x in vel), float(heading), parts)


def _scene_rates(cls: str, spec) -> list[float]:
    """Per-part rates from the scene's components, falling back to the class prior midpoint."""
    prior = class_prior(cls)
    n = len(prior.hubs)
    rates = [c.rate_hz for c in spec.components for _ in range(c.count)
             if c.part in ("wheel", "rotor")]
    default = 0.5 * sum(prior.rate_range)
    return (rates + [default] * n)[:n]


def realize(scene: SemanticScene, theta: ParameterVector | None, cfg: SimConfig) -> SceneRealization:
    """Instantiate targets, clutter and occluders.

    With ``theta`` the first target takes the decoded target and motion blocks
    and the clutter and interaction blocks apply scene-wide. Without it every
    target uses the prior library entry nearest its observed aspect and clutter
    follows the scenario table.
    """
    decoded = decode(theta) if theta is not None else None
    targets = []
    for i, spec in enumerate(scene.targets):
        if decoded is not None and i == 0:
            mcs = decoded.mcs(spec.cls, tuple(observed_aspect(spec)))
            motion = _motion(spec.cls, spec, decoded.speed, spec.heading + decoded.heading_offset, decoded.rates)
        else:
            mcs = nearest_view(_prior_library(spec.cls, cfg.seed), observed_aspect(spec))
            motion = _motion(spec.cls, spec, None, spec.heading, _scene_rates(spec.cls, spec))
        targets.append((mcs, motion))

    overrides = dict(cfg.clutter_overrides)
    if decoded is not None:
        cp = decoded.clutter
        rays = params_for_scenario(scene.scenario_class).rays_per_cluster
        cp = ClutterParams(**{**asdict(cp), "rays_per_cluster": rays})
        cp = cp.with_overrides(**overrides) if overrides else cp
        mb_pairs, mb_loss = decoded.mb_pairs, decoded.mb_loss_db
    else:
        cp = params_for_scenario(scene.scenario_class, **overrides)
        mb_pairs, mb_loss = cfg.mb_pairs, cfg.mb_loss_db
    if not cfg.include_multibounce:
        mb_pairs = 0
    clutter_seed = int(np.random.SeedSequence([cfg.seed, 11]).generate_state(1)[0])
    clusters = tuple(sample_clusters(cp, cfg.tx, cfg.rx, clutter_seed)) if cfg.include_clutter else ()
    return SceneRealization(tuple(targets), clusters, tuple(occluders_from_scene(scene)),
                            clutter_seed, mb_pairs, mb_loss)


def render_snapshot(real: SceneRealization, cfg: SimConfig, index: int) -> ChannelSnapshot:
    t = index * cfg.dt
    static, dynamic = _split(real, cfg, t)
    # static paths carry no Doppler, so their CFR is rendered once per realization and config
    h_static = real.cached(("cfr", cfg.config_hash()), lambda: render_cfr(static, cfg, 0.0))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, index]))
    cfr = h_static + render_cfr(dynamic, cfg, t, rng)
    paths = sorted(static + dynamic, key=lambda p: p.delay)
    return ChannelSnapshot(t, paths, cfr, {"seed": cfg.seed, "index": index, "config_hash": cfg.config_hash()})


def simulate(scene: SemanticScene, theta: ParameterVector | None, cfg: SimConfig,
             threads: int = 1) -> list[ChannelSnapshot]:
    """Render ``cfg.n_snapshots`` snapshots at ``t = n*dt``.

    Per-snapshot noise streams are keyed by (seed, snapshot index), so the
    result does not depend on ``threads``.
    """
    real = realize(scene, theta, cfg)
    idx = range(cfg.n_snapshots)
    if threads <= 1:
        return [render_snapshot(real, cfg, i) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: render_snapshot(real, cfg, i), idx))


# ---------------------------------------------------------------------------
# file formats

_HEADER = struct.Struct("<5s16sIIII")  # magic, config hash, K, n_rx, n_tx, n_snapshots


def write_snapshots(snapshots, cfg: SimConfig, path) -> None:
    """Binary CFR file: little-endian header then complex64 data, snapshot-major, rx-major."""
    n_rx, n_tx, K = cfg.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FILE_MAGIC, cfg.config_hash().encode("ascii"), K, n_rx, n_tx, len(snapshots)))
        for snap in snapshots:
            fh.write(np.ascontiguousarray(snap.cfr, dtype="<c8").tobytes())


def read_snapshots(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, h, K, n_rx, n_tx, n_snap = _HEADER.unpack_from(raw)
    if magic != FILE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if data.size != n_snap * n_rx * n_tx * K:
        raise ValueError(f"{path}: payload size does not match header")
    header = {"config_hash": h.decode("ascii"), "K": K, "n_rx": n_rx, "n_tx": n_tx, "n_snapshots": n_snap}
    return header, data.reshape(n_snap, n_rx, n_tx, K)


def write_path_table(snapshots, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["snapshot", "time", "kind", "delay", "amp_re", "amp_im", "doppler",
                    "aod_az", "aod_el", "aoa_az", "aoa_el", "source"])
        for i, snap in enumerate(snapshots):
            for p in snap.paths:
                w.writerow([i, repr(snap.time), p.kind.value, repr(p.delay), repr(p.amplitude.real),
                            repr(p.amplitude.imag), repr(p.doppler), repr(p.aod_az), repr(p.aod_el),
                            repr(p.aoa_az), repr(p.aoa_el), "/".join(map(str, p.source))])


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
