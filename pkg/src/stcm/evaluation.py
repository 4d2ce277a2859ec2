"""Identification benchmark on the synthetic scattering-center library.

Every observation places one target so that the monostatic station at the
origin sees it from a given body-frame aspect. Three channel sources are
compared under the same geometry:

* reference: the library entry for that aspect, rendered directly;
* model: parameters from the conditional generator, conditioned on the scene code;
* baseline: parameters from independent per-dimension marginals.

Each channel gets AWGN at a fixed SNR, centers are extracted by matching
pursuit, and the TMS is the best score against the whole library.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import generator as gen
from .clutter import params_for_scenario
from .constants import SPEED_OF_LIGHT
from .fidelity import (Geometry, calibrate_threshold, collaborative_pvalues, exceedance, extract_centers,
                       identify)
from .semantics import encode_scene, validate_scene
from .synthesizer import ArraySpec, SimConfig, realize, render_cfr, assemble
from .target import CLASS_PRIORS, McsSet, default_motion, synth_library


@dataclass(frozen=True)
class BenchmarkConfig:
    classes: tuple[str, ...] = ("vehicle", "uav")
    n_views: int = 200
    seed: int = 7
    range_m: float = 40.0
    f_c: float = 10e9
    bandwidth: float = 4e9
    n_subcarriers: int = 256
    n_rx: int = 8
    snr_db: float = 30.0
    k_extract: int = 10
    k_neighbours: int = gen.DEFAULT_K
    jitter: float = gen.DEFAULT_JITTER
    window_halfwidth: float = 20e-9  # s, around the target's centre delay
    reference_quantile: float = 0.95

    def sim_config(self) -> SimConfig:
        return SimConfig(f_c=self.f_c, bandwidth=self.bandwidth, n_subcarriers=self.n_subcarriers,
                         rx_array=ArraySpec(self.n_rx, 0.5), include_clutter=False,
                         include_multibounce=False, seed=self.seed)


def observation_pose(view, range_m: float) -> tuple[tuple[float, float, float], float]:
    """Target position and heading such that the station at the origin sees body-frame aspect ``view``.

    The target is placed in the x-z half-plane (broadside of a y-axis ULA).
    """
    v = np.asarray(view, float)
    v = v / np.linalg.norm(v)
    horiz = math.sqrt(max(0.0, 1.0 - v[2] ** 2))
    position = (range_m * horiz, 0.0, -range_m * v[2])
    heading = math.pi - math.atan2(v[1], v[0]) if horiz > 1e-12 else 0.0
    return position, heading


def observation_scene(cls: str, view, range_m: float, scene_id: str = "obs"):
    position, heading = observation_pose(view, range_m)
    prior = CLASS_PRIORS[cls]
    part, count = prior.components
    return validate_scene({
        "scene_id": scene_id,
        "scenario_class": "open_field",
        "targets": [{
            "id": "t0", "class": cls, "position": list(position), "heading": heading,
            "components": [{"part": part, "count": count, "rate_hz": 0.5 * sum(prior.rate_range)}],
        }],
    })


def theta_for(mcs: McsSet) -> gen.ParameterVector:
    prior = CLASS_PRIORS[mcs.cls]
    rates = [0.5 * sum(prior.rate_range)] * gen.N_PARTS
    return gen.encode_theta(mcs, rates=rates, clutter=params_for_scenario("open_field"))


@dataclass
class Observation:
    cls: str
    view: tuple[float, float, float]
    scene: object
    geometry: Geometry
    window: tuple[float, float]


class Benchmark:
    """Library, train/test split, fitted models and the per-observation pipeline."""

    def __init__(self, cfg: BenchmarkConfig = BenchmarkConfig()):
        self.cfg = cfg
        self.sim = cfg.sim_config()
        self.library: list[McsSet] = []
        for cls in cfg.classes:
            self.library.extend(synth_library(cls, cfg.n_views, cfg.seed))
        # interleaved split: even lattice indices train the generator, odd ones are held out
        self.train_idx = [i for i in range(len(self.library)) if i % 2 == 0]
        self.test_idx = [i for i in range(len(self.library)) if i % 2 == 1]
        pairs = {cls: [] for cls in cfg.classes}
        for i in self.train_idx:
            m = self.library[i]
            scene = observation_scene(m.cls, m.view_dir, cfg.range_m)
            pairs[m.cls].append((encode_scene(scene), theta_for(m)))
        all_pairs = [p for cls in cfg.classes for p in pairs[cls]]
        self.model = gen.fit(all_pairs, cfg.k_neighbours, cfg.jitter)
        self.baselines = {cls: gen.fit_baseline(pairs[cls]) for cls in cfg.classes}

    def observation(self, cls: str, view) -> Observation:
        scene = observation_scene(cls, view, self.cfg.range_m)
        spec = scene.targets[0]
        motion = default_motion(cls, spec.position, (0.0, 0.0, 0.0), spec.heading)
        geometry = Geometry.from_config(self.sim, motion)
        centre = 2.0 * self.cfg.range_m / SPEED_OF_LIGHT
        hw = self.cfg.window_halfwidth
        return Observation(cls, tuple(view), scene, geometry, (centre - hw, centre + hw))

    def channel(self, obs: Observation, theta: gen.ParameterVector, noise_seed) -> np.ndarray:
        real = realize(obs.scene, theta, self.sim)
        clean = render_cfr(assemble(real, self.sim, 0.0), self.sim, 0.0)
        rng = np.random.default_rng(np.random.SeedSequence(noise_seed))
        p_sig = float(np.mean(np.abs(clean) ** 2))
        scale = math.sqrt(p_sig / 10.0 ** (self.cfg.snr_db / 10.0) / 2.0)
        return clean + scale * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))

    def score(self, obs: Observation, cfr: np.ndarray) -> float:
        est = extract_centers(cfr, self.sim, self.cfg.k_extract, delay_window=obs.window)
        return identify(est, self.library, obs.geometry)[1]

    def thetas(self, obs: Observation, source: str, seed) -> gen.ParameterVector:
        if source == "model":
            return gen.generate(self.model, encode_scene(obs.scene), seed, 1)[0]
        if source == "baseline":
            return gen.generate(self.baselines[obs.cls], encode_scene(obs.scene), seed, 1)[0]
        raise ValueError(source)

    def observe(self, lib_index: int, source: str, tag: int = 0) -> float:
        """TMS of one observation of held-out entry ``lib_index`` from ``source``."""
        m = self.library[lib_index]
        obs = self.observation(m.cls, m.view_dir)
        key = ("reference", "model", "baseline").index(source)
        seed = int(np.random.SeedSequence([self.cfg.seed, lib_index, key, tag]).generate_state(1)[0])
        theta = theta_for(m) if source == "reference" else self.thetas(obs, source, seed)
        return self.score(obs, self.channel(obs, theta, [self.cfg.seed, 99, lib_index, key, tag]))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class SingleObservationResult:
    reference: np.ndarray
    model: np.ndarray
    baseline: np.ndarray
    classes: np.ndarray
    threshold: float

    @property
    def model_exceedance(self) -> float:
        return exceedance(self.model, self.threshold)

    @property
    def baseline_exceedance(self) -> float:
        return exceedance(self.baseline, self.threshold)

    @property
    def reference_exceedance(self) -> float:
        return exceedance(self.reference, self.threshold)

    def per_class(self) -> dict[str, dict[str, float]]:
        out = {}
        for cls in np.unique(self.classes):
            sel = self.classes == cls
            out[str(cls)] = {src: exceedance(getattr(self, src)[sel], self.threshold)
                             for src in ("reference", "model", "baseline")}
        return out


def single_observation(bench: Benchmark, threads: int = 1) -> SingleObservationResult:
    idx = bench.test_idx
    scores = {src: np.array(_map(lambda i, s=src: bench.observe(i, s), idx, threads))
              for src in ("reference", "model", "baseline")}
    thr = calibrate_threshold(scores["reference"], bench.cfg.reference_quantile)
    classes = np.array([bench.library[i].cls for i in idx])
    return SingleObservationResult(scores["reference"], scores["model"], scores["baseline"], classes, thr)


@dataclass
class CollaborativeResult:
    model_pvalues: np.ndarray
    baseline_pvalues: np.ndarray
    model_scores: np.ndarray
    baseline_scores: np.ndarray
    reference_scores: np.ndarray

    def fraction_above(self, alpha: float = 0.05) -> float:
        return float(np.mean(self.model_pvalues > alpha))


def collaborative(bench: Benchmark, n_instances: int = 100, n_stations: int = 10,
                  threads: int = 1) -> CollaborativeResult:
    """Each instance is a random class observed from ``n_stations`` distinct held-out aspects."""
    rng = np.random.default_rng(np.random.SeedSequence([bench.cfg.seed, 0xC0]))
    by_class = {cls: [i for i in bench.test_idx if bench.library[i].cls == cls] for cls in bench.cfg.classes}
    plan = []
    for n in range(n_instances):
        cls = bench.cfg.classes[n % len(bench.cfg.classes)]
        plan.append(rng.choice(by_class[cls], size=n_stations, replace=False))
    jobs = [(n, int(i)) for n, row in enumerate(plan) for i in row]
    scores = {}
    for src in ("reference", "model", "baseline"):
        vals = _map(lambda job, s=src: bench.observe(job[1], s, tag=1 + job[0]), jobs, threads)
        scores[src] = np.array(vals).reshape(n_instances, n_stations)
    return CollaborativeResult(
        collaborative_pvalues(scores["model"], scores["reference"]),
        collaborative_pvalues(scores["baseline"], scores["reference"]),
        scores["model"], scores["baseline"], scores["reference"],
    )


def with_overrides(cfg: BenchmarkConfig, **kw) -> BenchmarkConfig:
    return replace(cfg, **kw)
