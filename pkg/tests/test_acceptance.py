"""Acceptance criteria, each run at its stated tolerance.

Every test appends one ``CRITERION n [PASS|FAIL] ...`` line to ``RESULTS``;
the session summary prints them (see conftest). Criterion 7 is soft: its
line is printed but it never fails the suite.
"""

import math
import time

import numpy as np
import pytest

from oracles import doppler_fd, transport_lp
from stcm.clutter import clutter_paths, params_for_scenario
from stcm.constants import SPEED_OF_LIGHT
from stcm.evaluation import Benchmark, BenchmarkConfig, collaborative, single_observation
from stcm.fidelity import extract_centers, ks_two_sample, wasserstein_1d
from stcm.paths import PathKind, PropagationPath
from stcm.semantics import validate_scene
from stcm.synthesizer import SimConfig, cir_from_cfr, realize, render_cfr, render_snapshot

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS.append(f"CRITERION {n} [{'PASS' if ok else 'FAIL'}] {detail}")
    print(RESULTS[-1])
    return ok


@pytest.fixture(scope="module")
def bench():
    return Benchmark(BenchmarkConfig())


@pytest.mark.slow
def test_c1_single_observation(bench):
    t0 = time.perf_counter()
    r = single_observation(bench)
    elapsed = time.perf_counter() - t0
    ok = r.reference_exceedance >= 0.95 and r.model_exceedance >= 0.85 and r.baseline_exceedance <= 0.30
    assert record(1, ok and elapsed < 300,
                  f"single observation: reference {r.reference_exceedance:.3f} (>=0.95), "
                  f"model {r.model_exceedance:.3f} (>=0.85), baseline {r.baseline_exceedance:.3f} (<=0.30), "
                  f"{elapsed:.0f} s (<300)")


@pytest.mark.slow
def test_c2_collaborative(bench):
    c = collaborative(bench, n_instances=100, n_stations=10)
    frac = c.fraction_above(0.05)
    med = float(np.median(c.baseline_pvalues))
    assert record(2, frac >= 0.80 and med < 0.01,
                  f"collaborative: model p>0.05 fraction {frac:.2f} (>=0.80), baseline median p {med:.2e} (<0.01)")


def test_c3_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        a = rng.normal(0, rng.uniform(0.1, 10), rng.integers(1, 9))
        b = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 10), rng.integers(1, 9))
        worst = max(worst, abs(wasserstein_1d(a, b) - transport_lp(a, b)))
    rejections = 0
    for _ in range(10_000):
        x = rng.standard_normal(200)
        rejections += ks_two_sample(x[:100], x[100:])[1] < 0.05
    rate = rejections / 10_000
    assert record(3, worst <= 1e-9 and 0.035 <= rate <= 0.065,
                  f"metric oracles: max |W1 - LP| {worst:.1e} (<=1e-9), K-S false rejection {rate:.4f} "
                  f"(in [0.035, 0.065])")


def _soak_scene(rng, i):
    targets = []
    for j in range(int(rng.integers(1, 4))):
        cls = "vehicle" if rng.random() < 0.5 else "uav"
        pos = [*rng.uniform(-60, 60, 2), 0.0 if cls == "vehicle" else rng.uniform(5, 40)]
        vel = [*rng.uniform(-15, 15, 2), 0.0 if cls == "vehicle" else rng.uniform(-3, 3)]
        part = "wheel" if cls == "vehicle" else "rotor"
        targets.append({"id": f"t{j}", "class": cls, "position": pos, "velocity": vel,
                        "heading": rng.uniform(-math.pi, math.pi),
                        "components": [{"part": part, "count": int(rng.integers(1, 5)),
                                        "rate_hz": rng.uniform(0, 90 if cls == "uav" else 15)}]})
    background = []
    for j in range(int(rng.integers(0, 3))):
        lo = [*rng.uniform(-80, 60, 2), 0.0]
        hi = [lo[0] + rng.uniform(2, 20), lo[1] + rng.uniform(2, 20), rng.uniform(3, 30)]
        background.append({"id": f"b{j}", "kind": "building", "box": {"min": lo, "max": hi}})
    scenario = ["urban_street", "highway", "indoor", "open_field"][i % 4]
    return validate_scene({"scene_id": f"soak{i}", "scenario_class": scenario,
                           "targets": targets, "background": background})


def test_c4_physics_soak():
    """1000 snapshots: 50 random scenes x 20 snapshots, bistatic so a LoS delay is defined."""
    rng = np.random.default_rng(4)
    n_snap = causal = parseval = doppler = 0
    worst = {"parseval": 0.0, "doppler": 0.0, "power": 0.0}
    n_dop = 0
    for i in range(50):
        scene = _soak_scene(rng, i)
        tx = (*rng.uniform(-100, 100, 2), rng.uniform(1, 25))
        rx = (*rng.uniform(-100, 100, 2), rng.uniform(1, 25))
        cfg = SimConfig(tx=tx, rx=rx, n_subcarriers=int(rng.choice([64, 128, 256])), dt=float(rng.uniform(1e-3, 0.05)),
                        mb_pairs=int(rng.integers(0, 8)), seed=int(rng.integers(0, 2**31)), n_snapshots=20)
        real = realize(scene, None, cfg)
        # clutter power conservation, before any occluder attenuation
        p = params_for_scenario(scene.scenario_class)
        total = sum(x.power for x in clutter_paths(real.clusters, tx, rx, cfg.f_c, real.clutter_seed))
        worst["power"] = max(worst["power"], abs(total - p.total_power) / p.total_power)
        los = math.dist(tx, rx) / SPEED_OF_LIGHT
        for k in range(cfg.n_snapshots):
            snap = render_snapshot(real, cfg, k)
            n_snap += 1
            los_paths = [q.delay for q in snap.paths if q.kind is PathKind.LOS]
            d0 = snap.paths[0].delay
            if los_paths:  # min delay is the LoS path's, which matches geometry to rounding
                causal += d0 == los_paths[0] and abs(los_paths[0] - los) <= 1e-15 * los
            else:
                causal += d0 >= los * (1 - 1e-15)
            H = snap.cfr[0, 0]
            e_f = float(np.sum(np.abs(H) ** 2))
            err = abs(float(np.sum(np.abs(cir_from_cfr(H)) ** 2)) - e_f) / e_f
            worst["parseval"] = max(worst["parseval"], err)
            parseval += err < 1e-9
            for q in snap.paths:
                if q.kind in (PathKind.TARGET_DIRECT, PathKind.MULTI_BOUNCE):
                    ref = doppler_fd(q, real.targets, cfg.f_c, snap.time)
                    rel = abs(q.doppler - ref) / max(abs(ref), 1.0)
                    worst["doppler"] = max(worst["doppler"], rel)
                    doppler += rel < 1e-6
                    n_dop += 1
    ok = (n_snap == 1000 and causal == n_snap and parseval == n_snap and doppler == n_dop
          and worst["power"] < 1e-9)
    assert record(4, ok, f"physics soak over {n_snap} snapshots: causality {causal}/{n_snap}, "
                         f"Parseval max rel {worst['parseval']:.1e} (<1e-9), Doppler vs FD max rel "
                         f"{worst['doppler']:.1e} over {n_dop} paths (<1e-6), clutter power max rel "
                         f"{worst['power']:.1e} (<1e-9)")


def test_c5_determinism(tmp_path):
    from test_cli import outputs, pipeline
    a, b, c = (outputs(pipeline(tmp_path / name, th)) for name, th in (("a", 1), ("b", 1), ("c", 4)))
    same_runs, same_threads = a == b, a == c
    assert record(5, same_runs and same_threads,
                  f"determinism: {len(a)} pipeline outputs byte-identical across runs {same_runs}, "
                  f"across --threads 1/4 {same_threads}")


def test_c6_extraction():
    cfg = SimConfig(bandwidth=4e9, n_subcarriers=256)
    step = 1 / (4 * cfg.bandwidth)
    rng = np.random.default_rng(6)
    worst_amp, delay_exact = 0.0, True
    for _ in range(20):
        d = step * int(rng.integers(0, 4 * 255))
        a = rng.uniform(0.01, 1) * np.exp(2j * np.pi * rng.uniform())
        est = extract_centers(render_cfr([PropagationPath(PathKind.TARGET_DIRECT, d, a, 0.0)], cfg, 0.0), cfg, 10)
        delay_exact &= len(est) == 1 and est.delay[0] == d
        worst_amp = max(worst_amp, abs(est.amplitude[0] - abs(a)) / abs(a))
    hits = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        delays = 5e-9 + step * rng.permutation(np.arange(0, 200, 8))[:10]
        amps = rng.uniform(0.5, 1.0, 10) * np.exp(2j * np.pi * rng.uniform(size=10))
        H = render_cfr([PropagationPath(PathKind.TARGET_DIRECT, d, a, 0.0) for d, a in zip(delays, amps)], cfg, 0.0)
        sigma = math.sqrt(np.mean(np.abs(H) ** 2) / 1e3 / 2)
        H = H + sigma * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
        est = extract_centers(H, cfg, 10)
        hits.append(np.mean([np.min(np.abs(est.delay - d)) <= step for d in delays]))
    recovered = float(np.mean(hits))
    assert record(6, delay_exact and worst_amp < 1e-6 and recovered >= 0.8,
                  f"extraction: noiseless delay exact {delay_exact}, amplitude max rel {worst_amp:.1e} (<1e-6), "
                  f"30 dB recovery {recovered:.3f} (>=0.80 within one cell, 100 seeds)")


def test_c7_throughput_soft():
    doc = {"scene_id": "thr", "scenario_class": "urban_street",
           "targets": [{"id": "car", "class": "vehicle", "position": [30, 5, 0], "velocity": [-8, 0, 0],
                        "heading": 3.1, "components": [{"part": "wheel", "count": 4, "rate_hz": 6.0}]}],
           "background": [{"id": "b1", "kind": "building", "box": {"min": [10, 12, 0], "max": [40, 30, 20]}}]}
    cfg = SimConfig(tx=(0, 0, 10), rx=(120, 30, 1.5), n_subcarriers=256, n_snapshots=200)
    real = realize(validate_scene(doc), None, cfg)
    n_paths = len(render_snapshot(real, cfg, 0).paths)
    t0 = time.perf_counter()
    for k in range(cfg.n_snapshots):
        render_snapshot(real, cfg, k)
    rate = cfg.n_snapshots / (time.perf_counter() - t0)
    # same snapshots with every path rendered from scratch, for reference
    t0 = time.perf_counter()
    for k in range(50):
        snap = render_snapshot(real, cfg, k)
        render_cfr(snap.paths, cfg, snap.time)
    full = 50 / (time.perf_counter() - t0)
    record(7, rate >= 200, f"throughput (soft, not gating): {rate:.0f} snapshots/s with {n_paths} paths, "
                           f"K=256, SISO, 1 thread (>=200); {full:.0f}/s when static paths are re-rendered "
                           f"every snapshot")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
