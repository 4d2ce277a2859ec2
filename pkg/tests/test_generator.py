import numpy as np
import pytest

from stcm import generator as gen
from stcm.errors import DegenerateModel, TooFewSamples, VersionMismatch
from stcm.evaluation import observation_scene, theta_for
from stcm.fidelity import sliced_wasserstein
from stcm.semantics import CODE_DIM, encode_scene
from stcm.target import synth_library


@pytest.fixture(scope="module")
def library_pairs():
    """(code, theta) pairs for a small two-class library, with interleaved held-out codes."""
    train, held = [], []
    for cls in ("vehicle", "uav"):
        for i, m in enumerate(synth_library(cls, 40, 3)):
            pair = (encode_scene(observation_scene(cls, m.view_dir, 40.0)), theta_for(m))
            (train if i % 2 == 0 else held).append(pair)
    return train, held


def test_layout_is_fixed():
    assert len(gen.field_names()) == gen.THETA_DIM
    assert gen.LAYOUT_TAG.endswith(f"d{gen.THETA_DIM}")
    with pytest.raises(ValueError):
        gen.ParameterVector(np.zeros(3))
    with pytest.raises(VersionMismatch):
        gen.ParameterVector(np.zeros(gen.THETA_DIM), "other-layout")


def test_encode_decode_round_trip():
    m = synth_library("uav", 4, 1)[2]
    theta = gen.encode_theta(m, speed=3.0, heading_offset=0.2, rates=(80.0, 80.0, 0.0, 0.0))
    d = gen.decode(theta)
    for a, b in zip(d.centers, m.centers):
        assert a.local_position == pytest.approx(b.local_position, abs=1e-15)
        assert a.amplitude == pytest.approx(b.amplitude, rel=1e-14)
        assert a.alpha == b.alpha and a.part_id == b.part_id
        assert a.aspect_width == pytest.approx(b.aspect_width, rel=1e-14)
    assert (d.speed, d.heading_offset, d.rates[:2]) == (3.0, 0.2, (80.0, 80.0))


def test_decode_rounds_half_to_even():
    theta = theta_for(synth_library("vehicle", 1, 0)[0]).values.copy()
    i = gen.field_names().index("n_clusters")
    for value, expect in ((2.5, 2), (3.5, 4), (-0.4, 0)):
        theta[i] = value
        assert gen.decode(gen.ParameterVector(theta)).clutter.n_clusters == expect


def test_fit_requires_k_pairs(library_pairs):
    with pytest.raises(TooFewSamples):
        gen.fit(library_pairs[0][:3], k=4)
    with pytest.raises(TooFewSamples):
        gen.fit_baseline(library_pairs[0][:1])


def test_single_pair_no_jitter_returns_it(library_pairs):
    s, theta = library_pairs[0][0]
    model = gen.fit([(s, theta)], k=1, bandwidth_factor=0.0)
    assert all(t == theta for t in gen.generate(model, np.zeros(CODE_DIM), 1, 5))
    jittered = gen.generate(gen.fit([(s, theta)] * 2, k=1, bandwidth_factor=1.0), s, 1, 5)
    assert all(np.allclose(t.values, theta.values) for t in jittered)  # two equal pairs have zero spread


def test_zero_jitter_k1_returns_nearest(library_pairs):
    train, held = library_pairs
    model = gen.fit(train, k=1, bandwidth_factor=0.0)
    s = held[5][0]
    nearest = int(np.argmin([np.linalg.norm(c.values - s.values) for c, _ in train]))
    assert all(t == train[nearest][1] for t in gen.generate(model, s, 9, 4))


def test_fit_and_generate_deterministic(library_pairs):
    train, held = library_pairs
    a, b = gen.fit(train), gen.fit(train)
    np.testing.assert_array_equal(a.bandwidth, b.bandwidth)
    assert gen.generate(a, held[0][0], 4, 10) == gen.generate(b, held[0][0], 4, 10)
    assert gen.generate(a, held[0][0], 4, 0) == []


def test_diversity_and_validity(library_pairs):
    train, held = library_pairs
    out = gen.generate(gen.fit(train), held[3][0], 11, 100)
    assert len(set(out)) >= 2
    assert all(gen.is_valid(t) for t in out)


def test_silverman_rule():
    x = np.random.default_rng(0).standard_normal((1000, 2)) * [1.0, 3.0]
    bw = gen.silverman_bandwidth(x)
    np.testing.assert_allclose(bw, 0.9 * np.array([1.0, 3.0]) * 1000 ** -0.2, rtol=0.08)
    assert np.all(gen.silverman_bandwidth(np.ones((5, 3))) == 0)


def test_baseline_marginals():
    # raw sampler: 1e5 draws against the stored marginals
    rng = np.random.default_rng(1)
    thetas = rng.standard_normal((50, gen.THETA_DIM)) @ np.diag(rng.uniform(0.5, 2, gen.THETA_DIM))
    thetas[:, 1] += 0.8 * thetas[:, 0]  # coupled in training, independent after fitting
    model = gen.GeneratorModel(np.zeros((50, CODE_DIM)), thetas, 1, np.zeros(gen.THETA_DIM), "baseline",
                               thetas.mean(0), thetas.std(0, ddof=1))
    n = 100_000
    draws = np.array([gen.generate_from_latent(model, None, gen.sample_latent(0, i)) for i in range(n)])
    se = model.std / np.sqrt(n)
    assert np.all(np.abs(draws.mean(0) - model.mean) < 3.5 * se)
    rho = np.corrcoef(draws[:, :12].T)
    assert np.max(np.abs(rho - np.eye(12))) < 0.05


def test_baseline_ignores_code(library_pairs):
    train, held = library_pairs
    base = gen.fit_baseline(train)
    assert gen.generate(base, held[0][0], 3, 6) == gen.generate(base, held[-1][0], 3, 6)


def test_degenerate_model():
    thetas = np.zeros((2, gen.THETA_DIM))  # zero aspect vectors never decode
    model = gen.GeneratorModel(np.zeros((2, CODE_DIM)), thetas, 1, np.zeros(gen.THETA_DIM))
    with pytest.raises(DegenerateModel):
        gen.generate(model, np.zeros(CODE_DIM), 0, 1)


def test_save_load(tmp_path, library_pairs):
    train, held = library_pairs
    for model in (gen.fit(train), gen.fit_baseline(train)):
        path = tmp_path / f"{model.kind}.model"
        gen.save(model, path)
        again = gen.load(path)
        assert gen.generate(again, held[1][0], 5, 8) == gen.generate(model, held[1][0], 5, 8)
    text = path.read_text().splitlines()
    path.write_text("\n".join(["STCM-GENERATOR stcm-theta-v0"] + text[1:]))
    with pytest.raises(VersionMismatch):
        gen.load(path)
    path.write_text("")
    with pytest.raises(VersionMismatch):
        gen.load(path)


def test_theta_file_round_trip(tmp_path, library_pairs):
    thetas = [t for _, t in library_pairs[0][:5]]
    gen.write_thetas(thetas, tmp_path / "t.jsonl")
    assert gen.read_thetas(tmp_path / "t.jsonl") == thetas


def test_semantic_consistency(library_pairs):
    """Conditional ensembles sit closer to the local training subset than baseline ensembles do."""
    train, held = library_pairs
    model, base = gen.fit(train), gen.fit_baseline(train)
    wins = 0
    for s, _ in held[::4]:
        local = np.array([train[i][1].values for i in gen.neighbours(model, s)])
        g = np.array([t.values for t in gen.generate(model, s, 2, 64)])
        b = np.array([t.values for t in gen.generate(base, s, 2, 64)])
        wins += sliced_wasserstein(g, local, 64, seed=1) < sliced_wasserstein(b, local, 64, seed=1)
    assert wins == len(held[::4])
