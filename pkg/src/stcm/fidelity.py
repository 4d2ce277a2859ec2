"""Fidelity and identification metrics.

Distribution distances (exact 1-D Wasserstein, sliced Wasserstein), the
two-sample Kolmogorov-Smirnov test, grid matching-pursuit extraction of
scattering centers from a CFR, the target matching score (TMS), CCDF and
threshold calibration, and the multi-station consistency protocol.

TMS between an extracted center set and a reference set: centers are paired
by an optimal one-to-one assignment minimising

    ((d_delay * B)**2 + (d_angle / beamwidth)**2 + (d_level_dB / 6)**2)

and the score is the mean of ``exp(-cost)`` over matched pairs, times
``matched / max(len(a), len(b))``. The angle term is used only when both sets
carry angles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constants import SPEED_OF_LIGHT
from .errors import DimensionMismatch, EmptyLibrary, EmptySample, InsufficientSamples
from .synthesizer import ArraySpec, SimConfig, frequency_grid, steering
from .target import McsSet, MotionState, _part_offset, rot_z

LEVEL_SCALE_DB = 6.0
SIGNIFICANCE = 0.05
KS_TERM_TOL = 1e-12


# ---------------------------------------------------------------------------
# optimal transport


def _sample(x, name) -> np.ndarray:
    x = np.asarray(x, float).ravel()
    if x.size == 0:
        raise EmptySample(f"{name} is empty")
    return x


def wasserstein_1d(a, b, p: float = 1.0) -> float:
    """Order-``p`` Wasserstein distance between two empirical distributions on the line.

    Integrates ``|F_a^-1(u) - F_b^-1(u)|**p`` over u exactly, using the
    piecewise-constant empirical quantile functions.
    """
    a = np.sort(_sample(a, "a"))
    b = np.sort(_sample(b, "b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))
    n, m = a.size, b.size
    # breakpoints of both quantile functions, in exact integer units of 1/(n*m)
    cuts = np.union1d(np.arange(n + 1) * m, np.arange(m + 1) * n)
    width = np.diff(cuts) / (n * m)
    mid = cuts[:-1]
    ia = mid // m
    ib = mid // n
    return float(np.sum(width * np.abs(a[ia] - b[ib]) ** p) ** (1.0 / p))


def random_directions(d: int, n_proj: int, seed: int) -> np.ndarray:
    g = np.random.default_rng(np.random.SeedSequence([seed, 0x5A])).standard_normal((n_proj, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sliced_wasserstein(A, B, n_proj: int = 128, p: float = 1.0, seed: int = 0) -> float:
    """Mean over random unit directions of the 1-D Wasserstein distance of the projections."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"sample dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    if n_proj < 1:
        raise ValueError("n_proj must be >= 1")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptySample("empty sample set")
    dirs = random_directions(A.shape[1], n_proj, seed)
    pa, pb = A @ dirs.T, B @ dirs.T
    return float(np.mean([wasserstein_1d(pa[:, i], pb[:, i], p) for i in range(n_proj)]))


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def kolmogorov_q(lam: float) -> float:
    """``Q(lam) = 2 * sum_{k>=1} (-1)**(k-1) * exp(-2 k**2 lam**2)``, clipped to [0, 1].

    The alternating series is summed until terms fall below ``KS_TERM_TOL``.
    Below ``lam = 1`` it converges slowly, so ``1 - Q`` is taken from the
    equivalent theta-function form ``sqrt(2 pi)/lam * sum exp(-(2k-1)**2 pi**2 / (8 lam**2))``.
    """
    if lam <= 0.0:
        return 1.0
    if lam < 1.0:
        s, k = 0.0, 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * lam * lam))
            s += term
            if term < KS_TERM_TOL * 1e-6 or term == 0.0:
                break
            k += 1
        return min(max(1.0 - math.sqrt(2.0 * math.pi) / lam * s, 0.0), 1.0)
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < KS_TERM_TOL:
            break
        k += 1
    return min(max(2.0 * total, 0.0), 1.0)


def ks_statistic(a, b) -> float:
    a = np.sort(_sample(a, "a"))
    b = np.sort(_sample(b, "b"))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample K-S statistic and asymptotic p-value (Stephens' small-sample correction)."""
    a = _sample(a, "a")
    b = _sample(b, "b")
    d = ks_statistic(a, b)
    ne = a.size * b.size / (a.size + b.size)
    sq = math.sqrt(ne)
    return d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)


# ---------------------------------------------------------------------------
# center sets


@dataclass(frozen=True)
class CenterSet:
    """Scattering centers observed in one channel: delay (s), arrival azimuth (rad, NaN if SISO), |amplitude|."""
    delay: np.ndarray
    angle: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        for name in ("delay", "angle", "amplitude"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float).ravel())
        if not (self.delay.size == self.angle.size == self.amplitude.size):
            raise ValueError("center attribute arrays differ in length")

    def __len__(self):
        return self.delay.size

    @property
    def has_angle(self) -> bool:
        return len(self) > 0 and bool(np.all(np.isfinite(self.angle)))

    def permuted(self, order) -> "CenterSet":
        order = np.asarray(order)
        return CenterSet(self.delay[order], self.angle[order], self.amplitude[order])

    @classmethod
    def empty(cls) -> "CenterSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))


def beamwidth(array: ArraySpec) -> float:
    """Broadside Rayleigh resolution of a ULA, ``1 / (N * spacing)`` radians."""
    return 1.0 / (array.n_elements * array.spacing)


@dataclass(frozen=True)
class Geometry:
    """Observation geometry: terminals, target pose, and the receiver's resolution."""
    tx: tuple[float, float, float]
    rx: tuple[float, float, float]
    motion: MotionState
    f_c: float
    bandwidth: float
    rx_array: ArraySpec = ArraySpec()
    t: float = 0.0

    @classmethod
    def from_config(cls, cfg: SimConfig, motion: MotionState, t: float = 0.0) -> "Geometry":
        return cls(cfg.tx, cfg.rx, motion, cfg.f_c, cfg.bandwidth, cfg.rx_array, t)


def _library_positions(lib: Sequence[McsSet], motion: MotionState, t: float) -> tuple[np.ndarray, ...]:
    """World positions (E, N, 3), widths, aspects, amplitudes for every entry at the given pose."""
    pos = np.stack([m.arrays["position"] for m in lib])
    part = np.stack([m.arrays["part"] for m in lib])
    if motion.parts and np.any(part >= 0):
        offsets = np.zeros((max(p.part_id for p in motion.parts) + 2, 3))
        for p in motion.parts:
            offsets[p.part_id] = _part_offset(p, t)[0]
        pos = pos + np.where(part[..., None] >= 0, offsets[np.where(part >= 0, part, -1)], 0.0)
    rot = rot_z(motion.heading)
    world = np.asarray(motion.position, float) + np.asarray(motion.velocity, float) * t + pos @ rot.T
    aspect = np.stack([m.arrays["aspect"] for m in lib]) @ rot.T
    amp = np.stack([m.arrays["amplitude"] for m in lib])
    width = np.stack([m.arrays["width"] for m in lib])
    return world, aspect, amp, width


def project_library(library: Sequence[McsSet], geometry: Geometry) -> list[CenterSet]:
    """Delay, arrival azimuth and received amplitude of every library center at the geometry's pose."""
    if not library:
        return []
    tx = np.asarray(geometry.tx, float)
    rx = np.asarray(geometry.rx, float)
    world, aspect, amp, width = _library_positions(library, geometry.motion, geometry.t)
    to_tx, to_rx = tx - world, rx - world
    d_tx = np.linalg.norm(to_tx, axis=-1)
    d_rx = np.linalg.norm(to_rx, axis=-1)
    view = to_tx / d_tx[..., None] + to_rx / d_rx[..., None]
    view /= np.linalg.norm(view, axis=-1, keepdims=True)
    ang = np.arctan2(np.linalg.norm(np.cross(view, aspect), axis=-1), np.sum(view * aspect, axis=-1))
    wl = SPEED_OF_LIGHT / geometry.f_c
    received = amp * np.exp(-ang ** 2 / (2 * width ** 2)) * wl / ((4 * math.pi) ** 1.5 * d_tx * d_rx)
    delay = (d_tx + d_rx) / SPEED_OF_LIGHT
    if geometry.rx_array.n_elements > 1:
        rel = world - rx
        az = np.arctan2(rel[..., 1], rel[..., 0])
    else:
        az = np.full(delay.shape, np.nan)
    return [CenterSet(delay[e], az[e], received[e]) for e in range(len(library))]


# ---------------------------------------------------------------------------
# extraction


@lru_cache(maxsize=8)
def _delay_dictionary(f_c: float, bandwidth: float, K: int, n_tau: int) -> np.ndarray:
    f = f_c - bandwidth / 2 + np.arange(K) * bandwidth / (K - 1)
    E = np.exp(-2j * math.pi * np.outer(f, np.arange(n_tau) / (4.0 * bandwidth)))
    E.setflags(write=False)
    return E


def extract_centers(cfr: np.ndarray, cfg: SimConfig, k_extract: int = 10,
                    delay_window: tuple[float, float] | None = None,
                    angle_window: tuple[float, float] | None = None) -> CenterSet:
    """Grid matching pursuit with joint least-squares amplitude refit.

    Searches delays on a ``1/(4B)`` grid (default window ``[0, (K-1)/B)``, the
    unambiguous span of the subcarrier grid) and, for a ULA receiver, arrival
    azimuths on a ``beamwidth/4`` grid. Only the first transmit element is
    used. Stops early once the residual energy drops below 1e-12 of the
    original.
    """
    H = np.asarray(getattr(cfr, "cfr", cfr))
    H = H[:, 0, :] if H.ndim == 3 else np.atleast_2d(H)
    n_rx, K = H.shape
    energy0 = float(np.vdot(H, H).real)
    if energy0 == 0.0 or k_extract < 1:
        return CenterSet.empty()

    f = frequency_grid(cfg)
    step = 1.0 / (4.0 * cfg.bandwidth)
    lo, hi = delay_window if delay_window is not None else (0.0, (K - 1) / cfg.bandwidth)
    n_tau = max(int(math.ceil((hi - lo) / step)), 1)
    tau_grid = lo + step * np.arange(n_tau)
    # exp(-2j pi f (lo + m step)) = exp(-2j pi f lo) * exp(-2j pi f m step)
    E = np.exp(-2j * math.pi * f * lo)[:, None] * _delay_dictionary(cfg.f_c, cfg.bandwidth, K, n_tau)
    if n_rx > 1:
        bw = beamwidth(cfg.rx_array)
        a_lo, a_hi = angle_window if angle_window is not None else (-math.pi / 2, math.pi / 2)
        th_grid = np.arange(a_lo, a_hi + 1e-12, bw / 4.0)
        A = steering(cfg.rx_array, th_grid)  # (n_rx, n_th)
    else:
        th_grid = np.array([np.nan])
        A = np.ones((1, 1), dtype=complex)

    atoms, picks = [], []
    resid = H.copy()
    coef = np.zeros(0, dtype=complex)
    for _ in range(k_extract):
        corr = np.abs(A.conj().T @ resid @ E.conj())
        j_th, j_tau = np.unravel_index(int(np.argmax(corr)), corr.shape)
        atoms.append(np.outer(A[:, j_th], E[:, j_tau]).ravel())
        picks.append((j_th, j_tau))
        Phi = np.column_stack(atoms)
        coef, *_ = np.linalg.lstsq(Phi, H.ravel(), rcond=None)
        resid = (H.ravel() - Phi @ coef).reshape(H.shape)
        if float(np.vdot(resid, resid).real) < 1e-12 * energy0:
            break
    idx = np.array(picks)
    return CenterSet(tau_grid[idx[:, 1]], th_grid[idx[:, 0]], np.abs(coef))


# ---------------------------------------------------------------------------
# matching score


def _pair_costs(est: CenterSet, refs: Sequence[CenterSet], bandwidth: float, bw: float | None) -> np.ndarray:
    """Cost tensor (n_ref_sets, n_est, n_ref) for equally sized reference sets."""
    d_ref = np.stack([r.delay for r in refs])
    a_ref = np.stack([r.amplitude for r in refs])
    c = ((est.delay[None, :, None] - d_ref[:, None, :]) * bandwidth) ** 2
    with np.errstate(divide="ignore"):
        lvl = 20.0 * (np.log10(est.amplitude)[None, :, None] - np.log10(a_ref)[:, None, :]) / LEVEL_SCALE_DB
    c = c + np.nan_to_num(lvl, nan=np.inf, posinf=np.inf, neginf=np.inf) ** 2
    if bw is not None:
        ang_ref = np.stack([r.angle for r in refs])
        c = c + ((est.angle[None, :, None] - ang_ref[:, None, :]) / bw) ** 2
    return c


def _score(cost: np.ndarray, n_est: int, n_ref: int) -> float:
    rows, cols = linear_sum_assignment(np.minimum(cost, 1e6))
    matched = len(rows)
    return float(np.mean(np.exp(-cost[rows, cols])) * matched / max(n_est, n_ref))


def tms(estimated: CenterSet, reference: CenterSet, bandwidth: float, beamwidth_rad: float | None = None) -> float:
    """Target matching score in [0, 1]; 0 when either set is empty."""
    if len(estimated) == 0 or len(reference) == 0:
        return 0.0
    bw = beamwidth_rad if (beamwidth_rad is not None and estimated.has_angle and reference.has_angle) else None
    cost = _pair_costs(estimated, [reference], bandwidth, bw)[0]
    return _score(cost, len(estimated), len(reference))


def tms_many(estimated: CenterSet, references: Sequence[CenterSet], bandwidth: float,
             beamwidth_rad: float | None = None) -> np.ndarray:
    """:func:`tms` against each reference set (vectorized cost build)."""
    if len(estimated) == 0:
        return np.zeros(len(references))
    sizes = {len(r) for r in references}
    if len(sizes) != 1:
        return np.array([tms(estimated, r, bandwidth, beamwidth_rad) for r in references])
    n_ref = sizes.pop()
    if n_ref == 0:
        return np.zeros(len(references))
    use_angle = beamwidth_rad is not None and estimated.has_angle and all(r.has_angle for r in references)
    costs = _pair_costs(estimated, references, bandwidth, beamwidth_rad if use_angle else None)
    return np.array([_score(c, len(estimated), n_ref) for c in costs])


def identify(estimated: CenterSet, library: Sequence[McsSet], geometry: Geometry) -> tuple[str, float, int]:
    """Best-matching library entry: (class, TMS, index). Ties go to the lowest index."""
    if not library:
        raise EmptyLibrary("library is empty")
    refs = project_library(library, geometry)
    bw = beamwidth(geometry.rx_array) if geometry.rx_array.n_elements > 1 else None
    scores = tms_many(estimated, refs, geometry.bandwidth, bw)
    best = int(np.argmax(scores))
    return library[best].cls, float(scores[best]), best


# ---------------------------------------------------------------------------
# CCDF and thresholds


def ccdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical exceedance ``P(X >= x)`` at each sorted sample point."""
    x = np.sort(_sample(values, "values"))
    exceed = 1.0 - np.searchsorted(x, x, side="left") / x.size
    return x, exceed


def calibrate_threshold(reference_scores, q: float = 0.95) -> float:
    """Lower empirical ``(1-q)``-quantile, so the reference exceeds it with frequency >= q."""
    x = _sample(reference_scores, "reference_scores")
    return float(np.quantile(x, 1.0 - q, method="lower"))


def exceedance(scores, threshold: float) -> float:
    return float(np.mean(_sample(scores, "scores") >= threshold))


# ---------------------------------------------------------------------------
# collaborative identification


def collaborative_pvalues(model_scores, reference_scores) -> np.ndarray:
    """One K-S p-value per instance from (n_instances, n_stations) TMS matrices."""
    m = np.atleast_2d(np.asarray(model_scores, float))
    r = np.atleast_2d(np.asarray(reference_scores, float))
    if m.shape != r.shape:
        raise DimensionMismatch(f"score matrices differ: {m.shape} vs {r.shape}")
    if m.shape[1] < 2:
        raise InsufficientSamples("collaborative evaluation needs at least 2 stations")
    return np.array([ks_two_sample(m[i], r[i])[1] for i in range(m.shape[0])])


def station_scores(channels, library, geometries, cfg_for, k_extract: int = 10, windows=None) -> np.ndarray:
    """TMS per (instance, station). ``channels[i][s]`` is a CFR, ``geometries[i][s]`` its Geometry,
    ``cfg_for(geometry)`` the SimConfig used to render it."""
    out = np.zeros((len(channels), len(channels[0]) if channels else 0))
    for i, row in enumerate(channels):
        for s, cfr in enumerate(row):
            g = geometries[i][s]
            win = None if windows is None else windows[i][s]
            est = extract_centers(cfr, cfg_for(g), k_extract, delay_window=win)
            out[i, s] = identify(est, library, g)[1]
    return out


def collaborative_eval(model_channels, reference_channels, library, geometries, cfg_for,
                       n_stations: int = 10, k_extract: int = 10, windows=None) -> np.ndarray:
    """K-S p-value per target instance comparing multi-station TMS patterns."""
    if n_stations < 2:
        raise InsufficientSamples("collaborative evaluation needs at least 2 stations")
    for rows in (model_channels, reference_channels):
        if any(len(r) != n_stations for r in rows):
            raise DimensionMismatch(f"every instance needs {n_stations} station channels")
    m = station_scores(model_channels, library, geometries, cfg_for, k_extract, windows)
    r = station_scores(reference_channels, library, geometries, cfg_for, k_extract, windows)
    return collaborative_pvalues(m, r)


# ---------------------------------------------------------------------------
# report


@dataclass
class FidelityReport:
    sliced_wasserstein: float | None = None
    n_projections: int | None = None
    seed: int | None = None
    per_dimension: list[float] = field(default_factory=list)
    tms_scores: list[float] = field(default_factory=list)
    ccdf_curve: list[tuple[float, float]] = field(default_factory=list)
    threshold: float | None = None
    ks_results: list[tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def fidelity_report(generated, reference, n_proj: int = 128, p: float = 1.0, seed: int = 0) -> FidelityReport:
    """Sliced and per-dimension Wasserstein distances between two parameter ensembles."""
    G = np.atleast_2d(np.asarray(generated, float))
    R = np.atleast_2d(np.asarray(reference, float))
    return FidelityReport(
        sliced_wasserstein=sliced_wasserstein(G, R, n_proj, p, seed),
        n_projections=n_proj,
        seed=seed,
        per_dimension=[wasserstein_1d(G[:, j], R[:, j], p) for j in range(G.shape[1])],
    )
