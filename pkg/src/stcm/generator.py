"""Conditional parameter generator ``theta = G(s, z)``.

The generator resamples among the ``k`` training parameter vectors whose
semantic codes are nearest to the query code and adds per-dimension Gaussian
jitter (Silverman bandwidths times a factor). A coarse-statistics baseline
samples every dimension independently from its training marginal.

Parameter-vector layout (``LAYOUT_TAG``), all real:

* target block, per center: x, y, z (m), log amplitude, alpha index,
  aspect x, y, z, log aspect width, part id (-1 for none)
* motion block: speed (m/s), heading offset from the scene heading (rad),
  one rotation rate per class part (Hz)
* clutter block: n_clusters, r_tau, log10 sigma_tau, zeta (dB), ASA, ASD,
  ESA, ESD (rad), log10 total power
* interaction block: mb_pairs, mb_loss_db

Integer-valued entries are rounded to nearest, ties to even, at decode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .clutter import ClutterParams
from .errors import DegenerateModel, TooFewSamples, VersionMismatch
from .interaction import DEFAULT_MB_LOSS_DB, DEFAULT_MB_PAIRS
from .semantics import CODE_DIM, SemanticCode
from .target import ALPHA_VALUES, N_CENTERS, McsSet, ScatteringCenter

N_PARTS = 4
CENTER_FIELDS = ("x", "y", "z", "log_amp", "alpha_idx", "ax", "ay", "az", "log_width", "part_id")
MOTION_FIELDS = ("speed", "heading_offset") + tuple(f"rate{i}" for i in range(N_PARTS))
CLUTTER_FIELDS = ("n_clusters", "r_tau", "log10_sigma_tau", "zeta", "asa", "asd", "esa", "esd",
                  "log10_total_power")
INTERACTION_FIELDS = ("mb_pairs", "mb_loss_db")

TARGET_DIM = N_CENTERS * len(CENTER_FIELDS)
THETA_DIM = TARGET_DIM + len(MOTION_FIELDS) + len(CLUTTER_FIELDS) + len(INTERACTION_FIELDS)
LAYOUT_TAG = f"stcm-theta-v1-nc{N_CENTERS}-d{THETA_DIM}"
LATENT_DIM = 16

MAX_ATTEMPTS = 100
DEFAULT_K = 8
DEFAULT_JITTER = 0.05  # fraction of the Silverman bandwidth; see README "generator"
MODEL_MAGIC = "STCM-GENERATOR"


def field_names() -> list[str]:
    names = [f"c{i}.{f}" for i in range(N_CENTERS) for f in CENTER_FIELDS]
    return names + list(MOTION_FIELDS) + list(CLUTTER_FIELDS) + list(INTERACTION_FIELDS)


_SLICES = {
    "target": slice(0, TARGET_DIM),
    "motion": slice(TARGET_DIM, TARGET_DIM + len(MOTION_FIELDS)),
    "clutter": slice(TARGET_DIM + len(MOTION_FIELDS), THETA_DIM - len(INTERACTION_FIELDS)),
    "interaction": slice(THETA_DIM - len(INTERACTION_FIELDS), THETA_DIM),
}


class InvalidTheta(ValueError):
    """A parameter vector that does not decode to valid submodule types."""


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray = field(repr=False)
    layout: str = LAYOUT_TAG

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (THETA_DIM,):
            raise ValueError(f"theta must have shape ({THETA_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidTheta("theta has non-finite entries")
        if self.layout != LAYOUT_TAG:
            raise VersionMismatch(f"layout {self.layout!r} != {LAYOUT_TAG!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, ParameterVector) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def block(self, name: str) -> np.ndarray:
        return self.values[_SLICES[name]]

    def to_record(self) -> dict:
        return {"layout": self.layout, "theta": self.values.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "ParameterVector":
        return cls(np.asarray(rec["theta"], float), rec.get("layout", ""))


@dataclass(frozen=True)
class DecodedTheta:
    centers: tuple[ScatteringCenter, ...]
    speed: float
    heading_offset: float
    rates: tuple[float, ...]
    clutter: ClutterParams
    mb_pairs: int
    mb_loss_db: float

    def mcs(self, cls: str, view_dir=(1.0, 0.0, 0.0)) -> McsSet:
        return McsSet(cls, tuple(view_dir), self.centers)


def _rint(x: float) -> int:
    return int(np.rint(x))  # numpy rounds half to even


def decode(theta: ParameterVector, rays_per_cluster: int = 10) -> DecodedTheta:
    """Decode and validate. Raises :class:`InvalidTheta` on out-of-range entries.

    Clamps: alpha index into [0, 4]; part id into [-1, 3]; rotation rates,
    speed, cluster and pair counts at 0.
    """
    t = theta.block("target").reshape(N_CENTERS, len(CENTER_FIELDS))
    centers = []
    for row in t:
        aspect = row[5:8]
        n = np.linalg.norm(aspect)
        if n < 1e-6:
            raise InvalidTheta("aspect direction has near-zero norm")
        part = min(max(_rint(row[9]), -1), N_PARTS - 1)
        centers.append(ScatteringCenter(
            local_position=tuple(float(x) for x in row[0:3]),
            amplitude=float(math.exp(row[3])),
            alpha=ALPHA_VALUES[min(max(_rint(row[4]), 0), len(ALPHA_VALUES) - 1)],
            aspect_center=tuple(float(x) for x in aspect / n),
            aspect_width=float(math.exp(row[8])),
            part_id=None if part < 0 else part,
        ))
    m = theta.block("motion")
    c = theta.block("clutter")
    n_clusters = max(_rint(c[0]), 0)
    try:
        clutter = ClutterParams(
            n_clusters=n_clusters, r_tau=float(c[1]), sigma_tau=float(10.0 ** c[2]), zeta=float(c[3]),
            asa=float(c[4]), asd=float(c[5]), esa=float(c[6]), esd=float(c[7]),
            total_power=float(10.0 ** c[8]), rays_per_cluster=rays_per_cluster,
        )
    except ValueError as exc:
        raise InvalidTheta(str(exc)) from None
    inter = theta.block("interaction")
    if inter[1] < 0:
        raise InvalidTheta("mb_loss_db must be >= 0")
    return DecodedTheta(
        centers=tuple(centers),
        speed=max(float(m[0]), 0.0),
        heading_offset=float(m[1]),
        rates=tuple(max(float(r), 0.0) for r in m[2:]),
        clutter=clutter,
        mb_pairs=max(_rint(inter[0]), 0),
        mb_loss_db=float(inter[1]),
    )


def encode_theta(mcs: McsSet, speed: float = 0.0, heading_offset: float = 0.0,
                 rates: Sequence[float] = (0.0,) * N_PARTS, clutter: ClutterParams | None = None,
                 mb_pairs: int = DEFAULT_MB_PAIRS, mb_loss_db: float = DEFAULT_MB_LOSS_DB) -> ParameterVector:
    """Flatten submodule parameters into the fixed layout (inverse of :func:`decode`)."""
    if len(mcs.centers) != N_CENTERS:
        raise ValueError(f"layout expects {N_CENTERS} centers, got {len(mcs.centers)}")
    clutter = clutter or ClutterParams()
    rows = []
    for ctr in mcs.centers:
        rows.extend([*ctr.local_position, math.log(ctr.amplitude), ALPHA_VALUES.index(ctr.alpha),
                     *ctr.aspect_center, math.log(ctr.aspect_width),
                     -1 if ctr.part_id is None else ctr.part_id])
    rows.extend([speed, heading_offset, *rates])
    rows.extend([clutter.n_clusters, clutter.r_tau, math.log10(clutter.sigma_tau), clutter.zeta,
                 clutter.asa, clutter.asd, clutter.esa, clutter.esd, math.log10(clutter.total_power)])
    rows.extend([mb_pairs, mb_loss_db])
    return ParameterVector(np.asarray(rows, float))


def is_valid(theta: ParameterVector) -> bool:
    try:
        decode(theta)
    except (InvalidTheta, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class GeneratorModel:
    codes: np.ndarray  # (n, CODE_DIM)
    thetas: np.ndarray  # (n, THETA_DIM)
    k: int
    bandwidth: np.ndarray  # (THETA_DIM,)
    kind: str = "knn"  # or "baseline"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    layout: str = LAYOUT_TAG

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if np.any(self.bandwidth < 0):
            raise ValueError("bandwidths must be >= 0")


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    """Per-column Silverman rule ``0.9 * min(std, IQR/1.34) * n**(-1/5)``."""
    n = x.shape[0]
    std = x.std(axis=0, ddof=1) if n > 1 else np.zeros(x.shape[1])
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    iqr = (q75 - q25) / 1.34
    spread = np.where(iqr > 0, np.minimum(std, iqr), std)
    return 0.9 * spread * n ** -0.2


def _stack(pairs):
    codes = np.array([np.asarray(getattr(s, "values", s), float) for s, _ in pairs]).reshape(-1, CODE_DIM)
    thetas = np.array([np.asarray(getattr(t, "values", t), float) for _, t in pairs]).reshape(-1, THETA_DIM)
    return codes, thetas


def fit(pairs, k: int = DEFAULT_K, bandwidth_factor: float = DEFAULT_JITTER) -> GeneratorModel:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pairs) < k:
        raise TooFewSamples(f"need at least k={k} pairs, got {len(pairs)}")
    codes, thetas = _stack(pairs)
    bw = silverman_bandwidth(thetas) * bandwidth_factor
    return GeneratorModel(codes, thetas, k, bw)


def fit_baseline(pairs) -> GeneratorModel:
    """Independent per-dimension Normal fit; the code is ignored at generation time."""
    if len(pairs) < 2:
        raise TooFewSamples("baseline needs at least 2 pairs")
    codes, thetas = _stack(pairs)
    return GeneratorModel(codes, thetas, 1, np.zeros(THETA_DIM), kind="baseline",
                          mean=thetas.mean(axis=0), std=thetas.std(axis=0, ddof=1))


def neighbours(model: GeneratorModel, s) -> np.ndarray:
    """Indices of the ``k`` training codes nearest to ``s``; ties go to the lower index."""
    q = np.asarray(getattr(s, "values", s), float)
    d = np.linalg.norm(model.codes - q, axis=1)
    return np.argsort(d, kind="stable")[: model.k]


def sample_latent(seed: int, index: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, index])).standard_normal(LATENT_DIM)


def generate_from_latent(model: GeneratorModel, s, z: np.ndarray, nbrs: np.ndarray | None = None) -> np.ndarray:
    """Deterministic map ``(s, z) -> theta`` (undecoded).

    ``z[0]`` selects the neighbour; the remaining entries seed the jitter noise.
    """
    z = np.asarray(z, float)
    noise = np.random.default_rng(np.frombuffer(z.tobytes(), dtype=np.uint32)).standard_normal(THETA_DIM)
    if model.kind == "baseline":
        return model.mean + model.std * noise
    if nbrs is None:
        nbrs = neighbours(model, s)
    pick = nbrs[min(int(ndtr(z[0]) * len(nbrs)), len(nbrs) - 1)]
    return model.thetas[pick] + model.bandwidth * noise


def generate(model: GeneratorModel, s, seed: int, n: int) -> list[ParameterVector]:
    """``n`` decode-valid parameter vectors for code ``s``; invalid draws are resampled."""
    nbrs = None if model.kind == "baseline" else neighbours(model, s)
    out = []
    for i in range(n):
        for attempt in range(MAX_ATTEMPTS):
            z = sample_latent(seed, i * MAX_ATTEMPTS + attempt)
            theta = generate_from_latent(model, s, z, nbrs)
            try:
                pv = ParameterVector(theta, model.layout)
                decode(pv)
            except (InvalidTheta, ValueError):
                continue
            out.append(pv)
            break
        else:
            raise DegenerateModel(f"{MAX_ATTEMPTS} consecutive invalid draws for sample {i}")
    return out


# ---------------------------------------------------------------------------
# persistence


def save(model: GeneratorModel, path) -> None:
    body = {
        "kind": model.kind,
        "k": model.k,
        "codes": model.codes.tolist(),
        "thetas": model.thetas.tolist(),
        "bandwidth": model.bandwidth.tolist(),
        "mean": None if model.mean is None else model.mean.tolist(),
        "std": None if model.std is None else model.std.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {model.layout}\n")
        json.dump(body, fh)


def load(path) -> GeneratorModel:
    text = Path(path).read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    parts = header.split()
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise VersionMismatch(f"{path}: not a generator model file")
    if parts[1] != LAYOUT_TAG:
        raise VersionMismatch(f"{path}: layout {parts[1]!r}, expected {LAYOUT_TAG!r}")
    try:
        d = json.loads(body)
    except json.JSONDecodeError as exc:
        raise VersionMismatch(f"{path}: corrupt model body ({exc.msg})") from None
    arr = lambda x: None if x is None else np.asarray(x, float)  # noqa: E731
    return GeneratorModel(arr(d["codes"]).reshape(-1, CODE_DIM), arr(d["thetas"]).reshape(-1, THETA_DIM),
                          int(d["k"]), arr(d["bandwidth"]), d["kind"], arr(d["mean"]), arr(d["std"]))


def write_thetas(thetas, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in thetas:
            fh.write(json.dumps(t.to_record()) + "\n")


def read_thetas(path) -> list[ParameterVector]:
    with open(path, encoding="utf-8") as fh:
        return [ParameterVector.from_record(json.loads(line)) for line in fh if line.strip()]
