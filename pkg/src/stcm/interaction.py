"""Target/clutter coupling under simplified geometrical optics.

Occluders are axis-aligned boxes with a penetration loss. A path leg that
crosses the open interior of a box is attenuated by that loss; grazing a face,
edge or corner does not count. Multi-bounce paths chain one target center and
one clutter scatterer in both orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT
from .paths import PathKind, PropagationPath, direction_angles_many, spreading_factor
from .target import angle_between, kinematics, rot_z

DEFAULT_MB_PAIRS = 32
DEFAULT_MB_LOSS_DB = 10.0

# one-way penetration loss per material class, dB
MATERIAL_LOSS_DB = {
    "concrete": 30.0,
    "glass": 6.0,
    "metal": math.inf,
    "foliage": 10.0,
    "other": 20.0,
}


@dataclass(frozen=True)
class Occluder:
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    loss_db: float = math.inf

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.box_min, self.box_max)):
            raise ValueError("occluder box must have positive extent on every axis")
        if self.loss_db < 0:
            raise ValueError("loss_db must be >= 0")

    @property
    def amplitude_factor(self) -> float:
        return 0.0 if math.isinf(self.loss_db) else 10.0 ** (-self.loss_db / 20.0)


def occluders_from_scene(scene) -> list[Occluder]:
    return [
        Occluder(b.box_min, b.box_max, MATERIAL_LOSS_DB.get(b.material_class, MATERIAL_LOSS_DB["other"]))
        for b in scene.background if b.acts_as_occluder
    ]


def _crosses(a: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    """Slab test of the open segment a + s*d, 0 < s < 1, against the open box (lo, hi)."""
    t_enter, t_exit = 0.0, 1.0
    for i in range(3):
        if d[i] == 0.0:
            if not (lo[i] < a[i] < hi[i]):
                return False
            continue
        t1 = (lo[i] - a[i]) / d[i]
        t2 = (hi[i] - a[i]) / d[i]
        if t1 > t2:
            t1, t2 = t2, t1
        t_enter = max(t_enter, t1)
        t_exit = min(t_exit, t2)
        if t_enter >= t_exit:
            return False
    return True


def segment_blocked(a, b, occluders) -> float:
    """Amplitude factor in [0, 1] for the segment a-b; 1 when unobstructed."""
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    factor = 1.0
    for occ in occluders:
        if _crosses(a, d, np.asarray(occ.box_min, float), np.asarray(occ.box_max, float)):
            factor *= occ.amplitude_factor
            if factor == 0.0:
                return 0.0
    return factor


def path_visibility(path: PropagationPath, occluders) -> float:
    v = path.vertices
    factor = 1.0
    for a, b in zip(v[:-1], v[1:]):
        if a == b:
            continue
        factor *= segment_blocked(a, b, occluders)
        if factor == 0.0:
            break
    return factor


def segment_factors(A: np.ndarray, B: np.ndarray, occluders) -> np.ndarray:
    """Vectorized :func:`segment_blocked` for segments ``A[n]``-``B[n]``; zero-length segments give 1."""
    A, B = np.asarray(A, float).reshape(-1, 3), np.asarray(B, float).reshape(-1, 3)
    D = B - A
    live = np.any(D != 0.0, axis=1)
    factor = np.ones(len(A))
    parallel = D == 0.0
    safe = np.where(parallel, 1.0, D)
    for occ in occluders:
        lo, hi = np.asarray(occ.box_min, float), np.asarray(occ.box_max, float)
        inside = (lo < A) & (A < hi)
        t1, t2 = (lo - A) / safe, (hi - A) / safe
        t_lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
        t_hi = np.where(parallel, np.inf, np.maximum(t1, t2))
        t_enter = np.maximum(t_lo.max(axis=1), 0.0)
        t_exit = np.minimum(t_hi.min(axis=1), 1.0)
        hit = live & np.all(inside | ~parallel, axis=1) & (t_enter < t_exit)
        factor = np.where(hit, factor * occ.amplitude_factor, factor)
    return factor


def apply_visibility(paths, occluders) -> list[PropagationPath]:
    """Attenuate every path by its legs' occlusion; drop fully blocked paths."""
    paths = list(paths)
    if not occluders or not paths:
        return paths
    starts, ends, owner = [], [], []
    for k, p in enumerate(paths):
        v = p.vertices
        for a, b in zip(v[:-1], v[1:]):
            starts.append(a)
            ends.append(b)
            owner.append(k)
    if not owner:
        return paths
    per_leg = segment_factors(np.array(starts), np.array(ends), occluders)
    factor = np.ones(len(paths))
    np.multiply.at(factor, np.array(owner), per_leg)
    out = []
    for p, f in zip(paths, factor):
        if f > 0.0:
            out.append(p if f == 1.0 else p.scaled(float(f)))
    return out


@dataclass(frozen=True)
class ScattererTable:
    """Flattened clutter scatterers with the per-ray reflectivity seen from one tx/rx pair."""
    points: np.ndarray  # (S, 3)
    amplitude: np.ndarray  # (S,)
    power: np.ndarray  # (S,) cluster power per scatterer, used for pair ranking
    ids: tuple[tuple[int, int], ...]  # (cluster, scatterer)


def scatterer_table(clusters, tx, rx, f_c: float) -> ScattererTable:
    pts, amps, power, ids = [], [], [], []
    for k, cl in enumerate(clusters):
        a = cl.scatterer_amplitudes(tx, rx, f_c)
        for j, q in enumerate(cl.scatterers):
            pts.append(q)
            amps.append(a[j])
            power.append(cl.power / len(cl.scatterers))
            ids.append((k, j))
    return ScattererTable(np.asarray(pts, float).reshape(-1, 3), np.asarray(amps, float),
                          np.asarray(power, float), tuple(ids))


def _unit_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1)
    return v / np.where(n > 0.0, n, 1.0)[:, None], n


def _gain_rows(view: np.ndarray, aspect: np.ndarray, amplitude: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Row-wise aspect gain at f = f_c; ``aspect`` already in the world frame."""
    v = view / np.linalg.norm(view, axis=1, keepdims=True)
    ang = angle_between(v, aspect)
    return amplitude * np.exp(-ang ** 2 / (2.0 * width ** 2))


def multibounce_paths(targets, clusters, tx, rx, f_c: float, t: float,
                      n_pairs: int = DEFAULT_MB_PAIRS, loss_db: float = DEFAULT_MB_LOSS_DB,
                      table: ScattererTable | None = None) -> list[PropagationPath]:
    """Target-clutter double-bounce paths for the strongest ``n_pairs`` pairs.

    ``targets`` is a sequence of ``(McsSet, MotionState)``. Pairs are ranked by
    center amplitude times per-scatterer clutter power. Each pair yields the
    tx-center-scatterer-rx and tx-scatterer-center-rx paths. ``table`` may carry
    a precomputed :func:`scatterer_table` for ``clusters``.
    """
    if n_pairs <= 0 or not targets or not clusters:
        return []
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    if table is None:
        table = scatterer_table(clusters, tx, rx, f_c)
    S = len(table.ids)
    owners = [(ti, ci) for ti, (mcs, _) in enumerate(targets) for ci in range(len(mcs.centers))]
    if not owners or S == 0:
        return []
    center_amp = np.concatenate([mcs.arrays["amplitude"] for mcs, _ in targets])
    weight = np.outer(center_amp, table.power)
    order = np.argsort(-weight.ravel(), kind="stable")[:n_pairs]
    ci_flat, sj = np.divmod(order, S)

    aspect = np.concatenate([mcs.arrays["aspect"] @ rot_z(m.heading).T for mcs, m in targets])
    width = np.concatenate([mcs.arrays["width"] for mcs, _ in targets])
    kin = [kinematics(mcs, m, t) for mcs, m in targets]
    P = np.concatenate([k[0] for k in kin])[ci_flat]
    V = np.concatenate([k[1] for k in kin])[ci_flat]
    Q = table.points[sj]
    loss = 10.0 ** (-loss_db / 20.0)
    k_dop = f_c / SPEED_OF_LIGHT
    factor = spreading_factor(3, f_c) * loss

    per_order = []
    for first_center in (True, False):
        if first_center:
            chain = (np.broadcast_to(tx, P.shape), P, Q, np.broadcast_to(rx, P.shape))
            prev_pt, next_pt = np.broadcast_to(tx, P.shape), Q
        else:
            chain = (np.broadcast_to(tx, P.shape), Q, P, np.broadcast_to(rx, P.shape))
            prev_pt, next_pt = Q, np.broadcast_to(rx, P.shape)
        legs = np.stack([np.linalg.norm(b - a, axis=1) for a, b in zip(chain[:-1], chain[1:])], axis=1)
        u_prev, _ = _unit_rows(prev_pt - P)
        u_next, _ = _unit_rows(next_pt - P)
        view = u_prev + u_next
        vn = np.linalg.norm(view, axis=1)
        view = np.where((vn < 1e-12)[:, None], prev_pt - P, view)
        gain = _gain_rows(view, aspect[ci_flat], center_amp[ci_flat], width[ci_flat])
        rate = -np.sum((u_prev + u_next) * V, axis=1)
        aod = direction_angles_many(tx, chain[1])
        aoa = direction_angles_many(rx, chain[2])
        with np.errstate(divide="ignore", invalid="ignore"):
            amp = gain * table.amplitude[sj] * factor / np.prod(legs, axis=1)
        verts = list(zip(*(tuple(map(tuple, np.asarray(pt).tolist())) for pt in chain)))
        per_order.append((verts, legs, amp, rate, aod, aoa))

    out = []
    for n in range(len(order)):
        ti, ci = owners[ci_flat[n]]
        ck, sk = table.ids[sj[n]]
        alpha = targets[ti][0].centers[ci].alpha
        for o, (verts, legs, amp, rate, aod, aoa) in enumerate(per_order):
            if legs[n].min() == 0.0:
                continue
            out.append(PropagationPath(
                kind=PathKind.MULTI_BOUNCE,
                delay=float(legs[n].sum()) / SPEED_OF_LIGHT,
                amplitude=complex(amp[n]),
                doppler=float(-k_dop * rate[n]) + 0.0,
                aod_az=float(aod[0][n]), aod_el=float(aod[1][n]), aoa_az=float(aoa[0][n]), aoa_el=float(aoa[1][n]),
                alpha=alpha,
                source=(ti, ci, ck, sk, o),
                vertices=verts[n],
            ))
    return out
