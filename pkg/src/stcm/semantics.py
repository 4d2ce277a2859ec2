"""Hierarchical scene semantics: schema, validation, conditioning code, scene metric.

A scene document is a JSON object with four levels of description:

* component level: ``targets[*].components`` (part type, count, rotation rate)
* object level: ``targets`` and ``background`` (type, pose, motion, material)
* scene level: ``scenario_class`` and ``relations`` (placement, blockage)
* intent level: ``events`` (typed, time-extended, with participants)

The formal JSON Schema ships as ``stcm/data/scene.schema.json``.

By convention the observing station sits at the scene origin; target positions
are expressed relative to it.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import DanglingReference, DimensionMismatch, SchemaError

CODE_DIM = 64
HASH_BUCKETS = 16

SCENARIO_CLASSES = ("urban_street", "highway", "indoor", "open_field")
TARGET_CLASSES = ("vehicle", "uav")
BACKGROUND_KINDS = ("building", "vegetation", "roadside")
MATERIAL_CLASSES = ("concrete", "glass", "metal", "foliage")
PREDICATES = ("blocks", "adjacent_to", "approaches")
EVENT_TYPES = ("crossing", "converging", "loitering")
OTHER = "other"

DEFAULT_HORIZON = 10.0  # seconds

# fixed normalization ranges for the numeric aggregates
_SPEED_RANGE = 50.0  # m/s
_ROTATION_RANGE = 100.0  # Hz


@dataclass(frozen=True)
class ComponentSpec:
    part: str
    count: int = 1
    rate_hz: float = 0.0


@dataclass(frozen=True)
class TargetSpec:
    id: str
    cls: str
    components: tuple[ComponentSpec, ...] = ()
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: float = 0.0


@dataclass(frozen=True)
class BackgroundSpec:
    id: str
    kind: str
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    material_class: str = "concrete"
    acts_as_occluder: bool = True

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.box_max, self.box_min)))


@dataclass(frozen=True)
class RelationSpec:
    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class EventSpec:
    type: str
    participants: tuple[str, ...]
    start: float
    end: float


@dataclass(frozen=True)
class SemanticScene:
    scene_id: str
    scenario_class: str
    targets: tuple[TargetSpec, ...] = ()
    background: tuple[BackgroundSpec, ...] = ()
    relations: tuple[RelationSpec, ...] = ()
    events: tuple[EventSpec, ...] = ()
    horizon: float = DEFAULT_HORIZON

    def object_ids(self) -> set[str]:
        return {t.id for t in self.targets} | {b.id for b in self.background}

    def to_document(self) -> dict:
        """Canonical JSON-compatible mapping (inverse of :func:`validate_scene`)."""
        return {
            "scene_id": self.scene_id,
            "scenario_class": self.scenario_class,
            "horizon": self.horizon,
            "targets": [
                {
                    "id": t.id,
                    "class": t.cls,
                    "components": [asdict(c) for c in t.components],
                    "position": list(t.position),
                    "velocity": list(t.velocity),
                    "heading": t.heading,
                }
                for t in self.targets
            ],
            "background": [
                {
                    "id": b.id,
                    "kind": b.kind,
                    "box": {"min": list(b.box_min), "max": list(b.box_max)},
                    "material_class": b.material_class,
                    "acts_as_occluder": b.acts_as_occluder,
                }
                for b in self.background
            ],
            "relations": [asdict(r) for r in self.relations],
            "events": [
                {"type": e.type, "participants": list(e.participants), "start": e.start, "end": e.end}
                for e in self.events
            ],
        }


@dataclass(frozen=True)
class SemanticCode:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (CODE_DIM,):
            raise DimensionMismatch(f"semantic code must have shape ({CODE_DIM},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("semantic code has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, SemanticCode) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


# ---------------------------------------------------------------------------
# validation

_TOP_FIELDS = {"scene_id", "scenario_class", "targets", "background", "relations", "events", "horizon"}
_TARGET_FIELDS = {"id", "class", "components", "position", "velocity", "heading"}
_COMPONENT_FIELDS = {"part", "count", "rate_hz"}
_BACKGROUND_FIELDS = {"id", "kind", "box", "material_class", "acts_as_occluder"}
_RELATION_FIELDS = {"subject", "predicate", "object"}
_EVENT_FIELDS = {"type", "participants", "start", "end"}


class _Checker:
    def __init__(self, strict: bool):
        self.strict = strict

    def fields(self, obj, allowed, path, required=()):
        if not isinstance(obj, Mapping):
            raise SchemaError(path, "expected an object")
        for key in required:
            if key not in obj:
                raise SchemaError(f"{path}.{key}", "missing required field")
        extra = sorted(set(obj) - allowed)
        if extra:
            if self.strict:
                raise SchemaError(f"{path}.{extra[0]}", "unknown field")
            warnings.warn(f"ignoring unknown fields at {path}: {extra}", stacklevel=4)

    @staticmethod
    def string(value, path) -> str:
        if not isinstance(value, str) or not value:
            raise SchemaError(path, "expected a non-empty string")
        return value

    @staticmethod
    def number(value, path) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SchemaError(path, "expected a finite number")
        return float(value)

    def vec3(self, value, path) -> tuple[float, float, float]:
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise SchemaError(path, "expected a 3-vector")
        return tuple(self.number(x, f"{path}[{i}]") for i, x in enumerate(value))

    @staticmethod
    def token(value, choices, path) -> str:
        """Open enum: unknown tokens map to the reserved ``other`` bucket."""
        if not isinstance(value, str):
            raise SchemaError(path, "expected a string token")
        return value if value in choices else OTHER

    @staticmethod
    def closed(value, choices, path) -> str:
        if value not in choices:
            raise SchemaError(path, f"must be one of {list(choices)}, got {value!r}")
        return value

    @staticmethod
    def array(value, path) -> list:
        if not isinstance(value, list):
            raise SchemaError(path, "expected an array")
        return value


def validate_scene(document: str | bytes | Mapping[str, Any], strict: bool = True) -> SemanticScene:
    """Validate a scene document and return the immutable :class:`SemanticScene`.

    ``document`` may be JSON text or an already-decoded mapping. In strict mode
    unknown fields raise :class:`SchemaError`; otherwise they are dropped with a
    warning.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"not valid JSON: {exc.msg}") from exc
    ck = _Checker(strict)
    ck.fields(document, _TOP_FIELDS, "$", required=("scenario_class",))

    scene_id = ck.string(document.get("scene_id", "unnamed"), "$.scene_id")
    scenario = ck.token(document["scenario_class"], SCENARIO_CLASSES, "$.scenario_class")
    horizon = ck.number(document.get("horizon", DEFAULT_HORIZON), "$.horizon")
    if horizon <= 0:
        raise SchemaError("$.horizon", "must be positive")

    targets = []
    for i, t in enumerate(ck.array(document.get("targets", []), "$.targets")):
        p = f"$.targets[{i}]"
        ck.fields(t, _TARGET_FIELDS, p, required=("id", "class"))
        comps = []
        for j, c in enumerate(ck.array(t.get("components", []), f"{p}.components")):
            cp = f"{p}.components[{j}]"
            ck.fields(c, _COMPONENT_FIELDS, cp, required=("part",))
            count = c.get("count", 1)
            if isinstance(count, bool) or not isinstance(count, int) or count < 1:
                raise SchemaError(f"{cp}.count", "expected an integer >= 1")
            rate = ck.number(c.get("rate_hz", 0.0), f"{cp}.rate_hz")
            if rate < 0:
                raise SchemaError(f"{cp}.rate_hz", "rotation rate must be >= 0")
            comps.append(ComponentSpec(ck.token(c["part"], ("wheel", "rotor", "body", "arm"), f"{cp}.part"),
                                       count, rate))
        targets.append(TargetSpec(
            id=ck.string(t["id"], f"{p}.id"),
            cls=ck.closed(t["class"], TARGET_CLASSES, f"{p}.class"),
            components=tuple(comps),
            position=ck.vec3(t.get("position", [0.0, 0.0, 0.0]), f"{p}.position"),
            velocity=ck.vec3(t.get("velocity", [0.0, 0.0, 0.0]), f"{p}.velocity"),
            heading=ck.number(t.get("heading", 0.0), f"{p}.heading"),
        ))

    background = []
    for i, b in enumerate(ck.array(document.get("background", []), "$.background")):
        p = f"$.background[{i}]"
        ck.fields(b, _BACKGROUND_FIELDS, p, required=("id", "kind", "box"))
        ck.fields(b["box"], {"min", "max"}, f"{p}.box", required=("min", "max"))
        lo = ck.vec3(b["box"]["min"], f"{p}.box.min")
        hi = ck.vec3(b["box"]["max"], f"{p}.box.max")
        if any(h <= l for l, h in zip(lo, hi)):
            raise SchemaError(f"{p}.box", "extents must be strictly positive")
        kind = ck.token(b["kind"], BACKGROUND_KINDS, f"{p}.kind")
        occ = b.get("acts_as_occluder", kind == "building")
        if not isinstance(occ, bool):
            raise SchemaError(f"{p}.acts_as_occluder", "expected a boolean")
        background.append(BackgroundSpec(
            id=ck.string(b["id"], f"{p}.id"),
            kind=kind,
            box_min=lo,
            box_max=hi,
            material_class=ck.token(b.get("material_class", "concrete"), MATERIAL_CLASSES, f"{p}.material_class"),
            acts_as_occluder=occ,
        ))

    if not targets and not background:
        raise SchemaError("$", "at least one of targets/background must be non-empty")
    ids = [t.id for t in targets] + [b.id for b in background]
    seen = set()
    for oid in ids:
        if oid in seen:
            raise SchemaError("$", f"duplicate object id {oid!r}")
        seen.add(oid)

    relations = []
    for i, r in enumerate(ck.array(document.get("relations", []), "$.relations")):
        p = f"$.relations[{i}]"
        ck.fields(r, _RELATION_FIELDS, p, required=tuple(sorted(_RELATION_FIELDS)))
        pred = ck.closed(r["predicate"], PREDICATES, f"{p}.predicate")
        for key in ("subject", "object"):
            if ck.string(r[key], f"{p}.{key}") not in seen:
                raise DanglingReference(f"{p}.{key}", f"unknown object id {r[key]!r}")
        relations.append(RelationSpec(r["subject"], pred, r["object"]))

    events = []
    for i, e in enumerate(ck.array(document.get("events", []), "$.events")):
        p = f"$.events[{i}]"
        ck.fields(e, _EVENT_FIELDS, p, required=tuple(sorted(_EVENT_FIELDS)))
        etype = ck.closed(e["type"], EVENT_TYPES, f"{p}.type")
        parts = ck.array(e["participants"], f"{p}.participants")
        if not parts:
            raise SchemaError(f"{p}.participants", "at least one participant required")
        for j, pid in enumerate(parts):
            if ck.string(pid, f"{p}.participants[{j}]") not in seen:
                raise DanglingReference(f"{p}.participants[{j}]", f"unknown object id {pid!r}")
        start = ck.number(e["start"], f"{p}.start")
        end = ck.number(e["end"], f"{p}.end")
        if end < start:
            raise SchemaError(f"{p}.end", "event duration must be non-negative")
        if start < 0 or end > horizon:
            raise SchemaError(f"{p}", f"event interval must lie within [0, {horizon}]")
        events.append(EventSpec(etype, tuple(parts), start, end))

    return SemanticScene(scene_id, scenario, tuple(targets), tuple(background),
                         tuple(relations), tuple(events), horizon)


def serialize_scene(scene: SemanticScene) -> str:
    return json.dumps(scene.to_document(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# conditioning code


def _bucket(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % HASH_BUCKETS


def observed_aspect(target: TargetSpec) -> np.ndarray:
    """Unit vector, in the target body frame, pointing from the target to the station at the origin."""
    p = np.asarray(target.position, dtype=float)
    r = np.linalg.norm(p)
    if r == 0.0:
        return np.zeros(3)
    u = -p / r
    c, s = math.cos(target.heading), math.sin(target.heading)
    return np.array([c * u[0] + s * u[1], -s * u[0] + c * u[1], u[2]])


def encode_scene(scene: SemanticScene) -> SemanticCode:
    """Deterministic fixed-length feature embedding of a scene.

    Layout (remaining entries zero):

    ====== =====================================================
    0:5    one-hot scenario class (4 classes + other)
    5:7    target counts per class (vehicle, uav)
    7:23   hashed component / material / background-kind tokens
    23:26  relation predicate counts
    26:29  event type counts
    29:32  mean speed, mean rotation rate, occluder volume fraction
    32:35  mean observed aspect (body-frame direction to the station)
    ====== =====================================================
    """
    v = np.zeros(CODE_DIM)
    v[(*SCENARIO_CLASSES, OTHER).index(scene.scenario_class)] = 1.0
    for t in scene.targets:
        v[5 + TARGET_CLASSES.index(t.cls)] += 1.0
        for c in t.components:
            v[7 + _bucket(f"component:{c.part}")] += c.count
    for b in scene.background:
        v[7 + _bucket(f"material:{b.material_class}")] += 1.0
        v[7 + _bucket(f"kind:{b.kind}")] += 1.0
    for r in scene.relations:
        v[23 + PREDICATES.index(r.predicate)] += 1.0
    for e in scene.events:
        v[26 + EVENT_TYPES.index(e.type)] += 1.0

    if scene.targets:
        speeds = [np.linalg.norm(t.velocity) for t in scene.targets]
        v[29] = min(float(np.mean(speeds)) / _SPEED_RANGE, 1.0)
        rates = [c.rate_hz for t in scene.targets for c in t.components for _ in range(c.count)]
        v[30] = min(float(np.mean(rates)) / _ROTATION_RANGE, 1.0) if rates else 0.0
        v[32:35] = np.mean([observed_aspect(t) for t in scene.targets], axis=0)
    total = sum(b.volume for b in scene.background)
    if total > 0:
        v[31] = sum(b.volume for b in scene.background if b.acts_as_occluder) / total
    return SemanticCode(v)


def scene_distance(a: SemanticCode, b: SemanticCode) -> float:
    va, vb = np.asarray(getattr(a, "values", a), float), np.asarray(getattr(b, "values", b), float)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"code shapes differ: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))
