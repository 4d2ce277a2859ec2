import json
from importlib import resources

import jsonschema
import numpy as np
import pytest
from hypothesis import given

from conftest import scene_documents
from stcm.errors import DanglingReference, DimensionMismatch, SchemaError
from stcm.semantics import (CODE_DIM, SemanticCode, encode_scene, scene_distance, serialize_scene,
                            validate_scene)


def minimal():
    return {"scenario_class": "urban_street", "targets": [{"id": "t0", "class": "vehicle"}]}


def test_minimal_document():
    scene = validate_scene(minimal())
    assert len(scene.targets) == 1 and len(scene.relations) == 0
    t = scene.targets[0]
    assert t.velocity == (0.0, 0.0, 0.0) and t.heading == 0.0


def test_building_defaults_to_occluder():
    doc = {"scenario_class": "indoor", "background": [
        {"id": "b", "kind": "building", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}},
        {"id": "v", "kind": "vegetation", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}}]}
    b, v = validate_scene(doc).background
    assert b.acts_as_occluder and not v.acts_as_occluder


def test_dangling_relation():
    doc = minimal() | {"relations": [{"subject": "t0", "predicate": "blocks", "object": "bldg9"}]}
    with pytest.raises(DanglingReference) as ei:
        validate_scene(doc)
    assert "relations[0].object" in ei.value.path


def test_event_end_before_start():
    doc = minimal() | {"events": [{"type": "crossing", "participants": ["t0"], "start": 3.0, "end": 1.0}]}
    with pytest.raises(SchemaError) as ei:
        validate_scene(doc)
    assert ei.value.path.endswith(".end")


def test_event_outside_horizon():
    doc = minimal() | {"horizon": 2.0,
                       "events": [{"type": "loitering", "participants": ["t0"], "start": 0.0, "end": 3.0}]}
    with pytest.raises(SchemaError):
        validate_scene(doc)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("scenario_class"), "$.scenario_class"),
    (lambda d: d["targets"][0].update({"class": "ship"}), "$.targets[0].class"),
    (lambda d: d["targets"][0].update({"position": [1, 2]}), "$.targets[0].position"),
    (lambda d: d["targets"][0].update({"components": [{"part": "wheel", "rate_hz": -1}]}),
     "$.targets[0].components[0].rate_hz"),
    (lambda d: d.update({"colour": "red"}), "$.colour"),
])
def test_first_violation_is_named(mutate, path):
    doc = minimal()
    mutate(doc)
    with pytest.raises(SchemaError) as ei:
        validate_scene(doc)
    assert ei.value.path == path


def test_empty_scene_rejected():
    with pytest.raises(SchemaError):
        validate_scene({"scenario_class": "indoor"})


def test_nonpositive_box_rejected():
    doc = {"scenario_class": "indoor", "background": [
        {"id": "b", "kind": "building", "box": {"min": [0, 0, 0], "max": [1, 0, 1]}}]}
    with pytest.raises(SchemaError):
        validate_scene(doc)


def test_duplicate_ids_rejected():
    doc = minimal()
    doc["targets"].append({"id": "t0", "class": "uav"})
    with pytest.raises(SchemaError):
        validate_scene(doc)


def test_unknown_tokens_map_to_other():
    doc = minimal() | {"scenario_class": "harbour"}
    doc["targets"][0]["components"] = [{"part": "propeller"}]
    scene = validate_scene(doc)
    assert scene.scenario_class == "other"
    assert scene.targets[0].components[0].part == "other"


def test_lenient_mode_drops_unknown_fields():
    doc = minimal() | {"colour": "red"}
    with pytest.warns(UserWarning):
        scene = validate_scene(doc, strict=False)
    assert len(scene.targets) == 1


def test_malformed_json():
    with pytest.raises(SchemaError):
        validate_scene("{not json")


@given(scene_documents())
def test_round_trip(doc):
    scene = validate_scene(doc)
    assert validate_scene(serialize_scene(scene)) == scene


@given(scene_documents())
def test_encoding_is_pure(doc):
    scene = validate_scene(doc)
    a, b = encode_scene(scene), encode_scene(validate_scene(json.dumps(doc)))
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values.shape == (CODE_DIM,) and np.all(np.isfinite(a.values))


def test_zero_targets_count_block():
    doc = {"scenario_class": "indoor", "background": [
        {"id": "b", "kind": "building", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}}]}
    assert np.all(encode_scene(validate_scene(doc)).values[5:7] == 0)


def test_class_swap_changes_code():
    a = minimal()
    b = minimal()
    b["targets"][0]["class"] = "uav"
    assert np.any(encode_scene(validate_scene(a)).values != encode_scene(validate_scene(b)).values)


def test_scene_distance_examples():
    x = SemanticCode(np.arange(CODE_DIM, dtype=float))
    y = SemanticCode(np.ones(CODE_DIM))
    assert scene_distance(x, x) == 0.0
    assert scene_distance(x, y) == scene_distance(y, x)
    e = np.zeros(CODE_DIM)
    e[0] = 1.0
    assert scene_distance(SemanticCode(np.zeros(CODE_DIM)), SemanticCode(e)) == 1.0
    with pytest.raises(DimensionMismatch):
        scene_distance(x, np.zeros(3))


def test_code_dimension_enforced():
    with pytest.raises(DimensionMismatch):
        SemanticCode(np.zeros(CODE_DIM + 1))
    with pytest.raises(ValueError):
        SemanticCode(np.full(CODE_DIM, np.nan))


def _random_scene(cls, rng):
    part = "wheel" if cls == "vehicle" else "rotor"
    n = int(rng.integers(1, 4))
    targets = [{"id": f"t{i}", "class": cls, "position": rng.uniform(-50, 50, 3).tolist(),
                "velocity": rng.uniform(-10, 10, 3).tolist(), "heading": float(rng.uniform(-3, 3)),
                "components": [{"part": part, "count": int(rng.integers(1, 5)), "rate_hz": float(rng.uniform(0, 90))}]}
               for i in range(n)]
    scenario = ["urban_street", "highway", "indoor", "open_field"][int(rng.integers(4))]
    return encode_scene(validate_scene({"scenario_class": scenario, "targets": targets}))


def test_interclass_separation():
    rng = np.random.default_rng(5)
    veh = [_random_scene("vehicle", rng) for _ in range(40)]
    uav = [_random_scene("uav", rng) for _ in range(40)]

    def mean_dist(a, b, same):
        return np.mean([scene_distance(x, y) for i, x in enumerate(a) for j, y in enumerate(b)
                        if not same or i < j])

    intra = 0.5 * (mean_dist(veh, veh, True) + mean_dist(uav, uav, True))
    assert mean_dist(veh, uav, False) > intra


def _schema():
    return json.loads(resources.files("stcm").joinpath("data/scene.schema.json").read_text())


def test_schema_file_accepts_example(street_doc):
    jsonschema.validate(street_doc, _schema())
    jsonschema.validate(validate_scene(street_doc).to_document(), _schema())


@given(scene_documents())
def test_schema_file_agrees_with_validator(doc):
    jsonschema.validate(doc, _schema())


def test_schema_file_rejects_unknown_field():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(minimal() | {"colour": "red"}, _schema())
