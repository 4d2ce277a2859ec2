import json

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec3 = st.lists(finite, min_size=3, max_size=3)


@st.composite
def scene_documents(draw, cls=None):
    """Random valid scene documents with consistent references."""
    n_t = draw(st.integers(0, 3))
    n_b = draw(st.integers(0 if n_t else 1, 3))
    targets = []
    for i in range(n_t):
        c = cls or draw(st.sampled_from(["vehicle", "uav"]))
        part = "wheel" if c == "vehicle" else "rotor"
        targets.append({
            "id": f"t{i}", "class": c, "position": draw(vec3), "velocity": draw(vec3),
            "heading": draw(st.floats(-3.2, 3.2)),
            "components": [{"part": part, "count": draw(st.integers(1, 4)),
                            "rate_hz": draw(st.floats(0, 90))}],
        })
    background = []
    for i in range(n_b):
        lo = draw(vec3)
        ext = draw(st.lists(st.floats(0.5, 30), min_size=3, max_size=3))
        background.append({
            "id": f"b{i}", "kind": draw(st.sampled_from(["building", "vegetation", "roadside", "kiosk"])),
            "box": {"min": lo, "max": [a + e for a, e in zip(lo, ext)]},
            "material_class": draw(st.sampled_from(["concrete", "glass", "metal", "foliage"])),
        })
    ids = [t["id"] for t in targets] + [b["id"] for b in background]
    relations = [{"subject": draw(st.sampled_from(ids)), "predicate": draw(st.sampled_from(["blocks", "adjacent_to", "approaches"])),
                  "object": draw(st.sampled_from(ids))} for _ in range(draw(st.integers(0, 2)))]
    events = []
    for _ in range(draw(st.integers(0, 2))):
        a, b = sorted([draw(st.floats(0, 10)), draw(st.floats(0, 10))])
        events.append({"type": draw(st.sampled_from(["crossing", "converging", "loitering"])),
                       "participants": [draw(st.sampled_from(ids))], "start": a, "end": b})
    return {"scene_id": draw(st.text("abcxyz", min_size=1, max_size=6)),
            "scenario_class": draw(st.sampled_from(["urban_street", "highway", "indoor", "open_field", "harbour"])),
            "targets": targets, "background": background, "relations": relations, "events": events}


@pytest.fixture
def street_doc():
    return {
        "scene_id": "street",
        "scenario_class": "urban_street",
        "targets": [{"id": "car", "class": "vehicle", "position": [30.0, 5.0, 0.0], "velocity": [-8.0, 0.0, 0.0],
                     "heading": 3.14159, "components": [{"part": "wheel", "count": 4, "rate_hz": 6.0}]}],
        "background": [{"id": "bldg1", "kind": "building", "box": {"min": [10, 12, 0], "max": [40, 30, 20]},
                        "material_class": "concrete"}],
        "relations": [{"subject": "bldg1", "predicate": "adjacent_to", "object": "car"}],
        "events": [{"type": "crossing", "participants": ["car"], "start": 1.0, "end": 4.0}],
    }


@pytest.fixture
def street_json(street_doc, tmp_path):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(street_doc))
    return p


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the capture mode."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
