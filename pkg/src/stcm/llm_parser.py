"""Free-text scene descriptions to validated scene documents via an OpenAI-compatible chat endpoint."""

from __future__ import annotations

import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .errors import OfflineMode, ParseExhausted, SchemaError, TransportError
from .semantics import (BACKGROUND_KINDS, EVENT_TYPES, MATERIAL_CLASSES, PREDICATES, SCENARIO_CLASSES,
                        TARGET_CLASSES, SemanticScene, validate_scene)

log = logging.getLogger(__name__)

API_KEY_ENV = "STCM_LLM_API_KEY"


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = ""
    model_name: str = ""
    api_key: str = field(default_factory=lambda: os.environ.get(API_KEY_ENV, ""), repr=False)
    max_retries: int = 2
    timeout: float = 30.0
    temperature: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")


def _choices(values) -> str:
    return " | ".join(f'"{v}"' for v in values)


_PROMPT = f"""\
You convert natural-language descriptions of radio propagation environments into a
structured scene document for an ISAC channel simulator.

Describe the environment on four semantic levels:
1. component level - salient parts of each target: "components", each with "part"
   (e.g. "wheel", "rotor"), "count" (integer >= 1) and "rate_hz" (rotation rate, >= 0).
2. object level - entities and their behaviour: "targets" with "id", "class"
   ({_choices(TARGET_CLASSES)}), "position" [x, y, z] in meters, "velocity" [vx, vy, vz] in m/s,
   "heading" in radians; "background" objects with "id", "kind" ({_choices(BACKGROUND_KINDS)}),
   "box" {{"min": [x, y, z], "max": [x, y, z]}} in meters, "material_class"
   ({_choices(MATERIAL_CLASSES)}) and "acts_as_occluder" (boolean).
3. scene level - context and arrangement: "scenario_class" ({_choices(SCENARIO_CLASSES)}) and
   "relations", each with "subject", "predicate" ({_choices(PREDICATES)}) and "object" (object ids).
4. intent level - events unfolding over time: "events", each with "type"
   ({_choices(EVENT_TYPES)}), "participants" (object ids), "start" and "end" in seconds.

Top-level fields: "scene_id", "scenario_class", "horizon" (seconds), "targets", "background",
"relations", "events". Coordinates are relative to the observing base station at the origin.
Every id referenced in relations or events must belong to a target or background object.

Output rules:
- Reply with exactly one JSON object and nothing else: no prose, no markdown fences.
- Use only the field names listed above; do not invent fields.
- Use only the listed enumeration values.
- If a quantity is not stated, choose a plausible value consistent with the description.
"""


def build_system_prompt() -> str:
    return _PROMPT


def extract_json_document(text: str) -> dict:
    """First balanced JSON object in ``text``; raises SchemaError if none decodes."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise SchemaError("$", "response contains no JSON object")


def redact(headers: dict) -> dict:
    return {k: ("<redacted>" if k.lower() == "authorization" else v) for k, v in headers.items()}


class LlmClient:
    """Chat-completions client. ``last_retries`` holds the re-asks used by the most recent parse."""

    def __init__(self, cfg: LlmEndpointConfig):
        self.cfg = cfg
        self.last_retries = 0

    def complete(self, messages: list[dict]) -> str:
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        body = json.dumps({"model": self.cfg.model_name, "messages": messages,
                           "temperature": self.cfg.temperature}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        log.debug("POST %s headers=%s body=%s", url, redact(headers), body.decode("utf-8"))
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.cfg.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise TransportError(f"HTTP {exc.code} from {url}") from None
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"cannot reach {url}: {exc}") from None
        except json.JSONDecodeError:
            raise TransportError(f"non-JSON response from {url}") from None
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("response lacks choices[0].message.content") from None

    def parse(self, text: str) -> SemanticScene:
        if not self.cfg.base_url:
            raise OfflineMode("no LLM endpoint configured; supply a scene document directly")
        messages = [{"role": "system", "content": build_system_prompt()},
                    {"role": "user", "content": text}]
        last_error = None
        for attempt in range(self.cfg.max_retries + 1):
            self.last_retries = attempt
            reply = self.complete(messages)
            try:
                return validate_scene(extract_json_document(reply))
            except SchemaError as exc:
                last_error = exc
                log.info("attempt %d rejected: %s", attempt + 1, exc)
                messages += [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"The document is invalid: {exc}. "
                                                "Reply with a corrected JSON object only."},
                ]
        raise ParseExhausted(last_error, self.cfg.max_retries + 1)


def parse_text(text: str, cfg: LlmEndpointConfig) -> SemanticScene:
    return LlmClient(cfg).parse(text)
