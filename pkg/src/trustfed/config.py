"""Scenario configuration: a single JSON document mapped onto ScenarioConfig.

Every field has a default except ``seed``. Unknown keys are rejected so
typos cannot silently fall back to defaults. Error messages carry the line
of the offending key.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from pathlib import Path
from typing import Any

from .domain import (FLParams, GAParams, MaliciousEntry, ObjectiveWeights, PopulationSpec, ScenarioConfig,
                     Thresholds, TreeParams, TrustParams)
from .errors import ConfigError

SECTIONS = {
    "population": PopulationSpec,
    "thresholds": Thresholds,
    "trust": TrustParams,
    "ga": GAParams,
    "fl": FLParams,
    "tree": TreeParams,
}
TOP_LEVEL = {"seed", "name", "weights", "malicious", "dismissal_fraction", "selection", "random_select_count",
             "initial_trust", "trust_enabled", *SECTIONS}
TUPLE_FIELDS = {"alphas", "join_window", "clients"}


def _line_of(text: str, key: str | None) -> int:
    if key is None or not text:
        return 1
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def _fail(text: str, key: str | None, msg: str):
    raise ConfigError(f"line {_line_of(text, key)}: {msg}")


def _coerce(value, default, name: str, text: str):
    """Check a JSON value against the type of the dataclass default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            _fail(text, name, f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(text, name, f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(text, name, f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            _fail(text, name, f"{name} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            _fail(text, name, f"{name} must be a list")
        return tuple(value)
    return value


def _section(cls, raw: Any, name: str, text: str):
    if not isinstance(raw, dict):
        _fail(text, name, f"{name} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            _fail(text, key, f"unknown field {name}.{key}")
        f = known[key]
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = ""  # required fields are all strings
        kwargs[key] = _coerce(value, default, key, text)
    for fname, f in known.items():
        if fname not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            _fail(text, name, f"missing required field {name}.{fname}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        _fail(text, name, f"{name}: {exc}")


def _weights(raw, text: str) -> ObjectiveWeights:
    try:
        if isinstance(raw, list):
            return ObjectiveWeights.from_sequence(raw)
        if isinstance(raw, dict):
            return _section(ObjectiveWeights, raw, "weights", text)
    except ConfigError as exc:
        if str(exc).startswith("invalid-config: line"):
            raise
        _fail(text, "weights", str(exc))
    _fail(text, "weights", "weights must be a list of 5 numbers or an object w1..w5")


def config_from_dict(doc: dict, text: str = "") -> ScenarioConfig:
    if not isinstance(doc, dict):
        _fail(text, None, "top level must be a JSON object")
    for key in doc:
        if key not in TOP_LEVEL:
            _fail(text, key, f"unknown field {key}")
    if "seed" not in doc:
        _fail(text, None, "missing required field seed")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        _fail(text, "seed", "seed must be a non-negative integer")
    kwargs: dict[str, Any] = {"seed": seed}
    for name, cls in SECTIONS.items():
        if name in doc:
            kwargs[name] = _section(cls, doc[name], name, text)
    if "weights" in doc:
        kwargs["weights"] = _weights(doc["weights"], text)
    if "malicious" in doc:
        if not isinstance(doc["malicious"], list):
            _fail(text, "malicious", "malicious must be a list")
        kwargs["malicious"] = tuple(_section(MaliciousEntry, m, "malicious", text) for m in doc["malicious"])
    defaults = ScenarioConfig.__dataclass_fields__
    for key in ("name", "dismissal_fraction", "selection", "random_select_count", "initial_trust",
                "trust_enabled"):
        if key in doc:
            kwargs[key] = _coerce(doc[key], defaults[key].default, key, text)
    try:
        return ScenarioConfig(**kwargs)
    except ConfigError as exc:
        first = str(exc).split(": ", 1)[-1]
        field = first.split(":", 1)[0].split(".")[-1].split("[")[0]
        _fail(text, field, first)
    except ValueError as exc:
        _fail(text, None, str(exc))


def parse_config(text: str) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc, text)


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain JSON-ready view with every default spelled out."""
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    d = conv(cfg)
    d["population"].pop("seed", None)  # the scenario seed drives the population
    return d


def content_hash(data: bytes) -> str:
    """Git-style blob hash of a file's bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
