"""Bundled example maps and JSON map parsing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .numerics import ComplexPoly
from .poly_space import PolyMap
from .rat_space import RationalMap

_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_COEFFS = {"type": "array", "items": _PAIR, "minItems": 1}

MAP_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "poly"},
                "degree": {"type": "integer", "minimum": 2},
                "coeffs": _COEFFS,
                "real": {"type": "boolean"},
            },
            "required": ["type", "degree", "coeffs"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "rational"},
                "sigma": _PAIR,
                "b": _PAIR,
                "P": _COEFFS,
                "Q": _COEFFS,
            },
            "required": ["type", "sigma", "b", "P", "Q"],
            "additionalProperties": False,
        },
    ]
}

FIXTURE_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "map": MAP_SCHEMA,
        "expected": {"type": "object"},
        "provenance": {"type": "string"},
    },
    "required": ["name", "map", "expected", "provenance"],
}


class MapFormatError(ValueError):
    """A map definition that is not valid JSON or fails the schema."""


def _complex(pair) -> complex:
    return complex(pair[0], pair[1])


def map_from_json(doc: dict):
    """Build a ``PolyMap`` or ``RationalMap`` from a validated definition.

    Polynomial ``coeffs`` are ``a_1..a_{d-1}``; rational ``P`` and ``Q`` are
    highest degree first.
    """
    try:
        jsonschema.validate(doc, MAP_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise MapFormatError(f"invalid map definition: {exc.message}") from exc
    try:
        if doc["type"] == "poly":
            return PolyMap(doc["degree"], tuple(_complex(c) for c in doc["coeffs"]), real=doc.get("real", False))
        return RationalMap(
            _complex(doc["sigma"]),
            _complex(doc["b"]),
            ComplexPoly(tuple(_complex(c) for c in doc["P"])),
            ComplexPoly(tuple(_complex(c) for c in doc["Q"])),
        )
    except ValueError as exc:
        raise MapFormatError(str(exc)) from exc


@dataclass(frozen=True)
class Fixture:
    name: str
    map_json: dict
    expected: dict
    provenance: str

    @property
    def map(self):
        return map_from_json(self.map_json)


def _fixture_dir():
    return resources.files("critlab") / "fixtures"


def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in _fixture_dir().iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> Fixture:
    path = _fixture_dir() / f"{name}.json"
    if not path.is_file():
        raise MapFormatError(f"no bundled fixture named {name!r}")
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, FIXTURE_SCHEMA)
    return Fixture(doc["name"], doc["map"], doc["expected"], doc["provenance"])


def all_fixtures() -> list[Fixture]:
    return [load_fixture(n) for n in fixture_names()]


def load_map(source: str):
    """``source`` is a path to a map JSON file (or a fixture file) or the
    name of a bundled fixture."""
    path = Path(source)
    if path.is_file():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise MapFormatError(f"{source}: {exc}") from exc
        if isinstance(doc, dict) and "map" in doc and "type" not in doc:
            doc = doc["map"]
        return map_from_json(doc)
    if source in fixture_names():
        return load_fixture(source).map
    raise MapFormatError(f"{source!r} is neither a readable file nor a fixture name")
