"""JSON problem specifications: schema validation and construction of the model objects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .coefficients import CoefficientFamily, SourceData
from .errors import ValidationError
from .geometry import DomainSpec

SCHEMA_VERSION = "1.0"

_EXPR = {"oneOf": [
    {"type": "string"},
    {"type": "number"},
    {"type": "object", "additionalProperties": {"type": ["string", "number"]}},
]}

SCHEMA = {
    "type": "object",
    "required": ["domain"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "string"},
        "name": {"type": "string"},
        "domain": {
            "type": "object",
            "required": ["vertices", "subdomains"],
            "additionalProperties": False,
            "properties": {
                "vertices": {"type": "array", "minItems": 3,
                             "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                       "items": {"type": "number"}}},
                "subdomains": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["loop"], "additionalProperties": False,
                    "properties": {
                        "name": {"type": "string"},
                        "loop": {"type": "array", "minItems": 3, "items": {"type": "integer"}},
                        "holes": {"type": "array", "items": {
                            "type": "array", "minItems": 3, "items": {"type": "integer"}}},
                    }}},
                "boundary": {"type": "object", "additionalProperties": False, "properties": {
                    "default": {"enum": ["dirichlet", "neumann"]},
                    "dirichlet": {"type": "array", "items": {"$ref": "#/$defs/edge"}},
                    "neumann": {"type": "array", "items": {"$ref": "#/$defs/edge"}},
                }},
                "interface": {"type": "array", "items": {"oneOf": [
                    {"$ref": "#/$defs/edge"},
                    {"type": "object", "required": ["edge"], "properties": {"edge": {"$ref": "#/$defs/edge"}}},
                ]}},
                "smooth": {"type": "boolean"},
            },
        },
        "coefficients": {
            "type": "object", "additionalProperties": False,
            "properties": {k: _EXPR for k in ("a", "a11", "a12", "a21", "a22", "b1", "b2", "c")},
        },
        "data": {
            "type": "object", "additionalProperties": False,
            "properties": {k: _EXPR for k in ("f", "g", "h")},
        },
        "discretization": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "degree": {"type": "integer", "minimum": 1, "maximum": 4},
                "level": {"type": "integer", "minimum": 0, "maximum": 10},
                "target_h": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["uniform", "graded"]},
            },
        },
        "parameters": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "s": {"type": "integer", "minimum": 0, "maximum": 16},
                "family": {"enum": ["affine", "general"]},
                "k0": {"oneOf": [{"type": "integer", "minimum": 0}, {"enum": ["omega", "inf"]}]},
            },
        },
    },
    "$defs": {"edge": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "integer"}}},
}


def _json_path(err: jsonschema.ValidationError) -> str:
    path = "$"
    for part in err.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


@dataclass
class ProblemSpec:
    raw: dict
    domain: DomainSpec
    fam: CoefficientFamily
    data: SourceData
    degree: int = 1
    level: int = 0
    target_h: float | None = None
    mode: str = "uniform"
    extra: dict = field(default_factory=dict)

    @property
    def s(self) -> int:
        return self.fam.s


def validate(raw) -> None:
    """Schema validation; the error cites the JSON path of the first violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ValidationError(err.message, _json_path(err))
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ValidationError(f"unsupported schema version {version!r}", "$.schema_version")


def from_dict(raw) -> ProblemSpec:
    validate(raw)
    domain = DomainSpec.from_dict(raw["domain"], "$.domain")
    par = raw.get("parameters", {})
    s = int(par.get("s", 0))
    coeffs = dict(raw.get("coefficients", {}))
    fam = CoefficientFamily.build(**coeffs, s=s, family=par.get("family", "general"),
                                  k0=par.get("k0", "omega"), domain=domain, path="$.coefficients")
    data = SourceData.build(**raw.get("data", {}), s=s, domain=domain, path="$.data")
    disc = raw.get("discretization", {})
    return ProblemSpec(raw, domain, fam, data, degree=int(disc.get("degree", 1)),
                       level=int(disc.get("level", 0)), target_h=disc.get("target_h"),
                       mode=disc.get("mode", "uniform"))


def load(path) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read problem file: {exc.strerror}", "$") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                              "$") from None
    if not isinstance(raw, dict):
        raise ValidationError("problem spec must be a JSON object", "$")
    return from_dict(raw)


__all__ = ["SCHEMA", "SCHEMA_VERSION", "ProblemSpec", "validate", "from_dict", "load"]
