"""Typed configuration schemas and validation.

A schema is a flat, closed-world map of field name -> FieldSpec.  ``None`` in
schema position means "no schema supplied": any configuration map is accepted.
An explicitly empty schema accepts only the empty map.  Validation never
raises; failure is data (a report), so callers decide what a failure means.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

FIELD_TYPES = ("string", "int", "float", "bool", "list", "map")


def type_matches(type_name: str, value: Any) -> bool:
    """True when ``value`` inhabits the named config type.

    bool is deliberately excluded from int/float (Python's bool subclasses
    int); int is acceptable where float is declared.
    """
    if isinstance(value, bool):
        return type_name == "bool"
    if type_name == "string":
        return isinstance(value, str)
    if type_name == "int":
        return isinstance(value, int)
    if type_name == "float":
        return isinstance(value, (int, float))
    if type_name == "bool":
        return False  # non-bool already excluded above
    if type_name == "list":
        return isinstance(value, list)
    if type_name == "map":
        return isinstance(value, dict) and all(isinstance(k, str) for k in value)
    return False


@dataclass(frozen=True)
class FieldSpec:
    """One field of a schema.  ``default=None`` means no default."""

    type: str
    required: bool = False
    default: Any = None


@dataclass(frozen=True)
class ConfigSchema:
    """Flat named-field schema (closed world: unknown fields are rejected)."""

    fields: dict[str, FieldSpec] = field(default_factory=dict)

    def problems(self) -> list[str]:
        """Structural problems that make this schema unusable."""
        out = []
        for name, spec in self.fields.items():
            if not name:
                out.append("empty field name")
            if spec.type not in FIELD_TYPES:
                out.append(f"{name}: unknown type {spec.type!r}")
                continue
            if spec.default is not None:
                if spec.required:
                    out.append(f"{name}: required field must not carry a default")
                elif not type_matches(spec.type, spec.default):
                    out.append(f"{name}: default does not match type {spec.type}")
        return out

    def to_doc(self) -> dict[str, dict[str, Any]]:
        doc: dict[str, dict[str, Any]] = {}
        for name, spec in self.fields.items():
            entry: dict[str, Any] = {"type": spec.type}
            if spec.required:
                entry["required"] = True
            if spec.default is not None:
                entry["default"] = spec.default
            doc[name] = entry
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "ConfigSchema":
        fields = {}
        for name, entry in doc.items():
            if not isinstance(entry, Mapping):
                raise ValueError(f"schema field {name!r}: expected a map")
            unknown = set(entry) - {"type", "required", "default"}
            if unknown:
                raise ValueError(
                    f"schema field {name!r}: unknown key(s) {sorted(unknown)}"
                )
            fields[str(name)] = FieldSpec(
                type=entry.get("type", ""),
                required=bool(entry.get("required", False)),
                default=entry.get("default"),
            )
        return cls(fields=fields)


@dataclass
class ValidationReport:
    """Outcome of validating a config against a schema.

    ``problems`` empty <=> valid; ``normalized`` is the input config with
    defaults filled in (None when invalid).
    """

    problems: list[dict[str, str]] = field(default_factory=list)
    normalized: Optional[dict[str, Any]] = None

    @property
    def valid(self) -> bool:
        return not self.problems


def validate_config(
    schema: Optional[ConfigSchema], config: Mapping[str, Any]
) -> ValidationReport:
    """Validate ``config`` against ``schema`` and fill defaults.

    With no schema every map is accepted unchanged.  Problems are one of
    missing-required, type-mismatch, unknown-field.
    """
    if schema is None:
        return ValidationReport(problems=[], normalized=copy.deepcopy(dict(config)))

    problems: list[dict[str, str]] = []
    normalized: dict[str, Any] = {}
    for name, spec in schema.fields.items():
        if name in config:
            value = config[name]
            if type_matches(spec.type, value):
                normalized[name] = copy.deepcopy(value)
            else:
                problems.append({
                    "field": name,
                    "kind": "type-mismatch",
                    "detail": f"expected {spec.type}",
                })
        elif spec.required:
            problems.append({
                "field": name,
                "kind": "missing-required",
                "detail": "required field missing",
            })
        elif spec.default is not None:
            normalized[name] = copy.deepcopy(spec.default)
    for key in config:
        if key not in schema.fields:
            problems.append({
                "field": str(key),
                "kind": "unknown-field",
                "detail": "not declared in schema",
            })
    if problems:
        return ValidationReport(problems=problems, normalized=None)
    return ValidationReport(problems=[], normalized=normalized)
