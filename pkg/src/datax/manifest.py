"""Declarative manifests: YAML documents describing platform resources.

A manifest file holds one or more ``---``-separated documents, each
{kind, metadata: {name}, spec: ...}.  Parsing is strict: unknown keys at any
level are rejected with the document index, and YAML syntax errors carry the
line.  ``order_documents`` sorts a batch into dependency order (entities,
then sensors, streams in topological order, gadgets, databases) so users
never have to order files by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from datax.errors import ManifestError

KINDS = (
    "Driver", "AnalyticsUnit", "Actuator",
    "Sensor", "Stream", "Gadget", "Database",
)

ENTITY_KIND_BY_MANIFEST = {
    "Driver": "driver",
    "AnalyticsUnit": "analytics_unit",
    "Actuator": "actuator",
}

# Apply phase per kind; streams additionally get topo-sorted inside phase 2.
_PHASE = {
    "Driver": 0, "AnalyticsUnit": 0, "Actuator": 0,
    "Sensor": 1, "Stream": 2, "Gadget": 3, "Database": 4,
}

# required spec keys, optional spec keys
_SPEC_KEYS: dict[str, tuple[set[str], set[str]]] = {
    "Driver": ({"executable"}, {"schema", "migration"}),
    "AnalyticsUnit": ({"executable"}, {"schema", "migration"}),
    "Actuator": ({"executable"}, {"schema", "migration"}),
    "Sensor": ({"driver"}, {"config", "node_pin"}),
    "Stream": ({"analytics_unit", "inputs"}, {"config", "replicas"}),
    "Gadget": ({"actuator", "inputs"}, {"config", "node_pin"}),
    "Database": ({"owner"}, set()),
}


@dataclass(frozen=True)
class ManifestDoc:
    """One parsed document; ``index`` is its position in the file."""

    kind: str
    name: str
    spec: dict[str, Any] = field(default_factory=dict)
    index: int = 0

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "metadata": {"name": self.name},
            "spec": self.spec,
        }


def parse_manifests(text: str) -> list[ManifestDoc]:
    """Parse a multi-document manifest file, strictly."""
    try:
        raw_docs = list(yaml.safe_load_all(text))
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ManifestError(f"manifest is not valid YAML: {exc}", line=line)

    docs: list[ManifestDoc] = []
    index = 0
    for raw in raw_docs:
        if raw is None:
            continue
        docs.append(_check_document(raw, index))
        index += 1
    return docs


def _check_document(raw: Any, index: int) -> ManifestDoc:
    if not isinstance(raw, dict):
        raise ManifestError("document is not a map", index=index)
    unknown = set(raw) - {"kind", "metadata", "spec"}
    if unknown:
        raise ManifestError(
            f"unknown top-level key(s) {sorted(unknown)}", index=index
        )
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ManifestError(f"unknown kind {kind!r}", index=index)
    metadata = raw.get("metadata")
    if not isinstance(metadata, dict) or set(metadata) != {"name"}:
        raise ManifestError(
            "metadata must be a map with exactly one key: name", index=index
        )
    name = metadata["name"]
    if not isinstance(name, str) or not name:
        raise ManifestError("metadata.name must be a non-empty string", index=index)
    spec = raw.get("spec") or {}
    if not isinstance(spec, dict):
        raise ManifestError("spec must be a map", index=index)
    required, optional = _SPEC_KEYS[kind]
    unknown = set(spec) - required - optional
    if unknown:
        raise ManifestError(
            f"{kind} spec: unknown key(s) {sorted(unknown)}", index=index
        )
    missing = required - set(spec)
    if missing:
        raise ManifestError(
            f"{kind} spec: missing required key(s) {sorted(missing)}", index=index
        )
    return ManifestDoc(kind=kind, name=name, spec=dict(spec), index=index)


def order_documents(docs: list[ManifestDoc]) -> list[ManifestDoc]:
    """Dependency order: entities, sensors, streams (topo), gadgets, databases.

    Stream ordering only considers edges inside the batch; anything left by
    a cycle keeps text order so the registry can refuse it per document.
    """
    phases: dict[int, list[ManifestDoc]] = {p: [] for p in range(5)}
    for doc in docs:
        phases[_PHASE[doc.kind]].append(doc)
    phases[2] = _topo_streams(phases[2])
    return [doc for p in range(5) for doc in phases[p]]


def _topo_streams(streams: list[ManifestDoc]) -> list[ManifestDoc]:
    names = {doc.name for doc in streams}
    pending = list(streams)
    placed: set[str] = set()
    ordered: list[ManifestDoc] = []
    while pending:
        ready = [
            doc for doc in pending
            if all(
                i not in names or i in placed
                for i in doc.spec.get("inputs", []) or []
            )
        ]
        if not ready:
            ordered.extend(pending)  # cycle: let admission refuse these
            break
        for doc in ready:
            ordered.append(doc)
            placed.add(doc.name)
            pending.remove(doc)
    return ordered


def load_manifest_file(path: str) -> list[ManifestDoc]:
    with open(path, encoding="utf-8") as fh:
        return parse_manifests(fh.read())
