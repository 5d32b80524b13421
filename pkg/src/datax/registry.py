"""Authoritative store of platform entities and the admission logic.

All writes are serialized through one lock and validated before any state
changes, so every operation is atomic: it either commits in full or leaves
the registry untouched.  Admitted operations are appended to a JSON-lines
journal (fsynced per operation) and replayed on startup.

Wiring rules enforced here keep the system coherent: entities cannot be
deleted while referenced, streams form a DAG, sensors and their same-named
streams live and die together, and upgrades only land when every running
instance's configuration (after optional migration) fits the new schema.
"""

from __future__ import annotations

import copy
import json
import os
import re
import subprocess
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

from datax.config import ConfigSchema, validate_config
from datax.errors import (
    ActuatorMissing,
    AUMissing,
    CycleDetected,
    DriverMissing,
    DuplicateName,
    HasDependents,
    IncompatibleUpgrade,
    InUse,
    InvalidConfig,
    InvalidSchema,
    NotFound,
    RegistryError,
    UnknownInput,
)
from datax.proc import resolve_command

ENTITY_KINDS = ("driver", "analytics_unit", "actuator")

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")

MIGRATION_TIMEOUT_S = 10.0


class InvalidRecord(RegistryError):
    """Record is malformed (bad name, empty executable, bad replica count)."""

    def __init__(self, detail: str):
        super().__init__(detail)


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise InvalidRecord(f"invalid name {name!r}")


# --- records ---------------------------------------------------------------

@dataclass(frozen=True)
class EntityRecord:
    """A registered driver, analytics unit, or actuator."""

    name: str
    kind: str
    executable: str
    schema: Optional[ConfigSchema] = None
    version: int = 1

    def to_doc(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "executable": self.executable,
            "schema": None if self.schema is None else self.schema.to_doc(),
            "version": self.version,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "EntityRecord":
        schema = doc.get("schema")
        return cls(
            name=doc["name"],
            kind=doc["kind"],
            executable=doc["executable"],
            schema=None if schema is None else ConfigSchema.from_doc(schema),
            version=int(doc.get("version", 1)),
        )


@dataclass(frozen=True)
class SensorRecord:
    name: str
    driver: str
    config: dict[str, Any] = field(default_factory=dict)
    node_pin: Optional[str] = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "driver": self.driver,
            "config": self.config,
            "node_pin": self.node_pin,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "SensorRecord":
        return cls(
            name=doc["name"],
            driver=doc["driver"],
            config=dict(doc.get("config") or {}),
            node_pin=doc.get("node_pin"),
        )


@dataclass(frozen=True)
class StreamRecord:
    """A node of the stream DAG.

    ``replicas`` is a fixed positive int or "auto"; sensor streams always run
    exactly one driver instance and carry empty ``inputs``/``au_config``.
    """

    name: str
    producer_kind: str  # "sensor" | "analytics_unit"
    producer: str
    inputs: tuple[str, ...] = ()
    au_config: dict[str, Any] = field(default_factory=dict)
    replicas: Union[int, str] = 1

    def to_doc(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "producer_kind": self.producer_kind,
            "producer": self.producer,
            "inputs": list(self.inputs),
            "au_config": self.au_config,
            "replicas": self.replicas,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "StreamRecord":
        return cls(
            name=doc["name"],
            producer_kind=doc["producer_kind"],
            producer=doc["producer"],
            inputs=tuple(doc.get("inputs") or ()),
            au_config=dict(doc.get("au_config") or {}),
            replicas=doc.get("replicas", 1),
        )


@dataclass(frozen=True)
class GadgetRecord:
    name: str
    actuator: str
    inputs: tuple[str, ...] = ()
    config: dict[str, Any] = field(default_factory=dict)
    node_pin: Optional[str] = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "actuator": self.actuator,
            "inputs": list(self.inputs),
            "config": self.config,
            "node_pin": self.node_pin,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "GadgetRecord":
        return cls(
            name=doc["name"],
            actuator=doc["actuator"],
            inputs=tuple(doc.get("inputs") or ()),
            config=dict(doc.get("config") or {}),
            node_pin=doc.get("node_pin"),
        )


@dataclass(frozen=True)
class MigrationScript:
    """Converts one instance config to the next schema.

    The script reads the old config as one JSON document on stdin and writes
    the new config as one JSON document on stdout.  Exit status zero plus a
    parseable map means this instance migrated successfully.
    """

    executable: str

    def run(self, config: dict[str, Any]) -> dict[str, Any]:
        argv = resolve_command(self.executable)
        try:
            proc = subprocess.run(
                argv,
                input=json.dumps(config).encode(),
                capture_output=True,
                timeout=MIGRATION_TIMEOUT_S,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise MigrationFailed(f"script did not run: {exc}") from exc
        if proc.returncode != 0:
            raise MigrationFailed(f"script exited with status {proc.returncode}")
        try:
            out = json.loads(proc.stdout.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MigrationFailed(f"script output is not a JSON document: {exc}")
        if not isinstance(out, dict):
            raise MigrationFailed("script output is not a map")
        return out


class MigrationFailed(RegistryError):
    def __init__(self, detail: str):
        super().__init__(detail)


@dataclass
class UpgradeReport:
    """Per-instance outcome of an accepted upgrade."""

    name: str
    kind: str
    old_version: int
    new_version: int
    instances: list[dict[str, Any]] = field(default_factory=list)


# --- journal ---------------------------------------------------------------

class Journal:
    """Append-only log of admitted operations, one JSON document per line."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, entry: dict[str, Any]) -> None:
        self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def load(path: Union[str, Path]) -> list[dict[str, Any]]:
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return entries


# --- registry --------------------------------------------------------------

class Registry:
    """In-memory entity store with journal-backed persistence.

    Admission operations are serialized by one writer lock; reads hand out
    deep copies so callers never observe in-flight mutation.
    """

    def __init__(self, journal_path: Optional[Union[str, Path]] = None):
        self._lock = threading.RLock()
        self._entities: dict[tuple[str, str], EntityRecord] = {}
        self._sensors: dict[str, SensorRecord] = {}
        self._streams: dict[str, StreamRecord] = {}
        self._gadgets: dict[str, GadgetRecord] = {}
        self._listeners: list[Callable[[dict[str, Any]], None]] = []
        self._journal: Optional[Journal] = None
        if journal_path is not None:
            path = Path(journal_path)
            if path.exists():
                for entry in Journal.load(path):
                    self._apply(entry)
            self._journal = Journal(path)

    # -- wiring ------------------------------------------------------------

    def add_listener(self, fn: Callable[[dict[str, Any]], None]) -> None:
        """Call ``fn(entry)`` after every admitted operation."""
        self._listeners.append(fn)

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()

    def _commit(self, entry: dict[str, Any]) -> None:
        self._apply(entry)
        if self._journal is not None:
            self._journal.append(entry)

    def _notify(self, entry: dict[str, Any]) -> None:
        for fn in list(self._listeners):
            fn(entry)

    # -- reads -------------------------------------------------------------

    def get_entity(self, kind: str, name: str) -> EntityRecord:
        with self._lock:
            rec = self._entities.get((kind, name))
            if rec is None:
                raise NotFound(kind, name)
            return rec

    def get_sensor(self, name: str) -> SensorRecord:
        with self._lock:
            rec = self._sensors.get(name)
            if rec is None:
                raise NotFound("sensor", name)
            return copy.deepcopy(rec)

    def get_stream(self, name: str) -> StreamRecord:
        with self._lock:
            rec = self._streams.get(name)
            if rec is None:
                raise NotFound("stream", name)
            return copy.deepcopy(rec)

    def get_gadget(self, name: str) -> GadgetRecord:
        with self._lock:
            rec = self._gadgets.get(name)
            if rec is None:
                raise NotFound("gadget", name)
            return copy.deepcopy(rec)

    def list_entities(self, kind: Optional[str] = None) -> list[EntityRecord]:
        with self._lock:
            return sorted(
                (r for (k, _), r in self._entities.items() if kind in (None, k)),
                key=lambda r: (r.kind, r.name),
            )

    def list_sensors(self) -> list[SensorRecord]:
        with self._lock:
            return [copy.deepcopy(self._sensors[n]) for n in sorted(self._sensors)]

    def list_streams(self) -> list[StreamRecord]:
        with self._lock:
            return [copy.deepcopy(self._streams[n]) for n in sorted(self._streams)]

    def list_gadgets(self) -> list[GadgetRecord]:
        with self._lock:
            return [copy.deepcopy(self._gadgets[n]) for n in sorted(self._gadgets)]

    def dependents(self, name: str) -> list[str]:
        """Streams and gadgets that list ``name`` among their inputs."""
        with self._lock:
            if name not in self._streams:
                raise NotFound("stream", name)
            return self._dependents(name)

    def _dependents(self, name: str) -> list[str]:
        out = [s.name for s in self._streams.values() if name in s.inputs]
        out += [g.name for g in self._gadgets.values() if name in g.inputs]
        return sorted(out)

    def state_doc(self) -> dict[str, Any]:
        """Full registry state as one canonical document (tests, describe)."""
        with self._lock:
            return {
                "entities": {
                    f"{k}/{n}": r.to_doc()
                    for (k, n), r in sorted(self._entities.items())
                },
                "sensors": {n: r.to_doc() for n, r in sorted(self._sensors.items())},
                "streams": {n: r.to_doc() for n, r in sorted(self._streams.items())},
                "gadgets": {n: r.to_doc() for n, r in sorted(self._gadgets.items())},
            }

    # -- entity lifecycle ---------------------------------------------------

    def register_entity(self, record: EntityRecord) -> EntityRecord:
        _check_name(record.name)
        if record.kind not in ENTITY_KINDS:
            raise InvalidRecord(f"unknown entity kind {record.kind!r}")
        if not record.executable or not record.executable.strip():
            raise InvalidRecord("executable must be non-empty")
        if record.schema is not None:
            problems = record.schema.problems()
            if problems:
                raise InvalidSchema(problems)
        with self._lock:
            if (record.kind, record.name) in self._entities:
                raise DuplicateName(record.kind, record.name)
            stored = replace(record, version=1)
            entry = {"op": "register_entity", "record": stored.to_doc()}
            self._commit(entry)
        self._notify(entry)
        return stored

    def upgrade_entity(
        self,
        name: str,
        kind: str,
        new: EntityRecord,
        migration: Optional[MigrationScript] = None,
    ) -> UpgradeReport:
        """Replace an entity all-or-nothing.

        Accepted only when every referencing record's config (after migration,
        when supplied) validates against the new schema; on refusal the
        registry is left untouched.
        """
        if new.name != name or new.kind != kind:
            raise InvalidRecord("upgrade record name/kind must match the target")
        if not new.executable or not new.executable.strip():
            raise InvalidRecord("executable must be non-empty")
        if new.schema is not None:
            problems = new.schema.problems()
            if problems:
                raise InvalidSchema(problems)
        with self._lock:
            old = self._entities.get((kind, name))
            if old is None:
                raise NotFound(kind, name)
            owners = self._referencing_owners(kind, name)

            # Validation phase: no state is touched until every owner passes.
            failures: list[dict[str, str]] = []
            migrated: dict[str, dict[str, Any]] = {}
            outcomes: list[dict[str, Any]] = []
            for owner_key, config in owners:
                candidate = config
                action = "kept"
                if migration is not None:
                    try:
                        candidate = migration.run(config)
                        action = "migrated"
                    except MigrationFailed as exc:
                        failures.append({"owner": owner_key, "detail": str(exc)})
                        continue
                report = validate_config(new.schema, candidate)
                if not report.valid:
                    detail = "; ".join(
                        f"{p['field']}: {p['detail']}" for p in report.problems
                    )
                    failures.append({"owner": owner_key, "detail": detail})
                    continue
                migrated[owner_key] = candidate
                outcomes.append({"owner": owner_key, "action": action})
            if failures:
                raise IncompatibleUpgrade(name, failures)

            stored = replace(new, version=old.version + 1)
            entry = {
                "op": "upgrade_entity",
                "record": stored.to_doc(),
                "configs": migrated,
            }
            self._commit(entry)
        self._notify(entry)
        return UpgradeReport(
            name=name,
            kind=kind,
            old_version=old.version,
            new_version=stored.version,
            instances=outcomes,
        )

    def delete_entity(self, name: str, kind: str) -> None:
        with self._lock:
            if (kind, name) not in self._entities:
                raise NotFound(kind, name)
            referrers = [key for key, _ in self._referencing_owners(kind, name)]
            if referrers:
                raise InUse(name, referrers)
            entry = {"op": "delete_entity", "kind": kind, "name": name}
            self._commit(entry)
        self._notify(entry)

    def _referencing_owners(
        self, kind: str, name: str
    ) -> list[tuple[str, dict[str, Any]]]:
        """(owner key, config) for every record that references the entity."""
        owners: list[tuple[str, dict[str, Any]]] = []
        if kind == "driver":
            for s in self._sensors.values():
                if s.driver == name:
                    owners.append((f"sensor/{s.name}", dict(s.config)))
        elif kind == "analytics_unit":
            for s in self._streams.values():
                if s.producer_kind == "analytics_unit" and s.producer == name:
                    owners.append((f"stream/{s.name}", dict(s.au_config)))
        elif kind == "actuator":
            for g in self._gadgets.values():
                if g.actuator == name:
                    owners.append((f"gadget/{g.name}", dict(g.config)))
        return sorted(owners)

    # -- sensors, streams, gadgets ------------------------------------------

    def register_sensor(self, record: SensorRecord) -> SensorRecord:
        """Store the sensor and create its same-named stream atomically."""
        _check_name(record.name)
        with self._lock:
            driver = self._entities.get(("driver", record.driver))
            if driver is None:
                raise DriverMissing(record.driver)
            if record.name in self._sensors:
                raise DuplicateName("sensor", record.name)
            if record.name in self._streams:
                raise DuplicateName("stream", record.name)
            report = validate_config(driver.schema, record.config)
            if not report.valid:
                raise InvalidConfig(report.problems)
            entry = {"op": "register_sensor", "record": record.to_doc()}
            self._commit(entry)
        self._notify(entry)
        return record

    def create_stream(self, record: StreamRecord) -> StreamRecord:
        _check_name(record.name)
        if record.producer_kind != "analytics_unit":
            raise InvalidRecord("user-created streams must be produced by an AU")
        if not (record.replicas == "auto"
                or (isinstance(record.replicas, int)
                    and not isinstance(record.replicas, bool)
                    and record.replicas >= 1)):
            raise InvalidRecord("replicas must be a positive integer or 'auto'")
        with self._lock:
            # Self-reference is the one cycle a fresh stream can introduce;
            # report it as such rather than as a missing input.
            if record.name in record.inputs:
                raise CycleDetected(record.name)
            au = self._entities.get(("analytics_unit", record.producer))
            if au is None:
                raise AUMissing(record.producer)
            if record.name in self._streams or record.name in self._sensors:
                raise DuplicateName("stream", record.name)
            missing = sorted(set(record.inputs) - set(self._streams))
            if missing:
                raise UnknownInput(missing)
            report = validate_config(au.schema, record.au_config)
            if not report.valid:
                raise InvalidConfig(report.problems)
            if self._would_cycle(record):
                raise CycleDetected(record.name)
            entry = {"op": "create_stream", "record": record.to_doc()}
            self._commit(entry)
        self._notify(entry)
        return record

    def _would_cycle(self, record: StreamRecord) -> bool:
        """Check acyclicity of the graph with ``record`` added."""
        edges: dict[str, tuple[str, ...]] = {
            n: s.inputs for n, s in self._streams.items()
        }
        edges[record.name] = record.inputs
        seen: dict[str, int] = {}  # 1 = visiting, 2 = done

        def visit(node: str) -> bool:
            state = seen.get(node)
            if state == 1:
                return True
            if state == 2:
                return False
            seen[node] = 1
            for dep in edges.get(node, ()):
                if visit(dep):
                    return True
            seen[node] = 2
            return False

        return visit(record.name)

    def register_gadget(self, record: GadgetRecord) -> GadgetRecord:
        _check_name(record.name)
        with self._lock:
            actuator = self._entities.get(("actuator", record.actuator))
            if actuator is None:
                raise ActuatorMissing(record.actuator)
            if record.name in self._gadgets:
                raise DuplicateName("gadget", record.name)
            missing = sorted(set(record.inputs) - set(self._streams))
            if missing:
                raise UnknownInput(missing)
            report = validate_config(actuator.schema, record.config)
            if not report.valid:
                raise InvalidConfig(report.problems)
            entry = {"op": "register_gadget", "record": record.to_doc()}
            self._commit(entry)
        self._notify(entry)
        return record

    def delete_sensor(self, name: str) -> None:
        """Remove the sensor and its same-named stream as one operation."""
        with self._lock:
            if name not in self._sensors:
                raise NotFound("sensor", name)
            deps = self._dependents(name)
            if deps:
                raise HasDependents(name, deps)
            entry = {"op": "delete_sensor", "name": name}
            self._commit(entry)
        self._notify(entry)

    def delete_stream(self, name: str) -> None:
        with self._lock:
            stream = self._streams.get(name)
            if stream is None:
                raise NotFound("stream", name)
            if stream.producer_kind == "sensor":
                # Lifetime is tied to the sensor; only delete_sensor may
                # remove this stream.
                raise InUse(name, [f"sensor/{name}"])
            deps = self._dependents(name)
            if deps:
                raise HasDependents(name, deps)
            entry = {"op": "delete_stream", "name": name}
            self._commit(entry)
        self._notify(entry)

    def delete_gadget(self, name: str) -> None:
        with self._lock:
            if name not in self._gadgets:
                raise NotFound("gadget", name)
            entry = {"op": "delete_gadget", "name": name}
            self._commit(entry)
        self._notify(entry)

    # -- state transition (shared by commit and journal replay) --------------

    def _apply(self, entry: dict[str, Any]) -> None:
        op = entry["op"]
        if op == "register_entity":
            rec = EntityRecord.from_doc(entry["record"])
            self._entities[(rec.kind, rec.name)] = rec
        elif op == "upgrade_entity":
            rec = EntityRecord.from_doc(entry["record"])
            self._entities[(rec.kind, rec.name)] = rec
            for owner_key, config in entry["configs"].items():
                owner_kind, owner_name = owner_key.split("/", 1)
                if owner_kind == "sensor":
                    self._sensors[owner_name] = replace(
                        self._sensors[owner_name], config=dict(config)
                    )
                elif owner_kind == "stream":
                    self._streams[owner_name] = replace(
                        self._streams[owner_name], au_config=dict(config)
                    )
                elif owner_kind == "gadget":
                    self._gadgets[owner_name] = replace(
                        self._gadgets[owner_name], config=dict(config)
                    )
        elif op == "delete_entity":
            del self._entities[(entry["kind"], entry["name"])]
        elif op == "register_sensor":
            rec = SensorRecord.from_doc(entry["record"])
            self._sensors[rec.name] = rec
            self._streams[rec.name] = StreamRecord(
                name=rec.name, producer_kind="sensor", producer=rec.name
            )
        elif op == "create_stream":
            srec = StreamRecord.from_doc(entry["record"])
            self._streams[srec.name] = srec
        elif op == "register_gadget":
            grec = GadgetRecord.from_doc(entry["record"])
            self._gadgets[grec.name] = grec
        elif op == "delete_sensor":
            del self._sensors[entry["name"]]
            del self._streams[entry["name"]]
        elif op == "delete_stream":
            del self._streams[entry["name"]]
        elif op == "delete_gadget":
            del self._gadgets[entry["name"]]
        else:
            raise ValueError(f"unknown journal op {op!r}")
