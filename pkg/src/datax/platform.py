"""Composition root: registry, broker, statestore, scheduler, runner in one
process, converged by a reconciliation loop.

The loop runs every ``tick_s`` seconds and immediately after any registry
change.  Each tick samples autoscaler metrics, derives desired state purely
from registry contents plus autoscaler targets, plans with the pure
``reconcile`` function, applies stops and launches through the runner, and
garbage-collects broker subjects whose streams are gone.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Union

from datax.broker import Broker
from datax.config import ConfigSchema, validate_config
from datax.errors import (
    DataXError,
    NotFound,
    RunnerError,
    SubjectBusy,
)
from datax.manifest import (
    ENTITY_KIND_BY_MANIFEST,
    ManifestDoc,
    order_documents,
    parse_manifests,
)
from datax.registry import (
    ENTITY_KINDS,
    EntityRecord,
    GadgetRecord,
    MigrationScript,
    Registry,
    SensorRecord,
    StreamRecord,
)
from datax.runner import Runner, RunnerPolicy
from datax.scheduler import (
    Autoscaler,
    AutoscalePolicy,
    HeartbeatPolicy,
    InstanceView,
    LaunchAction,
    MetricsSample,
    NodeTable,
    StopAction,
    WorkloadSpec,
    reconcile,
)
from datax.statestore import StateStore

log = logging.getLogger("datax.platform")

LOCAL_NODE = "local"

# URL/CLI kind tokens -> canonical kind name.
_KIND_TOKENS = {
    "driver": "driver",
    "analytics_unit": "analytics_unit",
    "analyticsunit": "analytics_unit",
    "au": "analytics_unit",
    "actuator": "actuator",
    "sensor": "sensor",
    "stream": "stream",
    "gadget": "gadget",
    "database": "database",
    "db": "database",
}


def normalize_kind(token: str) -> str:
    """Accepts manifest kinds, CLI nouns, and URL segments."""
    key = token.strip().lower().replace("-", "_")
    if key.endswith("s") and key not in _KIND_TOKENS:
        key = key[:-1]
    kind = _KIND_TOKENS.get(key)
    if kind is None:
        raise NotFound("kind", token)
    return kind


class Platform:
    """Everything needed to run applications on one host."""

    def __init__(
        self,
        data_dir: Union[str, Path],
        tick_s: float = 1.0,
        node_capacity: int = 64,
        journal: bool = True,
        runner_policy: Optional[RunnerPolicy] = None,
        autoscale_policy: Optional[AutoscalePolicy] = None,
        heartbeat_policy: Optional[HeartbeatPolicy] = None,
        default_buffer_capacity: int = 64,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.tick_s = tick_s

        journal_path = self.data_dir / "registry.jsonl" if journal else None
        self.registry = Registry(journal_path=journal_path)
        self.broker = Broker(default_capacity=default_buffer_capacity)
        self.statestore = StateStore(
            self.data_dir / "state", owner_check=self._owner_exists
        )
        self.nodes = NodeTable(policy=heartbeat_policy)
        self.runner = Runner(
            self.broker,
            statestore=self.statestore,
            data_dir=self.data_dir / "instances",
            policy=runner_policy,
            node=LOCAL_NODE,
        )
        self.autoscaler = Autoscaler(policy=autoscale_policy)

        self.conditions: list[dict[str, str]] = []
        self._wake = threading.Event()
        self._halt = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._tick_lock = threading.Lock()

        self.nodes.register(LOCAL_NODE, "127.0.0.1:0", node_capacity)
        # Journal replay bypasses listeners; sync subjects for loaded streams.
        for stream in self.registry.list_streams():
            if not self.broker.has_subject(stream.name):
                self.broker.create_subject(stream.name)
        self.registry.add_listener(self._on_registry_op)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Platform":
        if self._thread is None:
            self._halt.clear()
            self._thread = threading.Thread(
                target=self._loop, daemon=True, name="reconciler"
            )
            self._thread.start()
        return self

    def stop(self) -> None:
        self._halt.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
            self._thread = None
        self.runner.stop_all()
        self.statestore.close()
        self.registry.close()

    def __enter__(self) -> "Platform":
        return self.start()

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()

    def _loop(self) -> None:
        while not self._halt.is_set():
            try:
                self.tick()
            except Exception:
                log.exception("reconcile tick failed")
            self._wake.wait(timeout=self.tick_s)
            self._wake.clear()

    # -- registry wiring -----------------------------------------------------

    def _owner_exists(self, owner: str) -> bool:
        if any(
            e.name == owner for e in self.registry.list_entities()
        ):
            return True
        return any(s.name == owner for s in self.registry.list_streams())

    def _on_registry_op(self, entry: dict[str, Any]) -> None:
        op = entry["op"]
        if op == "register_sensor" or op == "create_stream":
            name = entry["record"]["name"]
            if not self.broker.has_subject(name):
                self.broker.create_subject(name)
        elif op in ("delete_entity", "delete_sensor", "delete_stream"):
            # Databases live and die with their owner.
            self.statestore.delete_owned(entry["name"])
        self._wake.set()

    # -- desired state and reconciliation ------------------------------------

    def desired_state(self) -> dict[str, WorkloadSpec]:
        desired: dict[str, WorkloadSpec] = {}
        for stream in self.registry.list_streams():
            key = f"stream/{stream.name}"
            if stream.producer_kind == "sensor":
                sensor = self.registry.get_sensor(stream.name)
                driver = self.registry.get_entity("driver", sensor.driver)
                desired[key] = WorkloadSpec(
                    name=key,
                    kind="sensor",
                    entity_kind="driver",
                    entity_name=driver.name,
                    entity_version=driver.version,
                    executable=driver.executable,
                    config=self._normalized(driver.schema, sensor.config),
                    inputs=(),
                    output=stream.name,
                    replicas=1,
                    pin=sensor.node_pin,
                )
            else:
                au = self.registry.get_entity("analytics_unit", stream.producer)
                if stream.replicas == "auto":
                    replicas = self.autoscaler.target(stream.name)
                else:
                    replicas = int(stream.replicas)
                desired[key] = WorkloadSpec(
                    name=key,
                    kind="stream",
                    entity_kind="analytics_unit",
                    entity_name=au.name,
                    entity_version=au.version,
                    executable=au.executable,
                    config=self._normalized(au.schema, stream.au_config),
                    inputs=stream.inputs,
                    output=stream.name,
                    replicas=replicas,
                    pin=None,
                )
        for gadget in self.registry.list_gadgets():
            actuator = self.registry.get_entity("actuator", gadget.actuator)
            key = f"gadget/{gadget.name}"
            desired[key] = WorkloadSpec(
                name=key,
                kind="gadget",
                entity_kind="actuator",
                entity_name=actuator.name,
                entity_version=actuator.version,
                executable=actuator.executable,
                config=self._normalized(actuator.schema, gadget.config),
                inputs=gadget.inputs,
                output=None,
                replicas=1,
                pin=gadget.node_pin,
            )
        return desired

    @staticmethod
    def _normalized(schema: Optional[ConfigSchema], config: dict[str, Any]) -> dict:
        report = validate_config(schema, config)
        # Admission already validated; a None here would mean registry drift.
        return report.normalized if report.normalized is not None else dict(config)

    def tick(self) -> int:
        """One reconcile pass; returns the number of actions applied."""
        with self._tick_lock:
            return self._tick()

    def _tick(self) -> int:
        now = time.monotonic()
        self.nodes.heartbeat(LOCAL_NODE, now=now)
        self._sample_autoscaler(now)

        desired = self.desired_state()
        current = [
            InstanceView(
                instance_id=h.instance_id,
                workload=h.workload,
                node=h.node,
                state=h.state,
                spec_hash=h.spec_hash,
            )
            for h in self.runner.instances()
        ]
        views = self.nodes.views(used={}, now=now)
        result = reconcile(desired, current, views)
        conditions = list(result.conditions)

        for action in result.actions:
            if isinstance(action, StopAction):
                try:
                    handle = self.runner.get(action.instance_id)
                except NotFound:
                    continue
                self.runner.stop_instance(handle)
                self.runner.remove(action.instance_id)
            elif isinstance(action, LaunchAction):
                spec = desired[action.workload]
                try:
                    self._launch(spec, action.node)
                except RunnerError as exc:
                    conditions.append(
                        {"workload": spec.name, "reason": str(exc)}
                    )
        self._gc_subjects()
        self.conditions = conditions
        return len(result.actions)

    def _launch(self, spec: WorkloadSpec, node: str) -> None:
        entity = EntityRecord(
            name=spec.entity_name,
            kind=spec.entity_kind,
            executable=spec.executable,
            schema=None,
            version=spec.entity_version,
        )
        self.runner.launch_instance(
            entity=entity,
            config=spec.config,
            inputs=list(spec.inputs),
            output=spec.output,
            node=node,
            workload=spec.name,
            group=spec.name,
            spec_hash=spec.spec_hash,
        )

    def _sample_autoscaler(self, now: float) -> None:
        auto = {
            s.name for s in self.registry.list_streams()
            if s.producer_kind == "analytics_unit" and s.replicas == "auto"
        }
        for stream in auto:
            dropped = buffered = capacity = 0
            for h in self.runner.instances():
                if h.workload != f"stream/{stream}":
                    continue
                m = self.runner.metrics(h)
                dropped += m.dropped
                buffered += m.buffered
                capacity += m.buffer_capacity
            self.autoscaler.observe(
                stream,
                MetricsSample(
                    t=now, dropped=dropped, buffered=buffered, capacity=capacity
                ),
            )
            self.autoscaler.decide(stream, now=now)
        for stream in list(self.autoscaler.known_streams()):
            if stream not in auto:
                self.autoscaler.forget(stream)

    def _gc_subjects(self) -> None:
        live_streams = {s.name for s in self.registry.list_streams()}
        for subject in self.broker.subject_names():
            if subject in live_streams:
                continue
            if self.broker.subject_live_subscriptions(subject) == 0:
                try:
                    self.broker.destroy_subject(subject)
                except SubjectBusy:
                    pass  # raced with a new subscription; retry next tick

    def converged(self) -> bool:
        """True when every desired replica runs and nothing extra does."""
        desired = self.desired_state()
        counts: dict[str, int] = {}
        for h in self.runner.instances():
            if h.state != "running":
                return False
            counts[h.workload] = counts.get(h.workload, 0) + 1
        return counts == {k: s.replicas for k, s in desired.items() if s.replicas}

    def wait_converged(self, timeout: float = 60.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.converged():
                return True
            time.sleep(0.05)
        return self.converged()

    # -- declarative apply ---------------------------------------------------

    def apply_text(self, text: str) -> dict[str, Any]:
        return self.apply_documents(parse_manifests(text))

    def apply_documents(self, docs: list[ManifestDoc]) -> dict[str, Any]:
        """Route documents in dependency order; report one entry per doc.

        A failing document never rolls back earlier successes; the report
        makes partiality explicit.
        """
        results: dict[int, dict[str, Any]] = {}
        for doc in order_documents(docs):
            entry: dict[str, Any] = {"kind": doc.kind, "name": doc.name}
            try:
                entry["action"] = self._apply_doc(doc)
            except DataXError as exc:
                entry["action"] = "error"
                entry["error"] = {
                    "type": type(exc).__name__,
                    "message": str(exc),
                    "details": _plain(exc.details),
                }
            except ValueError as exc:
                entry["action"] = "error"
                entry["error"] = {
                    "type": "InvalidDocument", "message": str(exc), "details": {},
                }
            results[doc.index] = entry
        ordered = [results[i] for i in sorted(results)]
        counts: dict[str, int] = {}
        for entry in ordered:
            counts[entry["action"]] = counts.get(entry["action"], 0) + 1
        return {"documents": ordered, "counts": counts}

    def _apply_doc(self, doc: ManifestDoc) -> str:
        if doc.kind in ENTITY_KIND_BY_MANIFEST:
            return self._apply_entity(doc)
        if doc.kind == "Sensor":
            record = SensorRecord(
                name=doc.name,
                driver=doc.spec["driver"],
                config=dict(doc.spec.get("config") or {}),
                node_pin=doc.spec.get("node_pin"),
            )
            return self._apply_simple(
                record, self._existing_sensor, self.registry.register_sensor
            )
        if doc.kind == "Stream":
            record = StreamRecord(
                name=doc.name,
                producer_kind="analytics_unit",
                producer=doc.spec["analytics_unit"],
                inputs=tuple(doc.spec.get("inputs") or ()),
                au_config=dict(doc.spec.get("config") or {}),
                replicas=doc.spec.get("replicas", "auto"),
            )
            return self._apply_simple(
                record, self._existing_stream, self.registry.create_stream
            )
        if doc.kind == "Gadget":
            record = GadgetRecord(
                name=doc.name,
                actuator=doc.spec["actuator"],
                inputs=tuple(doc.spec.get("inputs") or ()),
                config=dict(doc.spec.get("config") or {}),
                node_pin=doc.spec.get("node_pin"),
            )
            return self._apply_simple(
                record, self._existing_gadget, self.registry.register_gadget
            )
        # Database
        owner = doc.spec["owner"]
        try:
            existing = self.statestore.get_database(doc.name)
        except NotFound:
            self.statestore.create_database(doc.name, owner)
            return "created"
        if existing.owner == owner:
            return "unchanged"
        raise DataXError(
            f"database {doc.name!r} exists with owner {existing.owner!r}; "
            "re-owning requires delete and re-create"
        )

    def _apply_entity(self, doc: ManifestDoc) -> str:
        kind = ENTITY_KIND_BY_MANIFEST[doc.kind]
        schema_doc = doc.spec.get("schema")
        schema = ConfigSchema.from_doc(schema_doc) if schema_doc is not None else None
        new = EntityRecord(
            name=doc.name, kind=kind,
            executable=doc.spec["executable"], schema=schema,
        )
        try:
            existing = self.registry.get_entity(kind, doc.name)
        except NotFound:
            self.registry.register_entity(new)
            return "created"
        same_schema = (
            (existing.schema.to_doc() if existing.schema else None)
            == (schema.to_doc() if schema else None)
        )
        if existing.executable == new.executable and same_schema:
            return "unchanged"
        migration = None
        if doc.spec.get("migration"):
            migration = MigrationScript(doc.spec["migration"])
        self.registry.upgrade_entity(doc.name, kind, new, migration)
        return "upgraded"

    def _existing_sensor(self, name: str) -> Optional[dict[str, Any]]:
        try:
            return self.registry.get_sensor(name).to_doc()
        except NotFound:
            return None

    def _existing_stream(self, name: str) -> Optional[dict[str, Any]]:
        try:
            return self.registry.get_stream(name).to_doc()
        except NotFound:
            return None

    def _existing_gadget(self, name: str) -> Optional[dict[str, Any]]:
        try:
            return self.registry.get_gadget(name).to_doc()
        except NotFound:
            return None

    @staticmethod
    def _apply_simple(record: Any, lookup: Any, create: Any) -> str:
        existing_doc = lookup(record.name)
        if existing_doc is None:
            create(record)
            return "created"
        if existing_doc == record.to_doc():
            return "unchanged"
        raise DataXError(
            f"{type(record).__name__} {record.name!r} exists with a different "
            "spec; in-place update is not supported, delete and re-create"
        )

    # -- admin views and deletes ---------------------------------------------

    def resource_list(self, kind_token: str) -> list[dict[str, Any]]:
        kind = normalize_kind(kind_token)
        if kind in ENTITY_KINDS:
            return [r.to_doc() for r in self.registry.list_entities(kind)]
        if kind == "sensor":
            return [r.to_doc() for r in self.registry.list_sensors()]
        if kind == "stream":
            return [self._stream_doc(s) for s in self.registry.list_streams()]
        if kind == "gadget":
            out = []
            for g in self.registry.list_gadgets():
                doc = g.to_doc()
                doc["instances"] = self._instance_states(f"gadget/{g.name}")
                out.append(doc)
            return out
        return [r.to_doc() for r in self.statestore.list_databases()]

    def _stream_doc(self, stream: StreamRecord) -> dict[str, Any]:
        doc = stream.to_doc()
        doc["instances"] = self._instance_states(f"stream/{stream.name}")
        return doc

    def _instance_states(self, workload: str) -> list[dict[str, str]]:
        return [
            {"id": h.instance_id, "state": h.state, "node": h.node}
            for h in self.runner.instances()
            if h.workload == workload
        ]

    def resource_get(self, kind_token: str, name: str) -> dict[str, Any]:
        kind = normalize_kind(kind_token)
        if kind in ENTITY_KINDS:
            return self.registry.get_entity(kind, name).to_doc()
        if kind == "sensor":
            return self.registry.get_sensor(name).to_doc()
        if kind == "stream":
            return self._stream_doc(self.registry.get_stream(name))
        if kind == "gadget":
            return self.registry.get_gadget(name).to_doc()
        return self.statestore.get_database(name).to_doc()

    def resource_delete(self, kind_token: str, name: str) -> None:
        kind = normalize_kind(kind_token)
        if kind in ENTITY_KINDS:
            self.registry.delete_entity(name, kind)
        elif kind == "sensor":
            self.registry.delete_sensor(name)
        elif kind == "stream":
            self.registry.delete_stream(name)
        elif kind == "gadget":
            self.registry.delete_gadget(name)
        else:
            self.statestore.delete_database(name)

    def describe(self, name: str) -> dict[str, Any]:
        """Detail view resolved across kinds: streams first, then the rest."""
        try:
            stream = self.registry.get_stream(name)
        except NotFound:
            stream = None
        if stream is not None:
            detail: dict[str, Any] = {"kind": "stream", "record": stream.to_doc()}
            if stream.producer_kind == "sensor":
                detail["sensor"] = self.registry.get_sensor(name).to_doc()
            detail["dependents"] = self.registry.dependents(name)
            detail["instances"] = self._instance_states(f"stream/{name}")
            detail["metrics"] = self.stream_metrics(name)["totals"]
            return detail
        for kind in ENTITY_KINDS:
            try:
                entity = self.registry.get_entity(kind, name)
            except NotFound:
                continue
            return {"kind": kind, "record": entity.to_doc()}
        try:
            gadget = self.registry.get_gadget(name)
        except NotFound:
            gadget = None
        if gadget is not None:
            return {
                "kind": "gadget",
                "record": gadget.to_doc(),
                "instances": self._instance_states(f"gadget/{name}"),
            }
        return {
            "kind": "database",
            "record": self.statestore.get_database(name).to_doc(),
        }

    def stream_metrics(self, name: str) -> dict[str, Any]:
        self.registry.get_stream(name)  # NotFound surfaces here
        per_instance = []
        totals = {
            "received": 0, "dropped": 0, "published": 0,
            "buffered": 0, "buffer_capacity": 0,
        }
        for h in self.runner.instances():
            if h.workload != f"stream/{name}":
                continue
            m = self.runner.metrics(h)
            per_instance.append({"id": h.instance_id, **asdict(m)})
            for key in totals:
                totals[key] += getattr(m, key)
        return {"stream": name, "instances": per_instance, "totals": totals}

    def instances_doc(self) -> list[dict[str, Any]]:
        out = []
        for h in self.runner.instances():
            out.append({
                "id": h.instance_id,
                "workload": h.workload,
                "entity": h.entity_name,
                "entity_kind": h.entity_kind,
                "version": h.entity_version,
                "node": h.node,
                "state": h.state,
            })
        return out

    def instance_metrics(self, instance_id: str) -> dict[str, Any]:
        handle = self.runner.get(instance_id)
        return asdict(self.runner.metrics(handle))

    def instance_health(self, instance_id: str) -> dict[str, str]:
        handle = self.runner.get(instance_id)
        return {"id": instance_id, "state": self.runner.health(handle)}

    def instance_logs(self, instance_id: str) -> dict[str, str]:
        return self.runner.logs(instance_id)

    def register_node(self, node_id: str, address: str, capacity: int) -> None:
        self.nodes.register(node_id, address, capacity)

    def node_heartbeat(self, node_id: str) -> None:
        self.nodes.heartbeat(node_id)

    def nodes_doc(self) -> list[dict[str, Any]]:
        return self.nodes.list_nodes()

    def conditions_doc(self) -> list[dict[str, str]]:
        return list(self.conditions)


def _plain(details: dict[str, Any]) -> dict[str, Any]:
    """Details restricted to JSON-representable values."""
    out = {}
    for key, value in details.items():
        if isinstance(value, (str, int, float, bool, type(None), list, dict)):
            out[key] = value
        else:
            out[key] = str(value)
    return out
