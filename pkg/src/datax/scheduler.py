"""Reconciler, placement, and autoscaling policy.

``reconcile`` is a pure function from (desired, current, nodes) to the
minimal action list that converges running instances to the registry's
desired state; ties are broken lexicographically so identical inputs always
produce identical plans.  ``Autoscaler`` turns windowed drop/occupancy
metrics into per-stream replica targets, one +-1 step per cooldown.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from datax.errors import Unschedulable

VIABLE_STATES = ("starting", "running", "unhealthy")


# --- node liveness ----------------------------------------------------------

@dataclass
class HeartbeatPolicy:
    """Node declared dead after ``missed_limit`` missed heartbeats."""

    interval_s: float = 2.0
    missed_limit: int = 3

    @property
    def dead_after_s(self) -> float:
        return self.interval_s * self.missed_limit


@dataclass
class NodeRecord:
    node_id: str
    address: str
    capacity: int
    last_heartbeat: float = field(default_factory=time.monotonic)


@dataclass(frozen=True)
class NodeView:
    """Placement-time snapshot of one node."""

    node_id: str
    alive: bool
    free: int


class NodeTable:
    """Registered nodes and their liveness, derived from heartbeats."""

    def __init__(self, policy: Optional[HeartbeatPolicy] = None):
        self.policy = policy or HeartbeatPolicy()
        self._lock = threading.Lock()
        self._nodes: dict[str, NodeRecord] = {}

    def register(self, node_id: str, address: str, capacity: int) -> NodeRecord:
        with self._lock:
            rec = NodeRecord(node_id=node_id, address=address, capacity=capacity)
            self._nodes[node_id] = rec
            return rec

    def heartbeat(self, node_id: str, now: Optional[float] = None) -> None:
        with self._lock:
            rec = self._nodes.get(node_id)
            if rec is None:
                raise KeyError(node_id)
            rec.last_heartbeat = time.monotonic() if now is None else now

    def views(
        self, used: dict[str, int], now: Optional[float] = None
    ) -> list[NodeView]:
        now = time.monotonic() if now is None else now
        with self._lock:
            return [
                NodeView(
                    node_id=rec.node_id,
                    alive=(now - rec.last_heartbeat) <= self.policy.dead_after_s,
                    free=rec.capacity - used.get(rec.node_id, 0),
                )
                for rec in self._nodes.values()
            ]

    def list_nodes(self, now: Optional[float] = None) -> list[dict[str, Any]]:
        now = time.monotonic() if now is None else now
        with self._lock:
            return [
                {
                    "node_id": rec.node_id,
                    "address": rec.address,
                    "capacity": rec.capacity,
                    "alive": (now - rec.last_heartbeat) <= self.policy.dead_after_s,
                }
                for rec in sorted(self._nodes.values(), key=lambda r: r.node_id)
            ]


# --- desired / current state ------------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
    """One schedulable unit: the instance group behind a sensor, stream, or
    gadget, with everything needed to launch a replica."""

    name: str
    kind: str  # "sensor" | "stream" | "gadget"
    entity_kind: str
    entity_name: str
    entity_version: int
    executable: str
    config: dict[str, Any]
    inputs: tuple[str, ...]
    output: Optional[str]
    replicas: int
    pin: Optional[str] = None

    @property
    def spec_hash(self) -> str:
        ident = {
            "entity": [self.entity_kind, self.entity_name, self.entity_version],
            "executable": self.executable,
            "config": self.config,
            "inputs": list(self.inputs),
            "output": self.output,
            "pin": self.pin,
        }
        blob = json.dumps(ident, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class InstanceView:
    """Summary of one running (or dead) instance as the reconciler sees it."""

    instance_id: str
    workload: str
    node: str
    state: str
    spec_hash: str


@dataclass(frozen=True)
class LaunchAction:
    workload: str
    node: str


@dataclass(frozen=True)
class StopAction:
    instance_id: str


@dataclass
class ReconcileResult:
    actions: list[Any] = field(default_factory=list)
    conditions: list[dict[str, str]] = field(default_factory=list)


def place(pin: Optional[str], nodes: list[NodeView]) -> str:
    """Choose a node: the pin when set, else the alive node with the most
    free capacity (ties to the lexicographically first node_id)."""
    if pin is not None:
        match = [n for n in nodes if n.node_id == pin]
        if not match:
            raise Unschedulable(pin, f"pinned node {pin!r} is not registered")
        node = match[0]
        if not node.alive:
            raise Unschedulable(pin, f"pinned node {pin!r} is dead")
        if node.free <= 0:
            raise Unschedulable(pin, f"pinned node {pin!r} is at capacity")
        return node.node_id
    candidates = [n for n in nodes if n.alive and n.free > 0]
    if not candidates:
        raise Unschedulable("", "no alive node with free capacity")
    candidates.sort(key=lambda n: (-n.free, n.node_id))
    return candidates[0].node_id


def reconcile(
    desired: dict[str, WorkloadSpec],
    current: list[InstanceView],
    nodes: list[NodeView],
) -> ReconcileResult:
    """Plan the stops and launches that make ``current`` match ``desired``.

    Instances that are dead (failed/stopped), stale (spec hash changed), off
    their pin, or orphaned (workload deleted) are stopped; missing replicas
    are launched on placed nodes.  Unplaceable workloads become conditions
    and produce no actions.
    """
    stops: list[StopAction] = []
    keeps: list[InstanceView] = []
    needs: list[tuple[str, WorkloadSpec, int]] = []
    conditions: list[dict[str, str]] = []

    by_workload: dict[str, list[InstanceView]] = {}
    for inst in current:
        by_workload.setdefault(inst.workload, []).append(inst)

    for workload, insts in sorted(by_workload.items()):
        if workload not in desired:
            stops.extend(StopAction(i.instance_id) for i in insts)

    for workload in sorted(desired):
        spec = desired[workload]
        insts = sorted(
            by_workload.get(workload, ()), key=lambda i: i.instance_id
        )
        viable = []
        for inst in insts:
            stale = (
                inst.state not in VIABLE_STATES
                or inst.spec_hash != spec.spec_hash
                or (spec.pin is not None and inst.node != spec.pin)
            )
            if stale:
                stops.append(StopAction(inst.instance_id))
            else:
                viable.append(inst)
        keeps.extend(viable[: spec.replicas])
        stops.extend(StopAction(i.instance_id) for i in viable[spec.replicas:])
        missing = spec.replicas - min(len(viable), spec.replicas)
        if missing > 0:
            needs.append((workload, spec, missing))

    used: dict[str, int] = {}
    for inst in keeps:
        used[inst.node] = used.get(inst.node, 0) + 1

    launches: list[LaunchAction] = []
    for workload, spec, missing in needs:
        for _ in range(missing):
            # Incoming views carry total capacity; charge kept instances and
            # placements already made in this plan.
            views = [
                NodeView(n.node_id, n.alive, n.free - used.get(n.node_id, 0))
                for n in nodes
            ]
            try:
                node = place(spec.pin, views)
            except Unschedulable as exc:
                conditions.append({"workload": workload, "reason": exc.reason})
                break
            used[node] = used.get(node, 0) + 1
            launches.append(LaunchAction(workload=workload, node=node))

    actions: list[Any] = sorted(stops, key=lambda a: a.instance_id)
    actions += sorted(launches, key=lambda a: (a.workload, a.node))
    return ReconcileResult(actions=actions, conditions=conditions)


# --- autoscaling ------------------------------------------------------------

@dataclass
class AutoscalePolicy:
    """Scale up on sustained drops, down on a quiet, underfilled window."""

    window_s: float = 10.0
    up_threshold_drops_per_s: float = 1.0
    down_threshold_occupancy: float = 0.25
    cooldown_s: float = 30.0
    max_replicas: int = 8


@dataclass(frozen=True)
class MetricsSample:
    """Per-stream totals at one observation instant."""

    t: float
    dropped: int  # cumulative drops across the stream's subscriptions
    buffered: int
    capacity: int


def autoscale_step(
    policy: AutoscalePolicy,
    samples: list[MetricsSample],
    current: int,
    last_change: float,
    now: float,
) -> int:
    """Pure policy decision: the replica target given one metrics window.

    Steps are +-1, bounded to [1, max_replicas], at most one step per
    cooldown, and only once a full window has been observed.
    """
    current = max(1, min(current, policy.max_replicas))
    if now - last_change < policy.cooldown_s:
        return current
    window = [s for s in samples if s.t >= now - policy.window_s]
    if len(window) < 2:
        return current
    span = window[-1].t - window[0].t
    if span + 1e-9 < policy.window_s:
        return current
    drops = window[-1].dropped - window[0].dropped
    rate = drops / span
    occupancies = [
        (s.buffered / s.capacity) if s.capacity > 0 else 0.0 for s in window
    ]
    mean_occ = math.fsum(occupancies) / len(occupancies)
    if rate > policy.up_threshold_drops_per_s:
        return min(current + 1, policy.max_replicas)
    if drops == 0 and mean_occ < policy.down_threshold_occupancy:
        return max(current - 1, 1)
    return current


class Autoscaler:
    """Stateful wrapper: keeps per-stream windows, targets, and cooldowns."""

    def __init__(self, policy: Optional[AutoscalePolicy] = None):
        self.policy = policy or AutoscalePolicy()
        self._lock = threading.Lock()
        self._samples: dict[str, deque[MetricsSample]] = {}
        self._targets: dict[str, int] = {}
        self._last_change: dict[str, float] = {}

    def observe(self, stream: str, sample: MetricsSample) -> None:
        with self._lock:
            window = self._samples.setdefault(stream, deque())
            window.append(sample)
            horizon = sample.t - self.policy.window_s
            while window and window[0].t < horizon:
                window.popleft()

    def target(self, stream: str) -> int:
        with self._lock:
            return self._targets.get(stream, 1)

    def decide(self, stream: str, now: float) -> int:
        with self._lock:
            current = self._targets.get(stream, 1)
            new = autoscale_step(
                self.policy,
                list(self._samples.get(stream, ())),
                current,
                self._last_change.get(stream, -math.inf),
                now,
            )
            if new != current:
                self._targets[stream] = new
                self._last_change[stream] = now
            return new

    def forget(self, stream: str) -> None:
        with self._lock:
            self._samples.pop(stream, None)
            self._targets.pop(stream, None)
            self._last_change.pop(stream, None)

    def known_streams(self) -> list[str]:
        with self._lock:
            return sorted(set(self._samples) | set(self._targets))
