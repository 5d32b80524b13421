"""Sidecar runtime: supervises one user process per instance.

Each launched instance gets a loopback listener socket (address exported as
DATAX_SOCKET), a broker token scoped to its declared streams, and broker
subscriptions in its queue group.  After the SDK connects, the runner always
sends exactly one config frame before any message frame, then bridges
traffic both ways: broker deliveries become message frames, emit frames
become broker publishes (acked per frame), and db_* frames tunnel to the
statestore.  A monitor thread tracks child liveness so a crashing user
process only ever fails its own handle.
"""

from __future__ import annotations

import os
import secrets
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import psutil

from datax.broker import Broker, Subscription
from datax.errors import (
    FrameError,
    HandshakeTimeout,
    NoSuchSubject,
    NotFound,
    SpawnFailed,
    TokenRefused,
)
from datax.frames import FrameConnection
from datax.proc import resolve_command
from datax.registry import EntityRecord
from datax.statestore import StateStore


@dataclass
class RunnerPolicy:
    """Fixed health thresholds, configurable globally."""

    handshake_timeout_s: float = 10.0
    parse_failure_limit: int = 3
    monitor_interval_s: float = 0.5
    ipc_lost_grace_s: float = 5.0
    default_grace_ms: int = 2000


@dataclass(frozen=True)
class InstanceMetrics:
    """Counter snapshot; all counters are monotonic over the instance life.

    ``buffered``/``buffer_capacity`` describe the broker-side input buffers
    and feed the autoscaler's occupancy signal.
    """

    received: int
    dropped: int
    published: int
    cpu_pct: float
    rss_bytes: int
    uptime_ms: int
    buffered: int
    buffer_capacity: int


class InstanceHandle:
    """One supervised child process plus its sidecar state."""

    def __init__(
        self,
        instance_id: str,
        workload: str,
        entity: EntityRecord,
        config: dict[str, Any],
        inputs: tuple[str, ...],
        output: Optional[str],
        node: str,
        spec_hash: str,
        log_dir: Path,
    ):
        self.instance_id = instance_id
        self.workload = workload
        self.entity_kind = entity.kind
        self.entity_name = entity.name
        self.entity_version = entity.version
        self.config = config
        self.inputs = inputs
        self.output = output
        self.node = node
        self.spec_hash = spec_hash
        self.log_dir = log_dir

        self.state = "starting"
        self.failure_reason: Optional[str] = None
        self.proc: Optional[subprocess.Popen] = None
        self.token = None
        self.subs: list[Subscription] = []
        self.conn: Optional[FrameConnection] = None

        self.received = 0
        self.published = 0
        self.parse_failures = 0

        self.started_mono = time.monotonic()
        self.ipc_lost_at: Optional[float] = None
        self.stop_requested = False

        self._lock = threading.RLock()
        self._send_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._ps: Optional[psutil.Process] = None

    def set_state(self, state: str) -> None:
        with self._lock:
            self.state = state

    def send_frame(self, doc: dict[str, Any]) -> None:
        conn = self.conn
        if conn is None:
            raise ConnectionError("no SDK connection")
        with self._send_lock:
            conn.send(doc)

    def wait_state(self, states: tuple[str, ...], timeout: float = 15.0) -> str:
        """Poll until the instance reaches one of ``states`` (tests, e2e)."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.state in states:
                return self.state
            time.sleep(0.02)
        return self.state


class Runner:
    """Launches, bridges, monitors, and stops instances on one node."""

    def __init__(
        self,
        broker: Broker,
        statestore: Optional[StateStore] = None,
        data_dir: Optional[Path] = None,
        policy: Optional[RunnerPolicy] = None,
        node: str = "local",
    ):
        self.broker = broker
        self.statestore = statestore
        self.policy = policy or RunnerPolicy()
        self.node = node
        self.data_dir = Path(data_dir) if data_dir else Path(".datax-instances")
        self._lock = threading.RLock()
        self._instances: dict[str, InstanceHandle] = {}

    # -- lifecycle -----------------------------------------------------------

    def launch_instance(
        self,
        entity: EntityRecord,
        config: dict[str, Any],
        inputs: list[str],
        output: Optional[str],
        node: str = "local",
        workload: Optional[str] = None,
        group: Optional[str] = None,
        spec_hash: str = "",
        instance_id: Optional[str] = None,
    ) -> InstanceHandle:
        workload = workload or output or entity.name
        group = group or workload
        # Ids are path segments in the admin API, so no slashes.
        prefix = workload.replace("/", "-")
        instance_id = instance_id or f"{prefix}-{secrets.token_hex(4)}"
        log_dir = self.data_dir / instance_id
        log_dir.mkdir(parents=True, exist_ok=True)

        handle = InstanceHandle(
            instance_id=instance_id,
            workload=workload,
            entity=entity,
            config=config,
            inputs=tuple(inputs),
            output=output,
            node=node,
            spec_hash=spec_hash,
            log_dir=log_dir,
        )

        try:
            handle.token = self.broker.issue_token(instance_id, output, list(inputs))
        except NoSuchSubject as exc:
            raise TokenRefused(str(exc))
        # Subscribe before the child starts so no delivery gap opens while
        # the SDK connects; frames drain once the pump threads run.
        for stream in inputs:
            handle.subs.append(self.broker.subscribe(handle.token, stream, group))

        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]

        env = dict(os.environ)
        env["DATAX_SOCKET"] = f"127.0.0.1:{port}"
        env["DATAX_INSTANCE_ID"] = instance_id
        env["PYTHONUNBUFFERED"] = "1"

        stdout = open(log_dir / "stdout.log", "ab")
        stderr = open(log_dir / "stderr.log", "ab")
        try:
            argv = resolve_command(entity.executable)
            handle.proc = subprocess.Popen(
                argv, env=env, stdout=stdout, stderr=stderr
            )
        except (OSError, ValueError) as exc:
            stdout.close()
            stderr.close()
            listener.close()
            self._release(handle)
            raise SpawnFailed(entity.executable, str(exc))
        finally:
            stdout.close()
            stderr.close()
        handle._ps = self._psutil_handle(handle.proc.pid)

        with self._lock:
            self._instances[instance_id] = handle

        t = threading.Thread(
            target=self._handshake, args=(handle, listener), daemon=True,
            name=f"handshake-{instance_id}",
        )
        handle._threads.append(t)
        t.start()
        mon = threading.Thread(
            target=self._monitor, args=(handle,), daemon=True,
            name=f"monitor-{instance_id}",
        )
        handle._threads.append(mon)
        mon.start()
        return handle

    @staticmethod
    def _psutil_handle(pid: int) -> Optional[psutil.Process]:
        try:
            return psutil.Process(pid)
        except psutil.Error:
            return None

    def stop_instance(
        self, handle: InstanceHandle, grace_ms: Optional[int] = None
    ) -> None:
        """Polite terminate, forced kill after the grace period. Idempotent."""
        grace_ms = self.policy.default_grace_ms if grace_ms is None else grace_ms
        with handle._lock:
            if handle.state in ("stopped", "failed"):
                self._release(handle)
                return
            handle.stop_requested = True
        proc = handle.proc
        if proc is not None and proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout=grace_ms / 1000.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        self._release(handle)
        handle.set_state("stopped")

    def _release(self, handle: InstanceHandle) -> None:
        """Reclaim broker and socket resources; safe to call repeatedly."""
        for sub in handle.subs:
            self.broker.unsubscribe(sub)
        self.broker.revoke_token(handle.instance_id)
        conn = handle.conn
        if conn is not None:
            conn.close()

    def _fail(self, handle: InstanceHandle, reason: str) -> None:
        with handle._lock:
            if handle.state in ("stopped", "failed") or handle.stop_requested:
                return
            handle.failure_reason = reason
            handle.state = "failed"
        proc = handle.proc
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait()
        self._release(handle)

    def remove(self, instance_id: str) -> None:
        """Drop a terminal handle from the table (logs stay on disk)."""
        with self._lock:
            handle = self._instances.get(instance_id)
            if handle is not None and handle.state in ("stopped", "failed"):
                del self._instances[instance_id]

    def stop_all(self, grace_ms: int = 500) -> None:
        for handle in self.instances():
            self.stop_instance(handle, grace_ms=grace_ms)

    # -- bridging ------------------------------------------------------------

    def _handshake(self, handle: InstanceHandle, listener: socket.socket) -> None:
        listener.settimeout(self.policy.handshake_timeout_s)
        try:
            sock, _ = listener.accept()
        except (socket.timeout, OSError):
            self._fail(handle, "handshake_timeout")
            return
        finally:
            listener.close()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        handle.conn = FrameConnection(sock)
        try:
            handle.send_frame({
                "type": "config",
                "payload": handle.config,
                "inputs": list(handle.inputs),
                "output": handle.output,
            })
        except ConnectionError:
            self._fail(handle, "config_send_failed")
            return
        handle.set_state("running")
        reader = threading.Thread(
            target=self._read_loop, args=(handle,), daemon=True,
            name=f"reader-{handle.instance_id}",
        )
        handle._threads.append(reader)
        reader.start()
        for sub in handle.subs:
            pump = threading.Thread(
                target=self._pump_loop, args=(handle, sub), daemon=True,
                name=f"pump-{handle.instance_id}-{sub.subject}",
            )
            handle._threads.append(pump)
            pump.start()

    def _pump_loop(self, handle: InstanceHandle, sub: Subscription) -> None:
        while handle.state in ("starting", "running", "unhealthy"):
            msg = self.broker.next_message(sub, timeout=0.25)
            if msg is None:
                if sub.closed:
                    return
                continue
            try:
                handle.send_frame({
                    "type": "message",
                    "stream": msg.stream,
                    "payload": msg.payload,
                })
            except ConnectionError:
                return
            with handle._lock:
                handle.received += 1

    def _read_loop(self, handle: InstanceHandle) -> None:
        conn = handle.conn
        assert conn is not None
        while True:
            try:
                doc = conn.recv(timeout=None)
            except FrameError:
                with handle._lock:
                    handle.parse_failures += 1
                    tripped = handle.parse_failures >= self.policy.parse_failure_limit
                if tripped:
                    self._mark_unhealthy(handle, "parse_failures")
                    return
                continue
            except (EOFError, ConnectionError, OSError):
                if not handle.stop_requested and handle.state == "running":
                    self._mark_unhealthy(handle, "ipc_closed")
                return
            with handle._lock:
                handle.parse_failures = 0
            self._dispatch(handle, doc)

    def _mark_unhealthy(self, handle: InstanceHandle, reason: str) -> None:
        with handle._lock:
            if handle.state != "running":
                return
            handle.state = "unhealthy"
            handle.failure_reason = reason
            handle.ipc_lost_at = time.monotonic()

    def _dispatch(self, handle: InstanceHandle, doc: dict[str, Any]) -> None:
        kind = doc["type"]
        try:
            if kind == "emit":
                self._handle_emit(handle, doc)
            elif kind in ("db_put", "db_get", "db_scan", "db_delete"):
                self._handle_db(handle, kind, doc)
            else:
                self._send_error(handle, {"reason": f"unexpected frame type {kind!r}"})
        except ConnectionError:
            pass

    def _handle_emit(self, handle: InstanceHandle, doc: dict[str, Any]) -> None:
        payload = doc.get("payload")
        if handle.output is None:
            self._send_error(handle, {"of": "emit", "reason": "no output stream"})
            return
        try:
            seq = self.broker.publish(handle.token, handle.output, payload)
        except Exception as exc:  # noqa: BLE001 - error goes on the wire
            self._send_error(handle, {"of": "emit", "reason": str(exc)})
            return
        with handle._lock:
            handle.published += 1
        handle.send_frame({"type": "ack", "payload": {"of": "emit", "seq": seq}})

    def _handle_db(self, handle: InstanceHandle, kind: str, doc: dict[str, Any]) -> None:
        payload = doc.get("payload") or {}
        req = payload.get("req")
        if self.statestore is None:
            self._send_error(handle, {"req": req, "reason": "no statestore configured"})
            return
        db = payload.get("db")
        try:
            if kind == "db_put":
                self.statestore.kv_put(db, payload.get("key"), payload.get("value"))
                reply: dict[str, Any] = {"req": req}
            elif kind == "db_get":
                value = self.statestore.kv_get(db, payload.get("key"))
                reply = {"req": req, "found": value is not None, "value": value}
            elif kind == "db_scan":
                items = self.statestore.kv_scan(db, payload.get("prefix", ""))
                reply = {"req": req, "items": [[k, v] for k, v in items]}
            else:
                self.statestore.kv_delete(db, payload.get("key"))
                reply = {"req": req}
        except Exception as exc:  # noqa: BLE001 - error goes on the wire
            self._send_error(handle, {"req": req, "reason": str(exc)})
            return
        handle.send_frame({"type": "ack", "payload": reply})

    def _send_error(self, handle: InstanceHandle, payload: dict[str, Any]) -> None:
        handle.send_frame({"type": "error", "payload": payload})

    # -- monitoring ----------------------------------------------------------

    def _monitor(self, handle: InstanceHandle) -> None:
        while True:
            time.sleep(self.policy.monitor_interval_s)
            with handle._lock:
                state = handle.state
                stop_requested = handle.stop_requested
            if state in ("stopped", "failed") or stop_requested:
                return
            proc = handle.proc
            if proc is not None and proc.poll() is not None:
                self._fail(handle, "child_exited")
                return
            if state == "unhealthy" and handle.ipc_lost_at is not None:
                if time.monotonic() - handle.ipc_lost_at > self.policy.ipc_lost_grace_s:
                    self._fail(handle, "unhealthy_timeout")
                    return

    # -- views ---------------------------------------------------------------

    def get(self, instance_id: str) -> InstanceHandle:
        with self._lock:
            handle = self._instances.get(instance_id)
            if handle is None:
                raise NotFound("instance", instance_id)
            return handle

    def instances(self) -> list[InstanceHandle]:
        with self._lock:
            return sorted(self._instances.values(), key=lambda h: h.instance_id)

    def metrics(self, handle: InstanceHandle) -> InstanceMetrics:
        cpu = 0.0
        rss = 0
        ps = handle._ps
        if ps is not None:
            try:
                cpu = ps.cpu_percent(interval=None)
                rss = ps.memory_info().rss
            except psutil.Error:
                pass
        dropped = sum(s.dropped for s in handle.subs)
        buffered = sum(s.buffered for s in handle.subs)
        capacity = sum(s.capacity for s in handle.subs)
        return InstanceMetrics(
            received=handle.received,
            dropped=dropped,
            published=handle.published,
            cpu_pct=cpu,
            rss_bytes=rss,
            uptime_ms=int((time.monotonic() - handle.started_mono) * 1000),
            buffered=buffered,
            buffer_capacity=capacity,
        )

    def health(self, handle: InstanceHandle) -> str:
        return handle.state

    def logs(self, instance_id: str) -> dict[str, str]:
        handle = self.get(instance_id)
        out: dict[str, str] = {}
        for name in ("stdout", "stderr"):
            path = handle.log_dir / f"{name}.log"
            out[name] = path.read_text(errors="replace") if path.exists() else ""
        return out
