"""Client side of the runner's frame protocol.

A hosted process connects back to its runner over the loopback socket named
in ``DATAX_SOCKET`` and speaks length-prefixed canonical JSON frames: a
4-byte big-endian length followed by the document serialized with sorted
keys and no whitespace.  The runner sends exactly one ``config`` frame
first; after that the process receives ``message`` frames and sends
``emit`` and ``db_*`` frames, each answered by an ``ack`` or ``error``.

This module has no dependency on the platform package.  Any process that
produces the same bytes on the wire is interchangeable with it.
"""

from __future__ import annotations

import copy
import json
import os
import socket
import struct
import time
from collections import deque
from typing import Any, Optional


class DataXError(Exception):
    """Base class for client-side failures."""


class ConnectionLost(DataXError):
    """The runner socket closed or refused while a call was in flight."""


class NoInputs(DataXError):
    """next() was called by an instance with no input streams."""


class NoOutput(DataXError):
    """emit() was called by an instance with no output stream."""


class InvalidPayload(DataXError):
    """The message is not a JSON object with string keys throughout."""


class EmitRefused(DataXError):
    """The runner reported a delivery failure for an emit."""


class DatabaseError(DataXError):
    """The runner reported a failure for a db_* request."""


def _encode(doc: dict[str, Any]) -> bytes:
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def _check_message(value: Any, path: str) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise InvalidPayload(f"non-string key {key!r} at {path}")
            _check_message(item, f"{path}.{key}")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_message(item, f"{path}[{i}]")
    elif not isinstance(value, (str, int, float, bool, type(None))):
        raise InvalidPayload(f"unserializable {type(value).__name__} at {path}")


class DataX:
    """Connection to the hosting runner.

    Intended use is one instance per process, created at startup and driven
    from a single thread.  The constructor blocks until the config frame
    arrives, so ``get_configuration()`` never waits.
    """

    def __init__(self, address: Optional[str] = None):
        addr = address or os.environ.get("DATAX_SOCKET")
        if not addr:
            raise ConnectionLost("DATAX_SOCKET is not set and no address was given")
        host, port = addr.rsplit(":", 1)
        try:
            self._sock = socket.create_connection((host, int(port)))
        except OSError as exc:
            raise ConnectionLost(f"cannot reach runner at {addr}: {exc}") from exc
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.instance_id = os.environ.get("DATAX_INSTANCE_ID", "")
        self._rbuf = bytearray()
        self._held: deque[dict[str, Any]] = deque()
        self._req = 0
        frame = self._read_frame(None)
        if frame.get("type") != "config":
            raise DataXError(f"expected config frame, got {frame.get('type')!r}")
        self._config: dict[str, Any] = frame.get("payload") or {}
        self._inputs: list[str] = list(frame.get("inputs") or [])
        self._output: Optional[str] = frame.get("output")

    # -- introspection -------------------------------------------------------

    def get_configuration(self) -> dict[str, Any]:
        """Validated config for this instance; same content on every call."""
        return copy.deepcopy(self._config)

    @property
    def inputs(self) -> list[str]:
        return list(self._inputs)

    @property
    def output(self) -> Optional[str]:
        return self._output

    # -- streams -------------------------------------------------------------

    def next(self, timeout: Optional[float] = None) -> tuple[str, dict[str, Any]]:
        """Block for the next input message; returns (stream, message).

        Raises NoInputs immediately when the instance has no input streams,
        TimeoutError when ``timeout`` seconds pass without a message, and
        ConnectionLost when the runner goes away.
        """
        if not self._inputs:
            raise NoInputs("this instance has no input streams")
        if self._held:
            frame = self._held.popleft()
            return frame.get("stream"), frame.get("payload")
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            frame = self._read_frame(deadline)
            kind = frame.get("type")
            if kind == "message":
                return frame.get("stream"), frame.get("payload")
            if kind == "error":
                payload = frame.get("payload") or {}
                raise DataXError(str(payload.get("reason", "unspecified error")))
            # A stale ack is harmless; anything else would be a runner bug.

    def emit(self, message: dict[str, Any]) -> int:
        """Publish on the output stream; returns the broker sequence number.

        The message is validated before any bytes are written, so a failed
        emit leaves the connection clean.  Raises NoOutput for instances
        without an output stream and EmitRefused when the broker declined.
        """
        if not isinstance(message, dict):
            raise InvalidPayload(f"message must be a map, got {type(message).__name__}")
        _check_message(message, "$")
        try:
            frame = _encode({"type": "emit", "payload": message})
        except (TypeError, ValueError) as exc:
            raise InvalidPayload(str(exc)) from exc
        self._send(frame)
        reply = self._await_reply(of="emit")
        return reply.get("seq")

    # -- key-value tunnel ----------------------------------------------------

    def db_put(self, db: str, key: str, value: dict[str, Any]) -> None:
        self._db_call("db_put", {"db": db, "key": key, "value": value})

    def db_get(self, db: str, key: str) -> Optional[dict[str, Any]]:
        reply = self._db_call("db_get", {"db": db, "key": key})
        return reply.get("value") if reply.get("found") else None

    def db_scan(self, db: str, prefix: str = "") -> list[tuple[str, dict[str, Any]]]:
        reply = self._db_call("db_scan", {"db": db, "prefix": prefix})
        return [(k, v) for k, v in reply.get("items") or []]

    def db_delete(self, db: str, key: str) -> None:
        self._db_call("db_delete", {"db": db, "key": key})

    def _db_call(self, kind: str, body: dict[str, Any]) -> dict[str, Any]:
        self._req += 1
        self._send(_encode({"type": kind, "payload": {**body, "req": self._req}}))
        return self._await_reply(req=self._req)

    # -- teardown ------------------------------------------------------------

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "DataX":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # -- wire ----------------------------------------------------------------

    def _send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ConnectionLost(f"send failed: {exc}") from exc

    def _await_reply(self, of: Optional[str] = None, req: Optional[int] = None) -> dict[str, Any]:
        """Read until the matching ack or error, holding message frames aside."""
        while True:
            frame = self._read_frame(None)
            kind = frame.get("type")
            if kind == "message":
                self._held.append(frame)
                continue
            payload = frame.get("payload") or {}
            matches = (of is not None and payload.get("of") == of) or (
                req is not None and payload.get("req") == req
            )
            if kind == "ack" and matches:
                return payload
            if kind == "error":
                reason = str(payload.get("reason", "unspecified error"))
                if of == "emit":
                    if reason == "no output stream":
                        raise NoOutput(reason)
                    raise EmitRefused(reason)
                raise DatabaseError(reason)
            # Unmatched acks are stale replies; skip them.

    def _read_frame(self, deadline: Optional[float]) -> dict[str, Any]:
        # Nothing is consumed until the whole frame is buffered, so a
        # timed-out call can be retried without corrupting the framing.
        self._fill(4, deadline)
        (length,) = struct.unpack(">I", bytes(self._rbuf[:4]))
        self._fill(4 + length, deadline)
        body = bytes(self._rbuf[4:4 + length])
        del self._rbuf[:4 + length]
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataXError(f"undecodable frame from runner: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataXError("frame from runner is not a map")
        return doc

    def _fill(self, n: int, deadline: Optional[float]) -> None:
        while len(self._rbuf) < n:
            if deadline is None:
                self._sock.settimeout(None)
            else:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError("no message within the timeout")
                self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("no message within the timeout") from None
            except OSError as exc:
                raise ConnectionLost(f"recv failed: {exc}") from exc
            if not chunk:
                raise ConnectionLost("runner closed the connection")
            self._rbuf.extend(chunk)
