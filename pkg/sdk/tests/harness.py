"""Scripted stand-in for the runner side of the socket, plus transcript replay.

ScriptedRunner plays a fixed half of a conversation so client behavior can
be pinned without a live platform.  run_transcript() replays a recorded
session: the runner's frames are sent verbatim and every frame the client
writes must match the recording byte for byte.
"""

from __future__ import annotations

import json
import socket
import struct
import sys
import threading
import time
from pathlib import Path
from typing import Any, Optional

import pytest

# Keep the client importable when the package is not installed.
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from datax_sdk import DataX, NoOutput

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"
SCRIPTS_DIR = Path(__file__).resolve().parent / "scripts"

TRANSCRIPTS = ("analytics_exchange", "driver_pulse", "actuator_sink", "db_roundtrip")


def canonical(doc: dict[str, Any]) -> bytes:
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def config_frame(
    payload: Optional[dict[str, Any]] = None,
    inputs: Optional[list[str]] = None,
    output: Optional[str] = "out",
) -> dict[str, Any]:
    return {
        "type": "config",
        "payload": payload if payload is not None else {},
        "inputs": inputs if inputs is not None else ["in"],
        "output": output,
    }


class ScriptedRunner:
    """Accepts one connection and walks a step list on a background thread.

    Steps: ("send", doc-or-bytes), ("expect", doc) for document equality,
    ("expect_bytes", bytes) for byte equality, ("sleep", seconds),
    ("close", None).  Mismatches are collected and raised by join().
    """

    def __init__(self, steps: list[tuple[str, Any]]):
        self.steps = steps
        self.errors: list[str] = []
        self._listener = socket.create_server(("127.0.0.1", 0))
        self.address = "127.0.0.1:%d" % self._listener.getsockname()[1]
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        conn, _ = self._listener.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        buf = bytearray()

        def read_exact(n: int) -> bytes:
            while len(buf) < n:
                chunk = conn.recv(65536)
                if not chunk:
                    raise EOFError("client closed mid-script")
                buf.extend(chunk)
            out = bytes(buf[:n])
            del buf[:n]
            return out

        try:
            for op, arg in self.steps:
                if op == "send":
                    conn.sendall(arg if isinstance(arg, (bytes, bytearray)) else canonical(arg))
                elif op == "expect":
                    header = read_exact(4)
                    (length,) = struct.unpack(">I", header)
                    got = json.loads(read_exact(length).decode("utf-8"))
                    if got != arg:
                        self.errors.append(f"expected {arg!r}, got {got!r}")
                elif op == "expect_bytes":
                    got = read_exact(len(arg))
                    if got != arg:
                        self.errors.append(
                            f"byte mismatch: expected {arg.hex()}, got {got.hex()}"
                        )
                elif op == "sleep":
                    time.sleep(arg)
                elif op == "close":
                    conn.close()
                    return
                else:
                    self.errors.append(f"unknown step {op!r}")
        except EOFError as exc:
            self.errors.append(str(exc))
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def join(self, timeout: float = 5.0) -> None:
        self._thread.join(timeout)
        self._listener.close()
        assert not self._thread.is_alive(), "scripted runner still waiting on the client"
        assert not self.errors, "; ".join(self.errors)


def load_transcript(name: str) -> list[dict[str, Any]]:
    doc = json.loads((GOLDEN_DIR / f"{name}.json").read_text())
    assert doc["session"] == name
    return doc["frames"]


def drive_from_docs(client: DataX, frames: list[dict[str, Any]]) -> None:
    """Issue the API calls a recorded session implies, checking results.

    rx message frames become next() calls, tx emit/db frames become the
    matching method call, and each call's result is checked against the
    reply frame that follows in the recording.
    """
    i = 0
    while i < len(frames):
        direction, doc = frames[i]["dir"], frames[i]["doc"]
        kind = doc.get("type")
        if direction == "rx":
            if kind == "message":
                assert client.next(timeout=5.0) == (doc["stream"], doc["payload"])
            i += 1
            continue
        reply = frames[i + 1]["doc"]
        payload = doc.get("payload")
        if kind == "emit":
            if reply["type"] == "error":
                with pytest.raises(NoOutput):
                    client.emit(payload)
            else:
                assert client.emit(payload) == reply["payload"]["seq"]
        elif kind == "db_put":
            assert client.db_put(payload["db"], payload["key"], payload["value"]) is None
        elif kind == "db_get":
            value = client.db_get(payload["db"], payload["key"])
            expected = reply["payload"]["value"] if reply["payload"]["found"] else None
            assert value == expected
        elif kind == "db_scan":
            items = client.db_scan(payload["db"], payload["prefix"])
            assert items == [(k, v) for k, v in reply["payload"]["items"]]
        elif kind == "db_delete":
            assert client.db_delete(payload["db"], payload["key"]) is None
        else:
            raise AssertionError(f"transcript has unexpected tx frame {kind!r}")
        i += 2


def run_transcript(name: str) -> int:
    """Replay one recording; returns the number of byte-checked tx frames."""
    frames = load_transcript(name)
    steps: list[tuple[str, Any]] = []
    for frame in frames:
        data = bytes.fromhex(frame["hex"])
        steps.append(("send", data) if frame["dir"] == "rx" else ("expect_bytes", data))
    server = ScriptedRunner(steps)
    client = DataX(address=server.address)
    try:
        drive_from_docs(client, frames)
    finally:
        client.close()
    server.join()
    return sum(1 for frame in frames if frame["dir"] == "tx")
